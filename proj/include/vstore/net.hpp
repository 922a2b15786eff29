#pragma once

// TCP transport and server: the same frames the simulator switches in memory,
// carried over sockets. One listening socket per node; one thread per
// accepted connection; pooled client connections; a dedicated per-node event
// connection on the client for subscription pushes (EVENT frames never
// interleave with request/response traffic that way).

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "handler.hpp"
#include "transport.hpp"
#include "wire.hpp"
#include "workload.hpp"

namespace vstore {

namespace net_detail {

constexpr std::size_t kMaxFrameBytes = 64ull << 20;

// "host:port" with a numeric IPv4 host ("localhost" accepted as loopback).
inline bool parse_addr(const std::string& addr, sockaddr_in& out) {
  auto colon = addr.rfind(':');
  if (colon == std::string::npos) return false;
  std::string host = addr.substr(0, colon);
  std::string port = addr.substr(colon + 1);
  if (host.empty() || host == "localhost") host = "127.0.0.1";
  if (host == "*") host = "0.0.0.0";
  char* end = nullptr;
  long p = std::strtol(port.c_str(), &end, 10);
  if (end == nullptr || *end != '\0' || p < 0 || p > 65535) return false;
  std::memset(&out, 0, sizeof out);
  out.sin_family = AF_INET;
  out.sin_port = htons(static_cast<std::uint16_t>(p));
  return inet_pton(AF_INET, host.c_str(), &out.sin_addr) == 1;
}

inline void set_timeout(int fd, int ms) {
  timeval tv{};
  tv.tv_sec = ms / 1000;
  tv.tv_usec = (ms % 1000) * 1000;
  setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

inline bool send_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    ssize_t sent = ::send(fd, data, n, MSG_NOSIGNAL);
    if (sent <= 0) {
      if (sent < 0 && errno == EINTR) continue;
      return false;
    }
    data += sent;
    n -= static_cast<std::size_t>(sent);
  }
  return true;
}

inline bool send_frame(int fd, const wire::Frame& frame) {
  std::string bytes = wire::encode_frame(frame);
  return send_all(fd, bytes.data(), bytes.size());
}

enum class RecvStatus { kOk, kClosed, kTimeout, kError };

// Reads exactly n bytes. A timeout before the FIRST byte reports kTimeout;
// mid-message timeouts count as errors (the stream is out of sync).
inline RecvStatus recv_exact(int fd, char* out, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    ssize_t r = ::recv(fd, out + got, n - got, 0);
    if (r == 0) return got == 0 ? RecvStatus::kClosed : RecvStatus::kError;
    if (r < 0) {
      if (errno == EINTR) continue;
      if ((errno == EAGAIN || errno == EWOULDBLOCK) && got == 0)
        return RecvStatus::kTimeout;
      return RecvStatus::kError;
    }
    got += static_cast<std::size_t>(r);
  }
  return RecvStatus::kOk;
}

inline RecvStatus recv_frame(int fd, wire::Frame& out) {
  char head[4];
  RecvStatus st = recv_exact(fd, head, 4);
  if (st != RecvStatus::kOk) return st;
  std::uint32_t len = (static_cast<std::uint32_t>(static_cast<unsigned char>(head[0])) << 24) |
                      (static_cast<std::uint32_t>(static_cast<unsigned char>(head[1])) << 16) |
                      (static_cast<std::uint32_t>(static_cast<unsigned char>(head[2])) << 8) |
                      static_cast<std::uint32_t>(static_cast<unsigned char>(head[3]));
  if (len < 1 || len > kMaxFrameBytes) return RecvStatus::kError;
  std::string body(len, '\0');
  st = recv_exact(fd, body.data(), len);
  if (st == RecvStatus::kTimeout) return RecvStatus::kError;  // mid-message
  if (st != RecvStatus::kOk) return st;
  out.opcode = static_cast<std::uint8_t>(body[0]);
  out.body.assign(body, 1, len - 1);
  return RecvStatus::kOk;
}

// Nonblocking connect with a deadline, then back to blocking mode.
inline int connect_to(const std::string& addr, int timeout_ms) {
  sockaddr_in sa{};
  if (!parse_addr(addr, sa)) return -1;
  int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_NONBLOCK, 0);
  if (fd < 0) return -1;
  int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa);
  if (rc != 0) {
    if (errno != EINPROGRESS) {
      ::close(fd);
      return -1;
    }
    pollfd pf{fd, POLLOUT, 0};
    if (::poll(&pf, 1, timeout_ms) != 1) {
      ::close(fd);
      return -1;
    }
    int err = 0;
    socklen_t len = sizeof err;
    if (getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) != 0 || err != 0) {
      ::close(fd);
      return -1;
    }
  }
  int flags = fcntl(fd, F_GETFL, 0);
  fcntl(fd, F_SETFL, flags & ~O_NONBLOCK);
  int one = 1;
  setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  set_timeout(fd, timeout_ms);
  return fd;
}

}  // namespace net_detail

// --------------------------------------------------------------- TcpTransport

// Client-side transport over sockets. call() uses a small pool of blocking
// connections per node; subscribe() keeps one long-lived connection per node
// whose reader thread dispatches EVENT frames to the registered sinks.
class TcpTransport : public Transport {
 public:
  struct Options {
    int timeout_ms = 1000;
  };

  explicit TcpTransport(std::map<NodeId, std::string> addrs)
      : TcpTransport(std::move(addrs), Options()) {}
  TcpTransport(std::map<NodeId, std::string> addrs, Options opt)
      : addrs_(std::move(addrs)), opt_(opt) {}

  ~TcpTransport() override {
    {
      std::lock_guard lock(mu_);
      closing_ = true;
      for (auto& [node, fds] : pool_)
        for (int fd : fds) ::close(fd);
      pool_.clear();
    }
    std::vector<EventChannel*> channels;
    {
      std::lock_guard lock(mu_);
      for (auto& [node, ch] : events_) channels.push_back(ch.get());
    }
    for (EventChannel* ch : channels) {
      {
        std::lock_guard lock(ch->mu);
        ch->closing = true;
        if (ch->fd >= 0) ::shutdown(ch->fd, SHUT_RDWR);
      }
      ch->cv.notify_all();
      if (ch->reader.joinable()) ch->reader.join();
      if (ch->fd >= 0) ::close(ch->fd);
    }
  }

  std::optional<wire::Frame> call(NodeId node, const wire::Frame& request) override {
    int fd = lease(node);
    if (fd < 0) return std::nullopt;
    if (!net_detail::send_frame(fd, request)) {
      ::close(fd);
      return std::nullopt;
    }
    wire::Frame reply;
    if (net_detail::recv_frame(fd, reply) != net_detail::RecvStatus::kOk) {
      ::close(fd);
      return std::nullopt;
    }
    release(node, fd);
    return reply;
  }

  Result<std::uint64_t> subscribe(NodeId node, std::string_view user,
                                  std::string_view key, Broker::Sink sink) override {
    EventChannel* ch = channel(node);
    if (ch == nullptr)
      return {ErrorCode::kIOFailure,
              "node " + std::to_string(node) + " unreachable for subscription"};
    std::string rest;
    put_lp(rest, key);
    wire::Frame req = wire::request(wire::kSubscribe, user, rest);

    std::unique_lock lock(ch->mu);
    if (ch->closing) return {ErrorCode::kIOFailure, "transport shutting down"};
    ch->response.reset();
    if (!net_detail::send_frame(ch->fd, req))
      return {ErrorCode::kIOFailure, "subscription request not sent"};
    bool got = ch->cv.wait_for(lock, std::chrono::milliseconds(opt_.timeout_ms * 4),
                               [&] { return ch->response.has_value() || ch->closing; });
    if (!got || !ch->response)
      return {ErrorCode::kIOFailure, "no reply to the subscription request"};
    wire::Reply reply = wire::parse_reply(*ch->response);
    ch->response.reset();
    if (reply.status != Status::kSuccess)
      return {reply.code == ErrorCode::kNone ? ErrorCode::kIOFailure : reply.code,
              reply.message.empty() ? "subscription refused" : reply.message};
    ByteReader in(reply.payload);
    std::uint64_t id = in.read_u64();
    ch->sinks.emplace(std::string(key), std::move(sink));
    // Events that raced ahead of this registration can now be delivered.
    deliver_pending(*ch);
    return id;
  }

 private:
  struct EventChannel {
    int fd = -1;
    std::thread reader;
    std::mutex mu;
    std::condition_variable cv;
    std::optional<wire::Frame> response;
    std::multimap<std::string, Broker::Sink> sinks;
    std::deque<Notification> pending;  // undeliverable so far; retried in order
    bool closing = false;
  };

  int lease(NodeId node) {
    {
      std::lock_guard lock(mu_);
      if (closing_) return -1;
      auto it = pool_.find(node);
      if (it != pool_.end() && !it->second.empty()) {
        int fd = it->second.back();
        it->second.pop_back();
        return fd;
      }
    }
    auto addr = addrs_.find(node);
    if (addr == addrs_.end()) return -1;
    return net_detail::connect_to(addr->second, opt_.timeout_ms);
  }

  void release(NodeId node, int fd) {
    std::lock_guard lock(mu_);
    if (closing_ || pool_[node].size() >= 4) {
      ::close(fd);
      return;
    }
    pool_[node].push_back(fd);
  }

  EventChannel* channel(NodeId node) {
    std::unique_lock lock(mu_);
    auto it = events_.find(node);
    if (it != events_.end()) return it->second.get();
    auto addr = addrs_.find(node);
    if (addr == addrs_.end()) return nullptr;
    lock.unlock();
    int fd = net_detail::connect_to(addr->second, opt_.timeout_ms);
    if (fd < 0) return nullptr;
    lock.lock();
    it = events_.find(node);
    if (it != events_.end()) {  // lost the race; keep the first channel
      ::close(fd);
      return it->second.get();
    }
    auto ch = std::make_unique<EventChannel>();
    ch->fd = fd;
    EventChannel* raw = ch.get();
    raw->reader = std::thread([raw] { read_events(*raw); });
    events_[node] = std::move(ch);
    return raw;
  }

  static void read_events(EventChannel& ch) {
    for (;;) {
      wire::Frame frame;
      auto st = net_detail::recv_frame(ch.fd, frame);
      std::unique_lock lock(ch.mu);
      if (ch.closing) return;
      if (st == net_detail::RecvStatus::kTimeout) continue;
      if (st != net_detail::RecvStatus::kOk) return;  // channel gone
      if (frame.opcode == wire::kEvent) {
        try {
          ByteReader in(frame.body);
          Notification n;
          n.key = std::string(in.read_lp());
          n.version = decode_version(in);
          ch.pending.push_back(std::move(n));
        } catch (const std::out_of_range&) {
          // Malformed push; drop it.
        }
        deliver_pending(ch);
      } else {
        ch.response = std::move(frame);
        ch.cv.notify_all();
      }
    }
  }

  // Hand queued events to their sinks, in arrival order per key. Events whose
  // key has no sink yet stay queued (a push can race the subscribe reply).
  static void deliver_pending(EventChannel& ch) {
    std::deque<Notification> keep;
    while (!ch.pending.empty()) {
      Notification n = std::move(ch.pending.front());
      ch.pending.pop_front();
      auto [from, to] = ch.sinks.equal_range(n.key);
      if (from == to) {
        keep.push_back(std::move(n));
        continue;
      }
      for (auto it = from; it != to; ++it)
        if (!it->second(n)) keep.push_back(n);  // sink said retry later
    }
    ch.pending = std::move(keep);
  }

  std::map<NodeId, std::string> addrs_;
  Options opt_;
  std::mutex mu_;
  bool closing_ = false;
  std::map<NodeId, std::vector<int>> pool_;
  std::map<NodeId, std::unique_ptr<EventChannel>> events_;
};

// ------------------------------------------------------------------ TcpServer

// Serves one NodeServer over a listening socket. Every accepted connection
// gets its own thread; SUBSCRIBE requests register a broker sink that pushes
// EVENT frames back down the same connection. A pump thread drains the broker
// so undelivered notifications are retried until the subscriber takes them.
class TcpServer {
 public:
  TcpServer(NodeServer& node, const std::string& listen_addr)
      : node_(node) {
    sockaddr_in sa{};
    if (!net_detail::parse_addr(listen_addr, sa)) return;
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) return;
    int one = 1;
    setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0 ||
        ::listen(listen_fd_, 64) != 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      return;
    }
    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    if (getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len) == 0)
      port_ = ntohs(bound.sin_port);
    accept_thread_ = std::thread([this] { accept_loop(); });
    pump_thread_ = std::thread([this] { pump_loop(); });
  }

  ~TcpServer() { stop(); }

  bool listening() const { return listen_fd_ >= 0; }
  std::uint16_t port() const { return port_; }

  void stop() {
    bool expected = false;
    if (!stopping_.compare_exchange_strong(expected, true)) return;
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    if (accept_thread_.joinable()) accept_thread_.join();
    if (pump_thread_.joinable()) pump_thread_.join();
    std::vector<std::shared_ptr<Conn>> conns;
    {
      std::lock_guard lock(mu_);
      conns = conns_;
    }
    for (auto& conn : conns) {
      {
        std::lock_guard lock(conn->mu);
        conn->alive = false;
        ::shutdown(conn->fd, SHUT_RDWR);
      }
    }
    for (auto& thread : conn_threads_)
      if (thread.joinable()) thread.join();
    for (auto& conn : conns) ::close(conn->fd);
    if (listen_fd_ >= 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
    }
  }

 private:
  // Shared with broker sinks, which outlive the connection thread: the fd is
  // only closed at server stop, after `alive` has been cleared.
  struct Conn {
    int fd = -1;
    std::mutex mu;  // serializes whole frames (replies vs. event pushes)
    bool alive = true;
  };

  void accept_loop() {
    for (;;) {
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        return;  // listener shut down
      }
      if (stopping_.load()) {
        ::close(fd);
        return;
      }
      int one = 1;
      setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      net_detail::set_timeout(fd, 200);
      auto conn = std::make_shared<Conn>();
      conn->fd = fd;
      std::lock_guard lock(mu_);
      conns_.push_back(conn);
      conn_threads_.emplace_back([this, conn] { serve(conn); });
    }
  }

  void serve(std::shared_ptr<Conn> conn) {
    NodeServer::SinkFactory factory = [this, conn]() -> Broker::Sink {
      return [conn](const Notification& n) {
        std::string body;
        put_lp(body, n.key);
        encode_version(body, n.version);
        std::lock_guard lock(conn->mu);
        if (!conn->alive) return false;
        return net_detail::send_frame(conn->fd, wire::Frame{wire::kEvent, body});
      };
    };
    for (;;) {
      wire::Frame req;
      auto st = net_detail::recv_frame(conn->fd, req);
      if (st == net_detail::RecvStatus::kTimeout) {
        if (stopping_.load()) break;
        continue;
      }
      if (st != net_detail::RecvStatus::kOk) break;
      wire::Frame reply = node_.handle(req, &factory);
      std::lock_guard lock(conn->mu);
      if (!conn->alive) break;
      if (!net_detail::send_frame(conn->fd, reply)) break;
    }
    std::lock_guard lock(conn->mu);
    conn->alive = false;
  }

  void pump_loop() {
    while (!stopping_.load()) {
      node_.broker().drain();
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
  }

  NodeServer& node_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::thread pump_thread_;
  std::mutex mu_;
  std::vector<std::shared_ptr<Conn>> conns_;
  std::vector<std::thread> conn_threads_;
};

// ------------------------------------------------------------------ run_bench

// Workload runner against live TCP nodes. Same generators and metrics as
// run_sim; timing-dependent figures (notifications, ticks) are best-effort
// here because delivery is genuinely asynchronous.
struct BenchConfig {
  std::map<NodeId, std::string> nodes;  // node id -> "host:port"
  std::size_t n_replicas = 3;
  std::size_t write_quorum = 2;
  int max_redirects = 3;
  std::uint32_t virtual_points = Ring::kDefaultVirtualPoints;
  std::uint64_t seed = 1;
  int settle_ms = 300;  // grace period for in-flight notifications
  WorkloadSpec workload;
};

inline Result<MetricsReport> run_bench(const BenchConfig& cfg) {
  if (cfg.nodes.empty())
    return {ErrorCode::kConfigInvalid, "bench config lists no nodes"};
  if (cfg.n_replicas == 0 || cfg.n_replicas > cfg.nodes.size())
    return {ErrorCode::kConfigInvalid, "n_replicas must lie in [1, node count]"};
  if (cfg.write_quorum == 0 || cfg.write_quorum > cfg.n_replicas)
    return {ErrorCode::kConfigInvalid, "write_quorum must lie in [1, n_replicas]"};
  if (auto ok = validate(cfg.workload); !ok) return {ok.code(), ok.message()};
  if (cfg.workload.kind == WorkloadKind::kTxnIncrement &&
      cfg.nodes.count(cfg.workload.coordinator) == 0)
    return {ErrorCode::kConfigInvalid, "coordinator must name a configured node"};

  std::vector<NodeId> ids;
  for (const auto& [id, addr] : cfg.nodes) ids.push_back(id);
  TcpTransport net(cfg.nodes);
  WorkloadEnv env;
  env.transport = &net;
  env.ring = Ring(ids, cfg.virtual_points);
  env.n_replicas = cfg.n_replicas;
  env.write_quorum = cfg.write_quorum;
  env.max_redirects = cfg.max_redirects;
  env.seed = cfg.seed;
  env.settle = [ms = cfg.settle_ms] {
    std::this_thread::sleep_for(std::chrono::milliseconds(ms));
  };
  return run_workload(cfg.workload, std::move(env));
}

}  // namespace vstore
