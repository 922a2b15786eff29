#pragma once

// In-process cluster simulator.
//
// Every request/response hop advances one logical clock tick and lands in a
// per-(origin, destination, opcode) counter, so tests can assert exact
// message costs. Fault injection: down windows [from, to) silently drop
// frames to or from a node; a crash erases everything the node holds
// (applied lazily when the clock first reaches the crash instant).
//
// Dispatch is synchronous and, with seeded stores, fully deterministic:
// the same call sequence produces the same clock, counters, and state.
// Bookkeeping is mutex-guarded so multi-threaded tests stay race-free;
// determinism then holds per thread-interleaving, which single-threaded
// tests pin completely.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "client.hpp"
#include "handler.hpp"
#include "ring.hpp"
#include "transport.hpp"
#include "txn.hpp"
#include "wire.hpp"

namespace vstore {

class SimNet {
 public:
  using EdgeKey = std::tuple<std::string, NodeId, std::uint8_t>;  // origin, dest, op

  void attach(NodeId id, NodeServer* server) {
    std::lock_guard lock(mu_);
    servers_[id] = server;
  }

  std::uint64_t now() const {
    std::lock_guard lock(mu_);
    return now_;
  }

  void tick() {
    std::lock_guard lock(mu_);
    advance_locked();
  }

  void add_down(NodeId node, std::uint64_t from, std::uint64_t to) {
    std::lock_guard lock(mu_);
    down_[node].push_back({from, to});
  }

  // Manual switch, independent of scheduled windows.
  void set_down(NodeId node, bool down) {
    std::lock_guard lock(mu_);
    if (down)
      forced_down_.insert(node);
    else
      forced_down_.erase(node);
  }

  void add_crash(NodeId node, std::uint64_t at) {
    std::lock_guard lock(mu_);
    crashes_.push_back({at, node});
  }

  // ------------------------------------------------------------- accounting

  std::map<EdgeKey, std::uint64_t> edges() const {
    std::lock_guard lock(mu_);
    return edges_;
  }

  // Frames sent by origins whose label starts with `prefix` ("client:…" or
  // "node:…"), optionally restricted to one opcode (0 = all).
  std::uint64_t sent_by_prefix(std::string_view prefix, std::uint8_t opcode = 0) const {
    std::lock_guard lock(mu_);
    std::uint64_t n = 0;
    for (const auto& [key, count] : edges_) {
      const auto& [origin, dest, op] = key;
      (void)dest;
      if (opcode != 0 && op != opcode) continue;
      if (origin.size() >= prefix.size() &&
          std::string_view(origin).substr(0, prefix.size()) == prefix)
        n += count;
    }
    return n;
  }

  void reset_counters() {
    std::lock_guard lock(mu_);
    edges_.clear();
  }

  // -------------------------------------------------------------- transport

  class Endpoint : public Transport {
   public:
    Endpoint(SimNet* net, std::string origin) : net_(net), origin_(std::move(origin)) {}

    std::optional<wire::Frame> call(NodeId node, const wire::Frame& req) override {
      return net_->deliver(origin_, node, req, nullptr);
    }

    Result<std::uint64_t> subscribe(NodeId node, std::string_view user,
                                    std::string_view key, Broker::Sink sink) override {
      std::string rest;
      put_lp(rest, key);
      auto resp =
          net_->deliver(origin_, node, wire::request(wire::kSubscribe, user, rest), &sink);
      if (!resp) return {ErrorCode::kIOFailure, "node unreachable"};
      wire::Reply reply = wire::parse_reply(*resp);
      if (reply.status == Status::kError) return {reply.code, reply.message};
      if (reply.status != Status::kSuccess)
        return {ErrorCode::kBadRequest, "unexpected subscribe status"};
      try {
        ByteReader body(reply.payload);
        return body.read_u64();
      } catch (const std::out_of_range&) {
        return {ErrorCode::kBadRequest, "truncated subscribe reply"};
      }
    }

   private:
    SimNet* net_;
    std::string origin_;
  };

  Transport& endpoint(const std::string& origin) {
    std::lock_guard lock(mu_);
    auto& slot = endpoints_[origin];
    if (!slot) slot = std::make_unique<Endpoint>(this, origin);
    return *slot;
  }

  std::optional<wire::Frame> deliver(const std::string& origin, NodeId dest,
                                     const wire::Frame& req, const Broker::Sink* sink) {
    NodeServer* server = nullptr;
    {
      std::lock_guard lock(mu_);
      std::uint64_t t = advance_locked();
      edges_[{origin, dest, req.opcode}]++;
      auto it = servers_.find(dest);
      if (it == servers_.end() || is_down_locked(dest, t)) return std::nullopt;
      server = it->second;
    }
    wire::Frame resp;
    if (sink != nullptr) {
      NodeServer::SinkFactory factory = [sink] { return *sink; };
      resp = server->handle(req, &factory);
    } else {
      resp = server->handle(req);
    }
    {
      std::lock_guard lock(mu_);
      std::uint64_t t = advance_locked();
      if (is_down_locked(dest, t)) return std::nullopt;  // reply lost
    }
    return resp;
  }

 private:
  std::uint64_t advance_locked() {
    std::uint64_t t = ++now_;
    for (auto it = crashes_.begin(); it != crashes_.end();) {
      if (it->first <= t) {
        auto sit = servers_.find(it->second);
        if (sit != servers_.end()) sit->second->crash_erase();
        it = crashes_.erase(it);
      } else {
        ++it;
      }
    }
    return t;
  }

  bool is_down_locked(NodeId node, std::uint64_t t) const {
    if (forced_down_.count(node)) return true;
    auto it = down_.find(node);
    if (it == down_.end()) return false;
    for (const auto& [from, to] : it->second)
      if (from <= t && t < to) return true;
    return false;
  }

  mutable std::mutex mu_;
  std::uint64_t now_ = 0;
  std::map<NodeId, NodeServer*> servers_;
  std::set<NodeId> forced_down_;
  std::map<NodeId, std::vector<std::pair<std::uint64_t, std::uint64_t>>> down_;
  std::vector<std::pair<std::uint64_t, NodeId>> crashes_;
  std::map<EdgeKey, std::uint64_t> edges_;
  std::map<std::string, std::unique_ptr<Endpoint>> endpoints_;
};

// ------------------------------------------------------------------- cluster

struct SimConfig {
  std::size_t nodes = 4;
  std::size_t n_replicas = 3;
  std::size_t write_quorum = 2;
  std::uint32_t virtual_points = Ring::kDefaultVirtualPoints;
  std::uint64_t seed = 1;
  std::uint64_t default_capacity = kDefaultRegionCapacity;
  std::uint64_t cache_budget = kDefaultCacheBudget;
  bool compress = true;
  int max_redirects = 3;
};

class SimCluster {
 public:
  explicit SimCluster(SimConfig cfg) : cfg_(cfg) {
    std::vector<NodeId> ids;
    for (std::size_t i = 0; i < cfg.nodes; ++i) ids.push_back(static_cast<NodeId>(i));
    ring_ = Ring(ids, cfg.virtual_points);
    for (NodeId id : ids) {
      NodeServer::Config sc;
      sc.node_id = id;
      sc.n_replicas = cfg.n_replicas;
      sc.ring = ring_;
      sc.store.default_region_capacity = cfg.default_capacity;
      sc.store.cache_budget = cfg.cache_budget;
      sc.store.rng_seed = cfg.seed;
      sc.store.compress_default = cfg.compress;
      servers_.push_back(std::make_unique<NodeServer>(std::move(sc)));
      net_.attach(id, servers_.back().get());
    }
    for (auto& server : servers_) {
      Transport& ep = net_.endpoint("node:" + std::to_string(server->node_id()));
      server->set_peer_caller(
          [&ep](NodeId dest, const wire::Frame& f) { return ep.call(dest, f); });
    }
  }

  ClientSession client(const std::string& user) {
    ClientSession::Config cc;
    cc.user = user;
    cc.ring = ring_;
    cc.n_replicas = cfg_.n_replicas;
    cc.write_quorum = cfg_.write_quorum;
    cc.max_redirects = cfg_.max_redirects;
    return ClientSession(std::move(cc), net_.endpoint("client:" + user));
  }

  std::size_t size() const { return servers_.size(); }
  NodeServer& server(NodeId id) { return *servers_.at(id); }
  const Ring& ring() const { return ring_; }
  SimNet& net() { return net_; }
  const SimConfig& config() const { return cfg_; }

  // Run a transaction coordinator on one node; its engine reads and writes
  // through the cluster like any other peer.
  TxnService& enable_transactions(NodeId node, TxnService::Options opt = {}) {
    ClientSession::Config cc;
    cc.user = "txn-engine";
    cc.ring = ring_;
    cc.n_replicas = cfg_.n_replicas;
    cc.write_quorum = cfg_.write_quorum;
    cc.max_redirects = cfg_.max_redirects;
    Transport& ep = net_.endpoint("txn:" + std::to_string(node));
    txn_ = std::make_unique<TxnService>(ClientSession(std::move(cc), ep), opt);
    server(node).set_txn_handler([svc = txn_.get()](const std::string& user,
                                                    const wire::Frame& req) {
      return svc->handle(user, req);
    });
    return *txn_;
  }

  TxnService& txn() { return *txn_; }

  TxnClient txn_client(NodeId coordinator, const std::string& user) {
    return TxnClient(net_.endpoint("client:" + user), coordinator, user);
  }

  // Deliver queued notifications until no broker makes progress. Sinks that
  // keep refusing leave their backlog in place for a later pump.
  std::size_t pump_notifications() {
    std::size_t total = 0;
    for (;;) {
      std::size_t delivered = 0;
      for (auto& server : servers_) delivered += server->broker().drain();
      total += delivered;
      if (delivered == 0) return total;
    }
  }

 private:
  SimConfig cfg_;
  Ring ring_;
  SimNet net_;
  std::vector<std::unique_ptr<NodeServer>> servers_;
  std::unique_ptr<TxnService> txn_;
};

}  // namespace vstore
