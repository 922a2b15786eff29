#pragma once

// Server-side request handling: one NodeServer per cluster member, dispatching
// every wire opcode over its NodeStore, AccessController, and Broker.
//
// Scans that leave the node are driven from here: the serving node chases
// NeedRemote links with server-to-server GETKPREV(resume | local-only) calls
// so the client still spends a single round trip, and the first record of
// every remote batch is planted in the predecessor cache, anchored to the
// local record at the boundary. GETPREV does the same for merge parents.
//
// Reads are policy-checked per record (index hits, cache hits, and records
// relayed from peers alike); any denial turns the whole response into DENIED.
//
// Transaction opcodes are forwarded to a pluggable handler so coordinator
// duties can be enabled on exactly one node.

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "ring.hpp"
#include "store.hpp"
#include "view.hpp"
#include "wire.hpp"

namespace vstore {

class NodeServer {
 public:
  struct Config {
    NodeId node_id = 0;
    std::size_t n_replicas = 1;
    Ring ring;
    NodeStore::Options store;
  };

  // Server-to-server call into another node; nullopt = unreachable.
  using PeerCaller =
      std::function<std::optional<wire::Frame>(NodeId, const wire::Frame&)>;
  // Handles TXN_*/AV_* opcodes when this node hosts the coordinator.
  using TxnHandler =
      std::function<wire::Frame(const std::string& user, const wire::Frame&)>;
  // Builds the push channel for a SUBSCRIBE on the current connection.
  using SinkFactory = std::function<Broker::Sink()>;

  explicit NodeServer(Config cfg) : cfg_(std::move(cfg)), store_(patch(cfg_)) {
    store_.set_route_probe([this](std::string_view key, std::string_view tag) {
      return cfg_.ring.lookup(key, tag);
    });
    store_.set_publish_hook([this](const std::string& key, const VersionId& v) {
      broker_.publish(key, v);
    });
  }

  NodeId node_id() const { return cfg_.node_id; }
  NodeStore& store() { return store_; }
  AccessController& acl() { return acl_; }
  Broker& broker() { return broker_; }
  const Ring& ring() const { return cfg_.ring; }

  void set_peer_caller(PeerCaller caller) { peer_ = std::move(caller); }
  void set_txn_handler(TxnHandler handler) { txn_ = std::move(handler); }

  // A crash loses everything this node holds in memory: data, policies,
  // subscriptions. The node keeps serving afterwards, empty.
  void crash_erase() {
    store_.erase_all_for_test();
    acl_.clear();
    broker_.clear();
  }

  // Entry point for both transports. make_sink is only consulted for
  // SUBSCRIBE, where the transport supplies the push channel.
  wire::Frame handle(const wire::Frame& req, const SinkFactory* make_sink = nullptr) {
    try {
      ByteReader in(req.body);
      std::string user(in.read_lp());
      switch (req.opcode) {
        case wire::kPut: return handle_put(in);
        case wire::kGet: return handle_get(user, in);
        case wire::kMerge: return handle_merge(in);
        case wire::kGetPrev: return handle_get_prev(user, in);
        case wire::kGetKPrev: return handle_get_k_prev(user, in);
        case wire::kSubscribe: return handle_subscribe(in, make_sink);
        case wire::kPolicyPut: return handle_policy_put(user, in);
        case wire::kAdminSetT: return handle_admin_set_t(in);
        case wire::kStats: return handle_stats(in);
        case wire::kTxnBegin:
        case wire::kTxnRead:
        case wire::kTxnWrite:
        case wire::kTxnCommit:
        case wire::kTxnAbort:
        case wire::kAvGet:
        case wire::kAvSet:
        case wire::kAvLock:
        case wire::kAvUnlock:
          if (txn_) return txn_(user, req);
          return wire::error_response(req.opcode, ErrorCode::kBadRequest,
                                      "transactions are not enabled on this node");
        default:
          return wire::error_response(req.opcode, ErrorCode::kBadRequest,
                                      "unknown opcode");
      }
    } catch (const std::out_of_range& e) {
      return wire::error_response(req.opcode, ErrorCode::kBadRequest, e.what());
    }
  }

 private:
  static NodeStore::Options patch(const Config& cfg) {
    NodeStore::Options opt = cfg.store;
    opt.node_id = cfg.node_id;
    return opt;
  }

  static wire::Frame write_reply(std::uint8_t opcode, const Result<LocalWrite>& res) {
    if (!res) return wire::error_response(opcode, res.code(), res.message());
    if (res->redirected) return wire::redirect_response(opcode, res->redirect_tag);
    return wire::response(opcode, Status::kSuccess, encode_version(res->version));
  }

  wire::Frame handle_put(ByteReader& in) {
    std::string key(in.read_lp());
    VersionId parent = decode_version(in);
    std::string tag(in.read_lp());
    bool compress = in.read_u8() != 0;
    std::string value(in.read_lp());
    return write_reply(wire::kPut, store_.local_put(key, parent, value, compress, tag));
  }

  wire::Frame handle_merge(ByteReader& in) {
    std::string key(in.read_lp());
    VersionId v1 = decode_version(in);
    VersionId v2 = decode_version(in);
    std::string tag(in.read_lp());
    bool compress = in.read_u8() != 0;
    std::string value(in.read_lp());
    return write_reply(wire::kMerge,
                       store_.local_merge(key, v1, v2, value, compress, tag));
  }

  wire::Frame handle_get(const std::string& user, ByteReader& in) {
    std::string key(in.read_lp());
    VersionId v = decode_version(in);
    if (!acl_.check_read(user, key, v.h))
      return wire::response(wire::kGet, Status::kDenied);
    auto rec = store_.local_get_record(key, v);
    if (!rec) return wire::response(wire::kGet, Status::kNotFound);
    std::string body;
    body.push_back(static_cast<char>(rec->parents.size()));
    for (const auto& p : rec->parents) encode_version(body, p);
    put_lp(body, rec->payload.bytes);
    return wire::response(wire::kGet, Status::kSuccess, body);
  }

  wire::Frame handle_get_prev(const std::string& user, ByteReader& in) {
    std::string key(in.read_lp());
    VersionId v = decode_version(in);
    if (!acl_.check_read(user, key, v.h))
      return wire::response(wire::kGetPrev, Status::kDenied);
    auto rec = store_.local_get_record(key, v);
    if (!rec) return wire::response(wire::kGetPrev, Status::kNotFound);

    std::vector<NodeRecord> parents;
    for (const VersionId& p : rec->parents) {
      if (p.is_root()) continue;
      if (!acl_.check_read(user, key, p.h))
        return wire::response(wire::kGetPrev, Status::kDenied);
      if (auto local = store_.local_get_record(key, p)) {
        parents.push_back(std::move(*local));
        continue;
      }
      auto remote = fetch_remote_record(user, key, p);
      if (remote.status == Status::kDenied)
        return wire::response(wire::kGetPrev, Status::kDenied);
      if (!remote.record)
        return wire::error_response(wire::kGetPrev, ErrorCode::kNotFoundEverywhere,
                                    "parent version unreachable");
      store_.cache_remote(v.h, *remote.record);
      parents.push_back(std::move(*remote.record));
    }
    std::string body;
    put_u32be(body, static_cast<std::uint32_t>(parents.size()));
    for (const auto& r : parents) encode_record(body, r, r.payload.bytes);
    return wire::response(wire::kGetPrev, Status::kSuccess, body);
  }

  wire::Frame handle_get_k_prev(const std::string& user, ByteReader& in) {
    std::string key(in.read_lp());
    VersionId v = decode_version(in);
    std::uint32_t m = in.read_u32();
    std::uint8_t flags = in.read_u8();
    if (!acl_.check_read(user, key, v.h))
      return wire::response(wire::kGetKPrev, Status::kDenied);

    auto outcome = (flags & wire::kScanResume) ? store_.local_scan_resume(key, v, m)
                                               : store_.local_scan_k(key, v, m);
    if (!outcome) return wire::response(wire::kGetKPrev, Status::kNotFound);
    for (const auto& r : outcome->records)
      if (!acl_.check_read(user, key, r.version.h))
        return wire::response(wire::kGetKPrev, Status::kDenied);

    ScanTerminator term = outcome->terminator;
    VersionId next = outcome->next;
    std::vector<NodeRecord> records = std::move(outcome->records);

    if (!(flags & wire::kScanLocalOnly)) {
      while (term == ScanTerminator::kNeedRemote && records.size() < m) {
        auto hop = remote_scan_hop(user, key, next,
                                   static_cast<std::uint32_t>(m - records.size()));
        if (hop.status == Status::kDenied)
          return wire::response(wire::kGetKPrev, Status::kDenied);
        if (hop.status != Status::kSuccess)
          return wire::error_response(wire::kGetKPrev, ErrorCode::kNotFoundEverywhere,
                                      "scan chain broken at a remote hop");
        if (!hop.records.empty()) {
          const Digest& anchor = records.empty() ? v.h : records.back().version.h;
          store_.cache_remote(anchor, hop.records.front());
        }
        for (auto& r : hop.records) records.push_back(std::move(r));
        term = hop.terminator;
        next = hop.next;
      }
    }

    std::string body;
    body.push_back(static_cast<char>(term));
    if (term == ScanTerminator::kNeedRemote) encode_version(body, next);
    put_u32be(body, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) encode_record(body, r, r.payload.bytes);
    return wire::response(wire::kGetKPrev, Status::kSuccess, body);
  }

  wire::Frame handle_subscribe(ByteReader& in, const SinkFactory* make_sink) {
    std::string key(in.read_lp());
    if (make_sink == nullptr || !*make_sink)
      return wire::error_response(wire::kSubscribe, ErrorCode::kBadRequest,
                                  "subscriptions need a push channel");
    std::uint64_t id = broker_.subscribe(key, (*make_sink)());
    std::string body;
    put_u64be(body, id);
    return wire::response(wire::kSubscribe, Status::kSuccess, body);
  }

  wire::Frame handle_policy_put(const std::string& user, ByteReader& in) {
    std::string key(in.read_lp());
    std::string grantee(in.read_lp());
    std::uint32_t count = in.read_u32();
    std::vector<VersionId> versions;
    versions.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) versions.push_back(decode_version(in));
    auto res = acl_.apply_policy(user, key, grantee, versions, store_.has_key(key));
    if (!res) return wire::error_response(wire::kPolicyPut, res.code(), res.message());
    std::string body;
    body.push_back(res->stored_record ? 1 : 0);
    return wire::response(wire::kPolicyPut, Status::kSuccess, body);
  }

  wire::Frame handle_admin_set_t(ByteReader& in) {
    std::string key(in.read_lp());
    std::uint64_t capacity = in.read_u64();
    auto res = store_.set_region_capacity(key, capacity);
    if (!res) return wire::error_response(wire::kAdminSetT, res.code(), res.message());
    return wire::response(wire::kAdminSetT, Status::kSuccess);
  }

  wire::Frame handle_stats(ByteReader& in) {
    std::string filter(in.read_lp());
    nlohmann::json doc;
    doc["node"] = cfg_.node_id;
    StoreStats st = store_.stats();
    nlohmann::json keys = nlohmann::json::object();
    auto key_entry = [&](const std::string& key, const KeyStats& ks) {
      keys[key] = {{"used", ks.used},
                   {"capacity", ks.capacity},
                   {"records", ks.records},
                   {"policy_records", acl_.policy_records(key)}};
    };
    if (filter.empty()) {
      for (const auto& [key, ks] : st.keys) key_entry(key, ks);
    } else if (auto it = st.keys.find(filter); it != st.keys.end()) {
      key_entry(filter, it->second);
    } else {
      key_entry(filter, KeyStats{0, store_.default_region_capacity(), 0});
    }
    doc["keys"] = std::move(keys);
    doc["cache"] = {{"entries", st.cache_entries},
                    {"bytes", st.cache_bytes},
                    {"hits", st.cache_hits}};
    doc["remote_fetches"] = remote_fetches_.load();
    doc["tamper_detected"] = st.tamper_detected;
    doc["notifications"] = {{"pending", broker_.pending()},
                            {"dropped", broker_.dropped()},
                            {"subscriptions", broker_.subscriptions()}};
    std::string body;
    put_lp(body, doc.dump());
    return wire::response(wire::kStats, Status::kSuccess, body);
  }

  // ------------------------------------------------- server-to-server fetches

  struct RemoteRecord {
    Status status = Status::kNotFound;
    std::optional<NodeRecord> record;
  };

  // GET (key, v) from the replicas responsible for it, verifying the result.
  RemoteRecord fetch_remote_record(const std::string& user, const std::string& key,
                                   const VersionId& v) {
    if (!peer_) return {};
    remote_fetches_.fetch_add(1);
    std::string rest;
    put_lp(rest, key);
    encode_version(rest, v);
    wire::Frame req = wire::request(wire::kGet, user, rest);
    for (NodeId node : cfg_.ring.route(key, v.n, cfg_.n_replicas)) {
      if (node == cfg_.node_id) continue;
      auto resp = peer_(node, req);
      if (!resp) continue;
      wire::Reply reply = wire::parse_reply(*resp);
      if (reply.status == Status::kDenied) return {Status::kDenied, std::nullopt};
      if (reply.status != Status::kSuccess) continue;
      try {
        ByteReader body(reply.payload);
        NodeRecord rec;
        rec.key = key;
        rec.version = v;
        auto n_parents = body.read_u8();
        if (n_parents > 2) continue;
        for (std::uint8_t i = 0; i < n_parents; ++i)
          rec.parents.push_back(decode_version(body));
        rec.payload = Payload{PayloadKind::kFull, Bytes(body.read_lp()), {}, {}};
        if (!verify_record(rec)) continue;
        return {Status::kSuccess, std::move(rec)};
      } catch (const std::out_of_range&) {
        continue;
      }
    }
    return {};
  }

  struct RemoteBatch {
    Status status = Status::kNotFound;
    std::vector<NodeRecord> records;
    ScanTerminator terminator = ScanTerminator::kReachedRoot;
    VersionId next;
  };

  // One continuation hop: ask the replicas owning (key, start.n) to resume
  // the walk at `start` for up to `m` records, without chasing further links
  // themselves.
  RemoteBatch remote_scan_hop(const std::string& user, const std::string& key,
                              const VersionId& start, std::uint32_t m) {
    if (!peer_) return {};
    remote_fetches_.fetch_add(1);
    std::string rest;
    put_lp(rest, key);
    encode_version(rest, start);
    put_u32be(rest, m);
    rest.push_back(static_cast<char>(wire::kScanLocalOnly | wire::kScanResume));
    wire::Frame req = wire::request(wire::kGetKPrev, user, rest);
    for (NodeId node : cfg_.ring.route(key, start.n, cfg_.n_replicas)) {
      if (node == cfg_.node_id) continue;
      auto resp = peer_(node, req);
      if (!resp) continue;
      wire::Reply reply = wire::parse_reply(*resp);
      if (reply.status == Status::kDenied)
        return {Status::kDenied, {}, ScanTerminator::kReachedRoot, {}};
      if (reply.status != Status::kSuccess) continue;
      try {
        ByteReader body(reply.payload);
        RemoteBatch batch;
        batch.terminator = static_cast<ScanTerminator>(body.read_u8());
        if (batch.terminator == ScanTerminator::kNeedRemote)
          batch.next = decode_version(body);
        std::uint32_t count = body.read_u32();
        bool clean = true;
        for (std::uint32_t i = 0; i < count; ++i) {
          NodeRecord rec = decode_record(body);
          if (rec.key != key || !verify_record(rec)) {
            clean = false;
            break;
          }
          batch.records.push_back(std::move(rec));
        }
        if (!clean) continue;
        batch.status = Status::kSuccess;
        return batch;
      } catch (const std::out_of_range&) {
        continue;
      }
    }
    return {};
  }

  Config cfg_;
  NodeStore store_;
  AccessController acl_;
  Broker broker_;
  PeerCaller peer_;
  TxnHandler txn_;
  std::atomic<std::uint64_t> remote_fetches_{0};
};

}  // namespace vstore
