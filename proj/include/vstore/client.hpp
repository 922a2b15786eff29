#pragma once

// Cluster-facing client session.
//
// Writes go to all replicas of (key, tag) and succeed once the write quorum
// acks. Only the primary's REDIRECT moves the write to a new tag; after
// max_redirects consecutive hops the client stops chasing and doubles the
// full region's capacity instead (immediately, with the no_spill option —
// for keys whose placement must never leave the primary).
//
// Reads try replicas in ring order and verify every record against its own
// identity before trusting it, so a corrupt replica is just a miss.
//
// Subscriptions fan out to every node (spilled tags can publish anywhere)
// and collapse duplicates by version digest before the caller's sink runs.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "common.hpp"
#include "record.hpp"
#include "ring.hpp"
#include "store.hpp"
#include "transport.hpp"
#include "version.hpp"
#include "view.hpp"
#include "wire.hpp"

namespace vstore {

struct PutOptions {
  bool compress = true;
  bool no_spill = false;              // grow the primary region instead of spilling
  std::optional<std::string> tag;     // placement tag override (default: inherit)
};

struct ClientScan {
  std::vector<NodeRecord> records;
  ScanTerminator terminator = ScanTerminator::kReachedRoot;
};

struct Subscription {
  NodeId node = 0;
  std::uint64_t id = 0;
};

class ClientSession {
 public:
  struct Config {
    std::string user = "anon";
    Ring ring;
    std::size_t n_replicas = 3;
    std::size_t write_quorum = 2;
    int max_redirects = 3;  // consecutive redirects tolerated before growing
  };

  ClientSession(Config cfg, Transport& net) : cfg_(std::move(cfg)), net_(net) {}

  const Config& config() const { return cfg_; }
  const Ring& ring() const { return cfg_.ring; }
  MergeFunctionRegistry& merge_fns() { return merge_fns_; }

  // Cumulative primary redirects this session has followed.
  std::uint64_t redirects_seen() const { return redirects_seen_; }

  // ------------------------------------------------------------------ writes

  Result<VersionId> put(std::string_view key, const VersionId& parent,
                        std::string_view value, const PutOptions& opt = {}) {
    return write_op(key, opt.tag ? *opt.tag : parent.n, opt, [&](std::string_view tag) {
      std::string rest;
      put_lp(rest, key);
      encode_version(rest, parent);
      put_lp(rest, tag);
      rest.push_back(opt.compress ? 1 : 0);
      put_lp(rest, value);
      return wire::request(wire::kPut, cfg_.user, rest);
    });
  }

  Result<VersionId> merge(std::string_view key, const VersionId& v1,
                          const VersionId& v2, std::string_view value,
                          const PutOptions& opt = {}) {
    return write_op(key, opt.tag ? *opt.tag : v1.n, opt, [&](std::string_view tag) {
      std::string rest;
      put_lp(rest, key);
      encode_version(rest, v1);
      encode_version(rest, v2);
      put_lp(rest, tag);
      rest.push_back(opt.compress ? 1 : 0);
      put_lp(rest, value);
      return wire::request(wire::kMerge, cfg_.user, rest);
    });
  }

  // ------------------------------------------------------------------- reads

  Result<NodeRecord> get(std::string_view key, const VersionId& v) {
    std::string rest;
    put_lp(rest, key);
    encode_version(rest, v);
    wire::Frame req = wire::request(wire::kGet, cfg_.user, rest);
    for (NodeId node : cfg_.ring.route(key, v.n, cfg_.n_replicas)) {
      auto resp = net_.call(node, req);
      if (!resp) continue;
      wire::Reply reply = wire::parse_reply(*resp);
      if (reply.status == Status::kDenied)
        return {ErrorCode::kDenied, "read denied by policy"};
      if (reply.status != Status::kSuccess) continue;
      try {
        ByteReader body(reply.payload);
        NodeRecord rec;
        rec.key = std::string(key);
        rec.version = v;
        auto n_parents = body.read_u8();
        if (n_parents > 2) continue;
        for (std::uint8_t i = 0; i < n_parents; ++i)
          rec.parents.push_back(decode_version(body));
        rec.payload = Payload{PayloadKind::kFull, Bytes(body.read_lp()), {}, {}};
        if (!verify_record(rec)) continue;  // corrupt replica: keep looking
        return rec;
      } catch (const std::out_of_range&) {
        continue;
      }
    }
    return {ErrorCode::kNotFoundEverywhere, "no replica returned the version"};
  }

  Result<Bytes> get_value(std::string_view key, const VersionId& v) {
    auto rec = get(key, v);
    if (!rec) return {rec.code(), rec.message()};
    return rec->payload.bytes;
  }

  Result<std::vector<NodeRecord>> get_previous(std::string_view key,
                                               const VersionId& v) {
    std::string rest;
    put_lp(rest, key);
    encode_version(rest, v);
    wire::Frame req = wire::request(wire::kGetPrev, cfg_.user, rest);
    std::pair<ErrorCode, std::string> last{ErrorCode::kNotFoundEverywhere,
                                           "no replica could serve the walk"};
    for (NodeId node : cfg_.ring.route(key, v.n, cfg_.n_replicas)) {
      auto resp = net_.call(node, req);
      if (!resp) continue;
      wire::Reply reply = wire::parse_reply(*resp);
      if (reply.status == Status::kDenied)
        return {ErrorCode::kDenied, "read denied by policy"};
      if (reply.status == Status::kError) {
        last = {reply.code, reply.message};
        continue;
      }
      if (reply.status != Status::kSuccess) continue;
      auto records = decode_verified_records(key, reply.payload);
      if (!records) continue;
      return *records;
    }
    return {last.first, last.second};
  }

  // Predecessor scan: one round trip; the serving node chases remote links.
  // With resume, v itself is delivered as the first record.
  Result<ClientScan> get_k_previous(std::string_view key, const VersionId& v,
                                    std::uint32_t m, bool resume = false) {
    std::string rest;
    put_lp(rest, key);
    encode_version(rest, v);
    put_u32be(rest, m);
    rest.push_back(resume ? wire::kScanResume : 0);
    wire::Frame req = wire::request(wire::kGetKPrev, cfg_.user, rest);
    std::pair<ErrorCode, std::string> last{ErrorCode::kNotFoundEverywhere,
                                           "no replica could serve the scan"};
    for (NodeId node : cfg_.ring.route(key, v.n, cfg_.n_replicas)) {
      auto resp = net_.call(node, req);
      if (!resp) continue;
      wire::Reply reply = wire::parse_reply(*resp);
      if (reply.status == Status::kDenied)
        return {ErrorCode::kDenied, "read denied by policy"};
      if (reply.status == Status::kError) {
        last = {reply.code, reply.message};
        continue;
      }
      if (reply.status != Status::kSuccess) continue;
      try {
        ByteReader body(reply.payload);
        ClientScan scan;
        scan.terminator = static_cast<ScanTerminator>(body.read_u8());
        if (scan.terminator == ScanTerminator::kNeedRemote) decode_version(body);
        auto records =
            decode_verified_records(key, std::string(body.read_raw(body.remaining())));
        if (!records) continue;
        scan.records = std::move(*records);
        return scan;
      } catch (const std::out_of_range&) {
        continue;
      }
    }
    return {last.first, last.second};
  }

  // Baseline for comparisons: walk one predecessor fetch at a time, spending
  // a round trip per step, stopping exactly where the batched scan stops.
  Result<ClientScan> naive_scan(std::string_view key, const VersionId& v,
                                std::uint32_t m) {
    ClientScan scan;
    auto start = get(key, v);
    if (!start) return {start.code(), start.message()};
    if (start->created_by_merge()) {
      scan.terminator = ScanTerminator::kHitMerge;
      return scan;
    }
    VersionId cur = v;
    while (scan.records.size() < m) {
      auto prev = get_previous(key, cur);
      if (!prev) return {prev.code(), prev.message()};
      if (prev->empty()) {
        scan.terminator = ScanTerminator::kReachedRoot;
        return scan;
      }
      NodeRecord rec = std::move(prev->front());
      cur = rec.version;
      bool merge = rec.created_by_merge();
      scan.records.push_back(std::move(rec));
      if (merge) {
        scan.terminator = ScanTerminator::kHitMerge;
        return scan;
      }
    }
    scan.terminator = ScanTerminator::kCountM;
    return scan;
  }

  // ------------------------------------------------------------ view actions

  // Broadcast a grant to every node; returns how many stored a policy record
  // (bounded by the number of nodes holding data for the key).
  Result<std::uint64_t> put_policy(std::string_view key, std::string_view grantee,
                                   const std::vector<VersionId>& versions) {
    std::string rest;
    put_lp(rest, key);
    put_lp(rest, grantee);
    put_u32be(rest, static_cast<std::uint32_t>(versions.size()));
    for (const auto& v : versions) encode_version(rest, v);
    wire::Frame req = wire::request(wire::kPolicyPut, cfg_.user, rest);
    std::uint64_t stored = 0;
    for (NodeId node : cfg_.ring.members()) {
      auto resp = net_.call(node, req);
      if (!resp) return {ErrorCode::kIOFailure,
                         "node " + std::to_string(node) + " unreachable; policy "
                         "broadcast incomplete"};
      wire::Reply reply = wire::parse_reply(*resp);
      if (reply.status == Status::kError) return {reply.code, reply.message};
      if (reply.status == Status::kSuccess && !reply.payload.empty() &&
          reply.payload[0] != 0)
        ++stored;
    }
    return stored;
  }

  // Subscribe at every node, deduplicating notifications by version digest
  // before they reach the caller's sink.
  Result<std::vector<Subscription>> subscribe(std::string_view key, Broker::Sink sink) {
    auto seen = std::make_shared<std::set<Digest>>();
    auto seen_mu = std::make_shared<std::mutex>();
    Broker::Sink dedup = [seen, seen_mu, sink = std::move(sink)](const Notification& n) {
      {
        std::lock_guard lock(*seen_mu);
        if (seen->count(n.version.h)) return true;  // duplicate: ack and drop
      }
      if (!sink(n)) return false;
      std::lock_guard lock(*seen_mu);
      seen->insert(n.version.h);
      return true;
    };
    std::vector<Subscription> subs;
    for (NodeId node : cfg_.ring.members()) {
      auto id = net_.subscribe(node, cfg_.user, key, dedup);
      if (!id) return {id.code(), id.message()};
      subs.push_back({node, *id});
    }
    return subs;
  }

  // Fetch both branch values and their latest common ancestor, combine them
  // with the named merge function, and write the result as a merge record.
  Result<VersionId> three_way_merge(std::string_view key, const VersionId& v1,
                                    const VersionId& v2, const std::string& fn_name,
                                    const PutOptions& opt = {}) {
    const MergeFn* fn = merge_fns_.find(fn_name);
    if (fn == nullptr)
      return {ErrorCode::kUnknownMergeFunction, "no merge function " + fn_name};
    if (v1.is_root() || v2.is_root())
      return {ErrorCode::kBadRequest, "cannot merge the root version"};

    std::unordered_map<Digest, NodeRecord, DigestHash> memo;
    auto lca = find_lca(key, v1, v2, memo);
    if (!lca) return {lca.code(), lca.message()};

    Bytes ancestor_value;
    if (!lca->is_root()) ancestor_value = memo.at(lca->h).payload.bytes;

    const Bytes& value1 = memo.at(v1.h).payload.bytes;
    const Bytes& value2 = memo.at(v2.h).payload.bytes;
    std::optional<Bytes> merged = (*fn)(ancestor_value, value1, value2);
    if (!merged)
      return {ErrorCode::kConflict, "merge function reported a conflict"};
    return merge(key, v1, v2, *merged, opt);
  }

  // Latest common ancestor of two versions of a key: maximum depth, ties
  // broken by smallest digest; ROOT when the branches share nothing else.
  Result<VersionId> lowest_common_ancestor(std::string_view key, const VersionId& v1,
                                           const VersionId& v2) {
    std::unordered_map<Digest, NodeRecord, DigestHash> memo;
    return find_lca(key, v1, v2, memo);
  }

  // ---------------------------------------------------------------- admin

  VoidResult set_region_capacity(NodeId node, std::string_view key,
                                 std::uint64_t capacity) {
    std::string rest;
    put_lp(rest, key);
    put_u64be(rest, capacity);
    auto resp = net_.call(node, wire::request(wire::kAdminSetT, cfg_.user, rest));
    if (!resp) return {ErrorCode::kIOFailure, "node unreachable"};
    wire::Reply reply = wire::parse_reply(*resp);
    if (reply.status == Status::kSuccess) return ok_void();
    if (reply.status == Status::kError) return {reply.code, reply.message};
    return {ErrorCode::kBadRequest, "unexpected status"};
  }

  Result<nlohmann::json> node_stats(NodeId node, std::string_view key = {}) {
    std::string rest;
    put_lp(rest, key);
    auto resp = net_.call(node, wire::request(wire::kStats, cfg_.user, rest));
    if (!resp) return {ErrorCode::kIOFailure, "node unreachable"};
    wire::Reply reply = wire::parse_reply(*resp);
    if (reply.status == Status::kError) return {reply.code, reply.message};
    if (reply.status != Status::kSuccess)
      return {ErrorCode::kBadRequest, "unexpected status"};
    try {
      ByteReader body(reply.payload);
      return nlohmann::json::parse(body.read_lp());
    } catch (const std::exception& e) {
      return {ErrorCode::kBadRequest, std::string("stats body: ") + e.what()};
    }
  }

 private:
  template <class MakeRequest>
  Result<VersionId> write_op(std::string_view key, std::string_view initial_tag,
                             const PutOptions& opt, MakeRequest make_request) {
    std::string tag(initial_tag);
    int consecutive_redirects = 0;
    for (int rounds = 0; rounds < 64; ++rounds) {
      std::vector<NodeId> nodes = cfg_.ring.route(key, tag, cfg_.n_replicas);
      if (nodes.empty()) return {ErrorCode::kConfigInvalid, "empty ring"};
      wire::Frame req = make_request(tag);
      auto replies = net_.multicall(nodes, req);

      std::size_t acks = 0;
      std::optional<VersionId> version;
      std::optional<std::string> primary_redirect;
      std::optional<std::pair<ErrorCode, std::string>> primary_error;
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!replies[i]) continue;
        wire::Reply reply = wire::parse_reply(*replies[i]);
        if (reply.status == Status::kSuccess) {
          try {
            ByteReader body(reply.payload);
            VersionId got = decode_version(body);
            if (!version) version = got;
            ++acks;
          } catch (const std::out_of_range&) {
          }
        } else if (reply.status == Status::kRedirect && i == 0) {
          primary_redirect = reply.redirect_tag;
        } else if (reply.status == Status::kError && i == 0) {
          primary_error = {reply.code, reply.message};
        }
      }

      if (acks >= cfg_.write_quorum && version) return *version;

      if (primary_redirect) {
        ++redirects_seen_;
        ++consecutive_redirects;
        if (opt.no_spill || consecutive_redirects > cfg_.max_redirects) {
          auto grown = grow_region(nodes, key);
          if (!grown) return {grown.code(), grown.message()};
          consecutive_redirects = 0;
          continue;  // same tag, bigger regions
        }
        tag = *primary_redirect;
        continue;
      }
      if (primary_error) return {primary_error->first, primary_error->second};
      return {ErrorCode::kQuorumUnavailable,
              "fewer than " + std::to_string(cfg_.write_quorum) + " replicas acked"};
    }
    return {ErrorCode::kQuorumUnavailable, "write did not settle"};
  }

  // Double the region capacity for key across the whole write route: the
  // primary redirected, and its followers hold the same data, so growing
  // only one node would leave the quorum unreachable.
  VoidResult grow_region(const std::vector<NodeId>& nodes, std::string_view key) {
    for (NodeId node : nodes) {
      auto stats = node_stats(node, key);
      if (!stats) return {stats.code(), stats.message()};
      std::uint64_t capacity = kDefaultRegionCapacity;
      try {
        capacity = (*stats)["keys"][std::string(key)]["capacity"].get<std::uint64_t>();
      } catch (const std::exception&) {
      }
      auto set = set_region_capacity(node, key, capacity * 2);
      if (!set) return set;
    }
    return ok_void();
  }

  Result<VersionId> find_lca(std::string_view key, const VersionId& v1,
                             const VersionId& v2,
                             std::unordered_map<Digest, NodeRecord, DigestHash>& memo) {
    auto anc1 = ancestors(key, v1, memo);
    if (!anc1) return {anc1.code(), anc1.message()};
    auto anc2 = ancestors(key, v2, memo);
    if (!anc2) return {anc2.code(), anc2.message()};
    std::optional<VersionId> lca;
    for (const auto& [h, vid] : *anc1) {
      auto it = anc2->find(h);
      if (it == anc2->end()) continue;
      if (!lca || vid.l > lca->l || (vid.l == lca->l && vid.h < lca->h)) lca = vid;
    }
    return lca ? *lca : root_version();
  }

  // All ancestors of v including v itself, fetched with verification and
  // memoized across calls. ROOT is implicit and never fetched.
  Result<std::map<Digest, VersionId>> ancestors(
      std::string_view key, const VersionId& v,
      std::unordered_map<Digest, NodeRecord, DigestHash>& memo) {
    std::map<Digest, VersionId> out;
    std::vector<VersionId> frontier{v};
    while (!frontier.empty()) {
      VersionId cur = frontier.back();
      frontier.pop_back();
      if (cur.is_root() || out.count(cur.h)) continue;
      auto it = memo.find(cur.h);
      if (it == memo.end()) {
        auto rec = get(key, cur);
        if (!rec)
          return {ErrorCode::kNoCommonAncestor,
                  "ancestor walk broke at " + short_hex(cur) + ": " + rec.message()};
        it = memo.emplace(cur.h, std::move(*rec)).first;
      }
      out.emplace(cur.h, cur);
      for (const auto& p : it->second.parents) frontier.push_back(p);
    }
    return out;
  }

  // Decode `u32 count || records`, verifying each and rejecting records for
  // the wrong key. Returns nullopt on any corruption so the caller can try
  // the next replica.
  std::optional<std::vector<NodeRecord>> decode_verified_records(
      std::string_view key, const std::string& payload) {
    try {
      ByteReader body(payload);
      std::uint32_t count = body.read_u32();
      std::vector<NodeRecord> records;
      records.reserve(count);
      for (std::uint32_t i = 0; i < count; ++i) {
        NodeRecord rec = decode_record(body);
        if (rec.key != key || !verify_record(rec)) return std::nullopt;
        records.push_back(std::move(rec));
      }
      return records;
    } catch (const std::out_of_range&) {
      return std::nullopt;
    }
  }

  Config cfg_;
  Transport& net_;
  MergeFunctionRegistry merge_fns_;
  std::uint64_t redirects_seen_ = 0;
};

}  // namespace vstore
