#pragma once

// Single-node storage engine.
//
// Records are grouped per key into regions with a byte capacity t (default
// 1 MiB). A write that would push the region's used bytes past t is answered
// with a redirect: the node samples a fresh 8-byte tag until the ring places
// (key, tag) on some other node, and the client retries there. Usage counts
// encoded payload bytes, so delta-compressed records are charged their delta
// size.
//
// Invariants the suite leans on:
//   * records are immutable; the index never mutates or deletes an entry
//   * duplicate writes are idempotent by digest and charge nothing
//   * a delta's base is always a locally stored, full record (never a delta,
//     never a cache entry, never remote)
//   * the predecessor cache holds only records whose primary placement is
//     some other node, at most two per anchoring local record
//   * operations on different keys never block each other

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "common.hpp"
#include "delta.hpp"
#include "record.hpp"
#include "ring.hpp"
#include "version.hpp"

namespace vstore {

constexpr std::uint64_t kDefaultRegionCapacity = 1ull << 20;  // 1 MiB
constexpr std::uint64_t kDefaultCacheBudget = 4ull << 20;     // 4 MiB
constexpr int kRedirectSampleAttempts = 64;

// ------------------------------------------------------------------- results

enum class ScanTerminator : std::uint8_t {
  kCountM = 0,       // m records collected
  kHitMerge = 1,     // stopped right after appending a merge record
  kReachedRoot = 2,  // next predecessor would be ROOT
  kNeedRemote = 3,   // next predecessor is not resolvable on this node
};

struct ScanOutcome {
  std::vector<NodeRecord> records;  // payloads materialized to full values
  ScanTerminator terminator = ScanTerminator::kReachedRoot;
  VersionId next;  // set when terminator == kNeedRemote
};

struct LocalWrite {
  bool redirected = false;
  VersionId version;        // when stored (or already present)
  std::string redirect_tag;  // when redirected
};

struct KeyStats {
  std::uint64_t used = 0;
  std::uint64_t capacity = 0;
  std::uint64_t records = 0;
};

struct StoreStats {
  std::map<std::string, KeyStats> keys;
  std::uint64_t cache_entries = 0;
  std::uint64_t cache_bytes = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t tamper_detected = 0;
};

// ---------------------------------------------------------- predecessor cache

// LRU over remote records pulled in during predecessor walks. Budget is in
// bytes (payload + key); at most two entries may be attributed to any single
// local record — enough for both parents of a merge.
class PredecessorCache {
 public:
  explicit PredecessorCache(std::uint64_t budget) : budget_(budget) {}

  static std::size_t entry_bytes(const NodeRecord& r) {
    return r.payload.bytes.size() + r.key.size() + 128;
  }

  bool insert(const Digest& anchor, NodeRecord record) {
    std::lock_guard lock(mu_);
    if (map_.count(record.version.h)) {
      touch(record.version.h);
      return true;
    }
    std::size_t bytes = entry_bytes(record);
    if (bytes > budget_) return false;
    if (per_anchor_[anchor] >= 2) return false;
    per_anchor_[anchor]++;
    lru_.push_front(record.version.h);
    map_.emplace(record.version.h, Entry{std::move(record), anchor, bytes, lru_.begin()});
    used_ += bytes;
    while (used_ > budget_) evict_oldest();
    return true;
  }

  std::optional<NodeRecord> lookup(const Digest& h) {
    std::lock_guard lock(mu_);
    auto it = map_.find(h);
    if (it == map_.end()) return std::nullopt;
    touch(h);
    return it->second.record;
  }

  std::uint64_t entries() const {
    std::lock_guard lock(mu_);
    return map_.size();
  }
  std::uint64_t bytes() const {
    std::lock_guard lock(mu_);
    return used_;
  }

  void clear() {
    std::lock_guard lock(mu_);
    map_.clear();
    lru_.clear();
    per_anchor_.clear();
    used_ = 0;
  }

 private:
  struct Entry {
    NodeRecord record;
    Digest anchor;
    std::size_t bytes;
    std::list<Digest>::iterator lru_it;
  };

  void touch(const Digest& h) {
    auto it = map_.find(h);
    lru_.erase(it->second.lru_it);
    lru_.push_front(h);
    it->second.lru_it = lru_.begin();
  }

  void evict_oldest() {
    const Digest h = lru_.back();
    auto it = map_.find(h);
    used_ -= it->second.bytes;
    auto anchor_it = per_anchor_.find(it->second.anchor);
    if (anchor_it != per_anchor_.end() && --anchor_it->second <= 0)
      per_anchor_.erase(anchor_it);
    map_.erase(it);
    lru_.pop_back();
  }

  mutable std::mutex mu_;
  std::uint64_t budget_;
  std::uint64_t used_ = 0;
  std::list<Digest> lru_;
  std::unordered_map<Digest, Entry, DigestHash> map_;
  std::unordered_map<Digest, int, DigestHash> per_anchor_;
};

// ----------------------------------------------------------------- node store

class NodeStore {
 public:
  struct Options {
    NodeId node_id = 0;
    std::uint64_t default_region_capacity = kDefaultRegionCapacity;
    std::uint64_t cache_budget = kDefaultCacheBudget;
    std::uint64_t rng_seed = 0;  // 0 = seed from entropy
    bool compress_default = true;
  };

  // Answers "which node is primary for (key, tag)" — supplied by the cluster
  // layer. Unset means this node stands alone.
  using RouteProbe = std::function<NodeId(std::string_view key, std::string_view tag)>;
  using PublishHook = std::function<void(const std::string& key, const VersionId&)>;

  NodeStore() : NodeStore(Options()) {}
  explicit NodeStore(Options opt)
      : opt_(opt),
        cache_(opt.cache_budget),
        rng_(opt.rng_seed ? opt.rng_seed + opt.node_id : std::random_device{}()) {}

  NodeId node_id() const { return opt_.node_id; }
  std::uint64_t default_region_capacity() const { return opt_.default_region_capacity; }
  void set_route_probe(RouteProbe probe) { route_probe_ = std::move(probe); }
  void set_publish_hook(PublishHook hook) { publish_ = std::move(hook); }
  CodecRegistry& codecs() { return codecs_; }

  // ------------------------------------------------------------------ writes

  Result<LocalWrite> local_put(std::string_view key, const VersionId& parent,
                               std::string_view value, bool compress,
                               std::string_view tag) {
    VersionId version = derive_put_version(key, parent, value, tag);
    return store_record(key, version, {parent}, value, compress);
  }

  Result<LocalWrite> local_put(std::string_view key, const VersionId& parent,
                               std::string_view value) {
    return local_put(key, parent, value, opt_.compress_default, parent.n);
  }

  Result<LocalWrite> local_merge(std::string_view key, const VersionId& v1,
                                 const VersionId& v2, std::string_view value,
                                 bool compress, std::string_view tag) {
    auto version = derive_merge_version(key, v1, v2, value, tag);
    if (!version) return {version.code(), version.message()};
    return store_record(key, *version, {v1, v2}, value, compress);
  }

  Result<LocalWrite> local_merge(std::string_view key, const VersionId& v1,
                                 const VersionId& v2, std::string_view value) {
    return local_merge(key, v1, v2, value, opt_.compress_default, v1.n);
  }

  // ------------------------------------------------------------------- reads

  // Full record with the payload materialized; falls back to the predecessor
  // cache. Verification failure is reported as a miss so the caller moves on
  // to another replica, and counted.
  Result<NodeRecord> local_get_record(std::string_view key, const VersionId& v) {
    {
      auto ks = find_space(key);
      if (ks) {
        std::lock_guard lock(ks->mu);
        auto it = ks->index.find(v.h);
        if (it != ks->index.end()) {
          auto rec = materialize_locked(*ks, it->second);
          if (!rec) return rec;
          if (!verify_record(*rec)) {
            tamper_detected_.fetch_add(1);
            return {ErrorCode::kNotFound, "record failed verification"};
          }
          return rec;
        }
      }
    }
    if (auto cached = cache_.lookup(v.h); cached && cached->key == key) {
      cache_hits_.fetch_add(1);
      return *cached;
    }
    return {ErrorCode::kNotFound, "version not stored on this node"};
  }

  Result<Bytes> local_get(std::string_view key, const VersionId& v) {
    auto rec = local_get_record(key, v);
    if (!rec) return {rec.code(), rec.message()};
    return rec->payload.bytes;
  }

  bool has_version(std::string_view key, const Digest& h) {
    auto ks = find_space(key);
    if (!ks) return false;
    std::lock_guard lock(ks->mu);
    return ks->index.count(h) != 0;
  }

  bool has_key(std::string_view key) {
    auto ks = find_space(key);
    if (!ks) return false;
    std::lock_guard lock(ks->mu);
    return !ks->index.empty();
  }

  // ------------------------------------------------------------------- scans

  // Walk single-parent predecessors of v, appending each predecessor record,
  // until one of the terminators fires. Records come back newest-first with
  // full values. Starting at a merge record yields an empty batch + HitMerge.
  Result<ScanOutcome> local_scan_k(std::string_view key, const VersionId& v,
                                   std::uint32_t m) {
    auto start = resolve(key, v);
    if (!start) return {start.code(), start.message()};

    ScanOutcome out;
    if (start->created_by_merge()) {
      out.terminator = ScanTerminator::kHitMerge;
      return out;
    }
    if (m == 0) {
      out.terminator = ScanTerminator::kCountM;
      return out;
    }
    NodeRecord current = *start;
    for (;;) {
      const VersionId& next = current.parents[0];
      if (next.is_root()) {
        out.terminator = ScanTerminator::kReachedRoot;
        return out;
      }
      auto rec = resolve(key, next);
      if (!rec) {
        out.terminator = ScanTerminator::kNeedRemote;
        out.next = next;
        return out;
      }
      out.records.push_back(*rec);
      if (rec->created_by_merge()) {
        out.terminator = ScanTerminator::kHitMerge;
        return out;
      }
      if (out.records.size() == m) {
        out.terminator = ScanTerminator::kCountM;
        return out;
      }
      current = std::move(*rec);
    }
  }

  // Continuation entry point: v itself is the first record to deliver (it is
  // the `next` a previous hop could not resolve), then the walk proceeds as
  // usual with the remaining budget.
  Result<ScanOutcome> local_scan_resume(std::string_view key, const VersionId& v,
                                        std::uint32_t m) {
    if (m == 0) return ScanOutcome{{}, ScanTerminator::kCountM, {}};
    auto start = resolve(key, v);
    if (!start) return {start.code(), start.message()};
    if (start->created_by_merge()) {
      ScanOutcome out;
      out.records.push_back(*start);
      out.terminator = ScanTerminator::kHitMerge;
      return out;
    }
    auto rest = local_scan_k(key, v, m - 1);
    if (!rest) return rest;
    rest->records.insert(rest->records.begin(), std::move(*start));
    return rest;
  }

  // --------------------------------------------------------------- capacity

  VoidResult set_region_capacity(std::string_view key, std::uint64_t new_capacity) {
    auto& ks = space(key);
    std::lock_guard lock(ks.mu);
    if (new_capacity < ks.used)
      return {ErrorCode::kBelowUsage,
              "capacity " + std::to_string(new_capacity) + " below used " +
                  std::to_string(ks.used)};
    ks.capacity = new_capacity;
    return ok_void();
  }

  Result<KeyStats> region(std::string_view key) {
    auto ks = find_space(key);
    if (!ks) return {ErrorCode::kNotFound, "no region for key"};
    std::lock_guard lock(ks->mu);
    return KeyStats{ks->used, ks->capacity, ks->index.size()};
  }

  // ------------------------------------------------------------------- cache

  // Remote record fetched on behalf of the local record anchored at anchor_h.
  // Records whose primary placement is this node are never cached.
  bool cache_remote(const Digest& anchor_h, const NodeRecord& record) {
    if (record.payload.kind != PayloadKind::kFull) return false;
    if (route_probe_ &&
        route_probe_(record.key, record.version.n) == opt_.node_id)
      return false;
    if (!verify_record(record)) {
      tamper_detected_.fetch_add(1);
      return false;
    }
    return cache_.insert(anchor_h, record);
  }

  // ------------------------------------------------------------------- stats

  StoreStats stats() {
    StoreStats s;
    std::shared_lock map_lock(spaces_mu_);
    for (auto& [key, ks] : spaces_) {
      std::lock_guard lock(ks->mu);
      s.keys[key] = KeyStats{ks->used, ks->capacity, ks->index.size()};
    }
    s.cache_entries = cache_.entries();
    s.cache_bytes = cache_.bytes();
    s.cache_hits = cache_hits_.load();
    s.tamper_detected = tamper_detected_.load();
    return s;
  }

  // Stored payload encoding for a version, if present: kind + encoded bytes.
  std::optional<std::pair<PayloadKind, std::size_t>> peek_payload(
      std::string_view key, const Digest& h) {
    auto ks = find_space(key);
    if (!ks) return std::nullopt;
    std::lock_guard lock(ks->mu);
    auto it = ks->index.find(h);
    if (it == ks->index.end()) return std::nullopt;
    return std::make_pair(it->second.payload.kind, it->second.payload.encoded_size());
  }

  // Test hook: flip one payload byte so read-path verification can prove it
  // notices. Returns false if the version is not stored here.
  bool corrupt_payload_for_test(std::string_view key, const VersionId& v,
                                std::size_t byte_index) {
    auto ks = find_space(key);
    if (!ks) return false;
    std::lock_guard lock(ks->mu);
    auto it = ks->index.find(v.h);
    if (it == ks->index.end() || it->second.payload.bytes.empty()) return false;
    auto& bytes = it->second.payload.bytes;
    bytes[byte_index % bytes.size()] ^= 0x01;
    return true;
  }

  void erase_all_for_test() {
    std::unique_lock map_lock(spaces_mu_);
    spaces_.clear();
    cache_.clear();
  }

 private:
  struct KeySpace {
    std::mutex mu;
    std::uint64_t capacity;
    std::uint64_t used = 0;
    std::unordered_map<Digest, NodeRecord, DigestHash> index;
  };

  KeySpace& space(std::string_view key) {
    {
      std::shared_lock lock(spaces_mu_);
      auto it = spaces_.find(key);
      if (it != spaces_.end()) return *it->second;
    }
    std::unique_lock lock(spaces_mu_);
    auto& slot = spaces_[std::string(key)];
    if (!slot) {
      slot = std::make_unique<KeySpace>();
      slot->capacity = opt_.default_region_capacity;
    }
    return *slot;
  }

  KeySpace* find_space(std::string_view key) {
    std::shared_lock lock(spaces_mu_);
    auto it = spaces_.find(key);
    return it == spaces_.end() ? nullptr : it->second.get();
  }

  Result<LocalWrite> store_record(std::string_view key, const VersionId& version,
                                  std::vector<VersionId> parents,
                                  std::string_view value, bool compress) {
    auto& ks = space(key);
    std::optional<VersionId> published;
    {
      std::lock_guard lock(ks.mu);
      if (auto it = ks.index.find(version.h); it != ks.index.end())
        return LocalWrite{false, it->second.version, {}};

      Payload payload;
      if (compress)
        payload = compress_locked(ks, parents[0], value);
      else
        payload = Payload{PayloadKind::kFull, Bytes(value), {}, {}};

      if (ks.used + payload.encoded_size() > ks.capacity) {
        auto tag = sample_redirect_tag(key);
        if (!tag) return {tag.code(), tag.message()};
        return LocalWrite{true, {}, *tag};
      }

      NodeRecord rec;
      rec.key = std::string(key);
      rec.version = version;
      rec.parents = std::move(parents);
      rec.payload = std::move(payload);
      ks.used += rec.payload.encoded_size();
      ks.index.emplace(version.h, std::move(rec));
      published = version;
    }
    if (published && publish_) publish_(std::string(key), *published);
    return LocalWrite{false, version, {}};
  }

  // Delta base selection: the parent itself when it is local and full,
  // otherwise the nearest full ancestor reachable through locally stored
  // records. Walks parent edges breadth-first; remote gaps end that path.
  const NodeRecord* pick_delta_base_locked(KeySpace& ks, const VersionId& parent) {
    if (parent.is_root()) return nullptr;
    std::deque<Digest> frontier{parent.h};
    std::unordered_map<Digest, bool, DigestHash> seen;
    seen[parent.h] = true;
    while (!frontier.empty()) {
      Digest h = frontier.front();
      frontier.pop_front();
      auto it = ks.index.find(h);
      if (it == ks.index.end()) continue;  // not local; path ends
      if (it->second.payload.kind == PayloadKind::kFull) return &it->second;
      for (const auto& p : it->second.parents)
        if (!p.is_root() && !seen[p.h]) {
          seen[p.h] = true;
          frontier.push_back(p.h);
        }
    }
    return nullptr;
  }

  Payload compress_locked(KeySpace& ks, const VersionId& parent,
                          std::string_view value) {
    const NodeRecord* base = pick_delta_base_locked(ks, parent);
    if (base != nullptr) {
      const DeltaCodec* codec = codecs_.find(kBuiltinCodec);
      Bytes delta = codec->compress(base->payload.bytes, value);
      if (delta.size() < value.size())
        return Payload{PayloadKind::kDelta, std::move(delta), base->version.h,
                       kBuiltinCodec};
    }
    return Payload{PayloadKind::kFull, Bytes(value), {}, {}};
  }

  Result<NodeRecord> materialize_locked(KeySpace& ks, const NodeRecord& rec) {
    if (rec.payload.kind == PayloadKind::kFull) return rec;
    NodeRecord out = rec;
    Bytes delta = rec.payload.bytes;
    Digest base_h = rec.payload.delta_base;
    std::string codec_name = rec.payload.codec;
    for (int depth = 0; depth < 64; ++depth) {
      auto it = ks.index.find(base_h);
      if (it == ks.index.end())
        return {ErrorCode::kCorruptDelta, "delta base missing"};
      if (it->second.payload.kind == PayloadKind::kFull) {
        const DeltaCodec* codec = codecs_.find(codec_name);
        if (codec == nullptr)
          return {ErrorCode::kCorruptDelta, "unknown codec " + codec_name};
        auto full = codec->decompress(it->second.payload.bytes, delta);
        if (!full) return {full.code(), full.message()};
        out.payload = Payload{PayloadKind::kFull, std::move(*full), {}, {}};
        return out;
      }
      base_h = it->second.payload.delta_base;
    }
    return {ErrorCode::kCorruptDelta, "delta chain too deep"};
  }

  // Record for (key, v) with a full value, from the index or the cache.
  Result<NodeRecord> resolve(std::string_view key, const VersionId& v) {
    {
      auto ks = find_space(key);
      if (ks) {
        std::lock_guard lock(ks->mu);
        auto it = ks->index.find(v.h);
        if (it != ks->index.end()) return materialize_locked(*ks, it->second);
      }
    }
    if (auto cached = cache_.lookup(v.h); cached && cached->key == key) {
      cache_hits_.fetch_add(1);
      return *cached;
    }
    return {ErrorCode::kNotFound, "version not stored on this node"};
  }

  // Rejection-sample an 8-byte tag that the ring places on some other node.
  Result<std::string> sample_redirect_tag(std::string_view key) {
    if (!route_probe_)
      return {ErrorCode::kRegionExhaustedNoAlternative,
              "region full and no other node exists"};
    std::lock_guard lock(rng_mu_);
    for (int attempt = 0; attempt < kRedirectSampleAttempts; ++attempt) {
      std::string tag(8, '\0');
      std::uint64_t bits = rng_();
      for (int i = 0; i < 8; ++i) tag[i] = static_cast<char>(bits >> (8 * i));
      if (route_probe_(key, tag) != opt_.node_id) return tag;
    }
    return {ErrorCode::kRegionExhaustedNoAlternative,
            "no alternative placement found"};
  }

  Options opt_;
  CodecRegistry codecs_;
  PredecessorCache cache_;
  RouteProbe route_probe_;
  PublishHook publish_;
  std::mutex rng_mu_;
  std::mt19937_64 rng_;
  std::atomic<std::uint64_t> tamper_detected_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
  std::shared_mutex spaces_mu_;
  std::map<std::string, std::unique_ptr<KeySpace>, std::less<>> spaces_;
};

}  // namespace vstore
