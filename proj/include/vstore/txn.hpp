#pragma once

// Snapshot-isolation transactions over the versioned store.
//
// A single coordinator issues transaction ids and snapshot descriptors; the
// descriptor (high_water, exceptions) decides which committed writes a
// transaction may observe: tid 0 (the implicit bootstrap) always, any tid at
// or below the high-water mark unless it was still active when the snapshot
// was taken.
//
// Per key, an active-version table (AV) points at the latest committed
// version plus the tid that committed it. The implicit row is (ROOT, 0).
// Reads resolve through the AV: an AV row outside the snapshot means the
// world moved on mid-transaction — the transaction aborts (stickily) rather
// than read inconsistently. Writes create real version records immediately,
// as a private branch off the snapshot base; only commit moves the AV.
//
// Commit latches the write-set keys in sorted order without waiting (busy
// latch = abort), re-validates that every base is still the AV latest
// (first committer wins), installs the new versions, releases, and marks the
// transaction committed. With fast_path_commit off, installation writes an
// explicit merge record joining the private branch back to the base instead
// of moving the pointer directly.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "client.hpp"
#include "common.hpp"
#include "transport.hpp"
#include "version.hpp"
#include "wire.hpp"

namespace vstore {

// ---------------------------------------------------------------- snapshots

struct SnapshotDescriptor {
  std::uint64_t high_water = 0;
  std::set<std::uint64_t> exceptions;  // tids <= high_water still unsettled

  bool contains(std::uint64_t tid) const {
    if (tid == 0) return true;
    return tid <= high_water && exceptions.count(tid) == 0;
  }
};

enum class TxnState : std::uint8_t { kActive = 0, kCommitted = 1, kAborted = 2 };

class TxnCoordinator {
 public:
  struct Begin {
    std::uint64_t tid = 0;
    SnapshotDescriptor snapshot;
  };

  Begin begin() {
    std::lock_guard lock(mu_);
    Begin b;
    b.tid = ++last_tid_;
    b.snapshot.high_water = b.tid - 1;
    b.snapshot.exceptions = active_;
    active_.insert(b.tid);
    states_[b.tid] = TxnState::kActive;
    return b;
  }

  VoidResult set_committed(std::uint64_t tid) { return settle(tid, TxnState::kCommitted); }
  VoidResult set_aborted(std::uint64_t tid) { return settle(tid, TxnState::kAborted); }

  std::optional<TxnState> state(std::uint64_t tid) const {
    std::lock_guard lock(mu_);
    auto it = states_.find(tid);
    if (it == states_.end()) return std::nullopt;
    return it->second;
  }

 private:
  VoidResult settle(std::uint64_t tid, TxnState to) {
    std::lock_guard lock(mu_);
    auto it = states_.find(tid);
    if (it == states_.end()) return {ErrorCode::kUnknownTid, "no such transaction"};
    if (it->second != TxnState::kActive)
      return {ErrorCode::kAlreadyTerminal, "transaction already settled"};
    it->second = to;
    active_.erase(tid);
    return ok_void();
  }

  mutable std::mutex mu_;
  std::uint64_t last_tid_ = 0;
  std::set<std::uint64_t> active_;
  std::map<std::uint64_t, TxnState> states_;
};

// ------------------------------------------------------------------ AV table

class AVTable {
 public:
  struct Row {
    VersionId latest;              // ROOT until the first commit
    std::uint64_t commit_tid = 0;  // 0 = implicit bootstrap
  };

  Row get(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = rows_.find(key);
    return it == rows_.end() ? Row{} : it->second;
  }

  // No queue: either take the free latch (or re-take one's own) or fail.
  bool try_latch(const std::string& key, std::uint64_t tid) {
    std::lock_guard lock(mu_);
    auto& holder = latches_[key];
    if (holder == 0 || holder == tid) {
      holder = tid;
      return true;
    }
    return false;
  }

  VoidResult unlatch(const std::string& key, std::uint64_t tid) {
    std::lock_guard lock(mu_);
    auto it = latches_.find(key);
    if (it == latches_.end() || it->second != tid)
      return {ErrorCode::kBadRequest, "not the latch holder"};
    it->second = 0;
    return ok_void();
  }

  VoidResult set_latest(const std::string& key, Row row, std::uint64_t holder_tid) {
    std::lock_guard lock(mu_);
    auto it = latches_.find(key);
    if (it == latches_.end() || it->second != holder_tid)
      return {ErrorCode::kBadRequest, "updates require holding the latch"};
    rows_[key] = std::move(row);
    return ok_void();
  }

 private:
  mutable std::mutex mu_;
  std::map<std::string, Row> rows_;
  std::map<std::string, std::uint64_t> latches_;
};

// ------------------------------------------------------------------- engine

class TxnService {
 public:
  struct Options {
    // Commit moves the AV pointer straight to the private version. Off, it
    // writes an explicit merge record joining the branch back to its base.
    bool fast_path_commit = true;
  };

  explicit TxnService(ClientSession session)
      : TxnService(std::move(session), Options()) {}
  TxnService(ClientSession session, Options opt)
      : session_(std::move(session)), opt_(opt) {}

  TxnCoordinator& coordinator() { return coord_; }
  AVTable& av() { return av_; }

  TxnCoordinator::Begin begin() {
    auto b = coord_.begin();
    auto ctx = std::make_shared<Ctx>();
    ctx->tid = b.tid;
    ctx->snapshot = b.snapshot;
    std::lock_guard lock(ctx_mu_);
    ctxs_[b.tid] = ctx;
    return b;
  }

  Result<std::pair<VersionId, Bytes>> read(std::uint64_t tid, const std::string& key) {
    auto ctx = find_ctx(tid);
    if (!ctx) return {ErrorCode::kUnknownTid, "no such transaction"};
    std::lock_guard lock((*ctx)->mu);
    if ((*ctx)->aborted) return {ErrorCode::kTxnAborted, "transaction is aborted"};

    if (auto it = (*ctx)->writes.find(key); it != (*ctx)->writes.end())
      return std::make_pair(it->second.version, it->second.value);

    AVTable::Row row = av_.get(key);
    if (!(*ctx)->snapshot.contains(row.commit_tid)) {
      abort_locked(**ctx);
      return {ErrorCode::kTxnAborted,
              "a concurrent transaction committed this key after the snapshot"};
    }
    if (row.latest.is_root())
      return {ErrorCode::kKeyUninitialized, "no committed value for key"};
    auto value = session_.get_value(key, row.latest);
    if (!value) return {value.code(), value.message()};
    return std::make_pair(row.latest, *value);
  }

  Result<VersionId> write(std::uint64_t tid, const std::string& key,
                          std::string_view value) {
    auto ctx = find_ctx(tid);
    if (!ctx) return {ErrorCode::kUnknownTid, "no such transaction"};
    std::lock_guard lock((*ctx)->mu);
    if ((*ctx)->aborted) return {ErrorCode::kTxnAborted, "transaction is aborted"};

    VersionId base;
    VersionId parent;
    if (auto it = (*ctx)->writes.find(key); it != (*ctx)->writes.end()) {
      base = it->second.base;        // conflict check stays against the snapshot
      parent = it->second.version;   // the private branch keeps growing
    } else {
      AVTable::Row row = av_.get(key);
      if (!(*ctx)->snapshot.contains(row.commit_tid)) {
        abort_locked(**ctx);
        return {ErrorCode::kTxnAborted,
                "a concurrent transaction committed this key after the snapshot"};
      }
      base = row.latest;
      parent = row.latest;
    }

    auto version = session_.put(key, parent, value);
    if (!version) return {version.code(), version.message()};
    (*ctx)->writes[key] = WriteEntry{base, *version, Bytes(value)};
    return *version;
  }

  // true = committed, false = aborted by validation or latch contention.
  Result<bool> commit(std::uint64_t tid) {
    auto ctx = find_ctx(tid);
    if (!ctx) return {ErrorCode::kUnknownTid, "no such transaction"};
    std::lock_guard lock((*ctx)->mu);
    if ((*ctx)->aborted) {
      drop_ctx(tid);
      return false;
    }

    if ((*ctx)->writes.empty()) {
      coord_.set_committed(tid);
      drop_ctx(tid);
      return true;
    }

    // Latch in sorted key order, giving up on the first busy latch.
    std::vector<std::string> held;
    for (const auto& [key, entry] : (*ctx)->writes) {
      (void)entry;
      if (!av_.try_latch(key, tid)) {
        for (const auto& k : held) av_.unlatch(k, tid);
        abort_locked(**ctx);
        drop_ctx(tid);
        return false;
      }
      held.push_back(key);
    }

    // First committer wins: every base must still be the AV latest.
    for (const auto& [key, entry] : (*ctx)->writes) {
      if (!same_version(av_.get(key).latest, entry.base)) {
        for (const auto& k : held) av_.unlatch(k, tid);
        abort_locked(**ctx);
        drop_ctx(tid);
        return false;
      }
    }

    for (const auto& [key, entry] : (*ctx)->writes) {
      VersionId install = entry.version;
      if (!opt_.fast_path_commit && !entry.base.is_root()) {
        auto merged = session_.merge(key, entry.version, entry.base, entry.value);
        if (merged) install = *merged;
      }
      av_.set_latest(key, {install, tid}, tid);
    }
    for (const auto& k : held) av_.unlatch(k, tid);
    coord_.set_committed(tid);
    drop_ctx(tid);
    return true;
  }

  VoidResult abort(std::uint64_t tid) {
    auto ctx = find_ctx(tid);
    if (!ctx) return {ErrorCode::kUnknownTid, "no such transaction"};
    {
      std::lock_guard lock((*ctx)->mu);
      if (!(*ctx)->aborted) abort_locked(**ctx);
    }
    drop_ctx(tid);
    return ok_void();
  }

  // ------------------------------------------------------------ wire surface

  wire::Frame handle(const std::string& user, const wire::Frame& req) {
    (void)user;
    try {
      ByteReader in(req.body);
      in.read_lp();  // user id, already parsed by the caller
      switch (req.opcode) {
        case wire::kTxnBegin: {
          auto b = begin();
          std::string body;
          put_u64be(body, b.tid);
          put_u64be(body, b.snapshot.high_water);
          put_u32be(body, static_cast<std::uint32_t>(b.snapshot.exceptions.size()));
          for (std::uint64_t t : b.snapshot.exceptions) put_u64be(body, t);
          return wire::response(wire::kTxnBegin, Status::kSuccess, body);
        }
        case wire::kTxnRead: {
          std::uint64_t tid = in.read_u64();
          std::string key(in.read_lp());
          auto res = read(tid, key);
          if (!res) return wire::error_response(wire::kTxnRead, res.code(), res.message());
          std::string body;
          encode_version(body, res->first);
          put_lp(body, res->second);
          return wire::response(wire::kTxnRead, Status::kSuccess, body);
        }
        case wire::kTxnWrite: {
          std::uint64_t tid = in.read_u64();
          std::string key(in.read_lp());
          std::string value(in.read_lp());
          auto res = write(tid, key, value);
          if (!res) return wire::error_response(wire::kTxnWrite, res.code(), res.message());
          return wire::response(wire::kTxnWrite, Status::kSuccess, encode_version(*res));
        }
        case wire::kTxnCommit: {
          std::uint64_t tid = in.read_u64();
          auto res = commit(tid);
          if (!res) return wire::error_response(wire::kTxnCommit, res.code(), res.message());
          std::string body;
          body.push_back(*res ? 1 : 0);
          return wire::response(wire::kTxnCommit, Status::kSuccess, body);
        }
        case wire::kTxnAbort: {
          std::uint64_t tid = in.read_u64();
          auto res = abort(tid);
          if (!res) return wire::error_response(wire::kTxnAbort, res.code(), res.message());
          return wire::response(wire::kTxnAbort, Status::kSuccess);
        }
        case wire::kAvGet: {
          std::string key(in.read_lp());
          AVTable::Row row = av_.get(key);
          std::string body;
          encode_version(body, row.latest);
          put_u64be(body, row.commit_tid);
          return wire::response(wire::kAvGet, Status::kSuccess, body);
        }
        case wire::kAvSet: {
          std::string key(in.read_lp());
          VersionId v = decode_version(in);
          std::uint64_t commit_tid = in.read_u64();
          std::uint64_t holder = in.read_u64();
          auto res = av_.set_latest(key, {v, commit_tid}, holder);
          if (!res) return wire::error_response(wire::kAvSet, res.code(), res.message());
          return wire::response(wire::kAvSet, Status::kSuccess);
        }
        case wire::kAvLock: {
          std::string key(in.read_lp());
          std::uint64_t tid = in.read_u64();
          std::string body;
          body.push_back(av_.try_latch(key, tid) ? 1 : 0);
          return wire::response(wire::kAvLock, Status::kSuccess, body);
        }
        case wire::kAvUnlock: {
          std::string key(in.read_lp());
          std::uint64_t tid = in.read_u64();
          auto res = av_.unlatch(key, tid);
          if (!res) return wire::error_response(wire::kAvUnlock, res.code(), res.message());
          return wire::response(wire::kAvUnlock, Status::kSuccess);
        }
        default:
          return wire::error_response(req.opcode, ErrorCode::kBadRequest,
                                      "not a transaction opcode");
      }
    } catch (const std::out_of_range& e) {
      return wire::error_response(req.opcode, ErrorCode::kBadRequest, e.what());
    }
  }

 private:
  struct WriteEntry {
    VersionId base;     // AV latest at first write: the conflict-check anchor
    VersionId version;  // tip of the private branch
    Bytes value;
  };

  struct Ctx {
    std::uint64_t tid = 0;
    SnapshotDescriptor snapshot;
    bool aborted = false;
    std::map<std::string, WriteEntry> writes;
    std::mutex mu;
  };

  // Only transactions begun through this service have a context; the exact
  // snapshot descriptor is pinned at begin() and never reconstructed.
  std::optional<std::shared_ptr<Ctx>> find_ctx(std::uint64_t tid) {
    std::lock_guard lock(ctx_mu_);
    auto it = ctxs_.find(tid);
    if (it == ctxs_.end()) return std::nullopt;
    return it->second;
  }

  void abort_locked(Ctx& ctx) {
    ctx.aborted = true;
    coord_.set_aborted(ctx.tid);
  }

  void drop_ctx(std::uint64_t tid) {
    std::lock_guard lock(ctx_mu_);
    ctxs_.erase(tid);
  }

  ClientSession session_;
  Options opt_;
  TxnCoordinator coord_;
  AVTable av_;
  std::mutex ctx_mu_;
  std::map<std::uint64_t, std::shared_ptr<Ctx>> ctxs_;
};

// --------------------------------------------------------------- wire client

// Client-side handle speaking the transaction opcodes to the coordinator
// node over any transport.
class TxnClient {
 public:
  TxnClient(Transport& net, NodeId coordinator, std::string user)
      : net_(net), node_(coordinator), user_(std::move(user)) {}

  Result<TxnCoordinator::Begin> begin() {
    auto reply = roundtrip(wire::kTxnBegin, {});
    if (!reply) return {reply.code(), reply.message()};
    ByteReader in(*reply);
    TxnCoordinator::Begin b;
    b.tid = in.read_u64();
    b.snapshot.high_water = in.read_u64();
    std::uint32_t count = in.read_u32();
    for (std::uint32_t i = 0; i < count; ++i) b.snapshot.exceptions.insert(in.read_u64());
    return b;
  }

  Result<std::pair<VersionId, Bytes>> read(std::uint64_t tid, std::string_view key) {
    std::string rest;
    put_u64be(rest, tid);
    put_lp(rest, key);
    auto reply = roundtrip(wire::kTxnRead, rest);
    if (!reply) return {reply.code(), reply.message()};
    ByteReader in(*reply);
    VersionId v = decode_version(in);
    return std::make_pair(v, Bytes(in.read_lp()));
  }

  Result<VersionId> write(std::uint64_t tid, std::string_view key,
                          std::string_view value) {
    std::string rest;
    put_u64be(rest, tid);
    put_lp(rest, key);
    put_lp(rest, value);
    auto reply = roundtrip(wire::kTxnWrite, rest);
    if (!reply) return {reply.code(), reply.message()};
    ByteReader in(*reply);
    return decode_version(in);
  }

  Result<bool> commit(std::uint64_t tid) {
    std::string rest;
    put_u64be(rest, tid);
    auto reply = roundtrip(wire::kTxnCommit, rest);
    if (!reply) return {reply.code(), reply.message()};
    return !reply->empty() && (*reply)[0] != 0;
  }

  VoidResult abort(std::uint64_t tid) {
    std::string rest;
    put_u64be(rest, tid);
    auto reply = roundtrip(wire::kTxnAbort, rest);
    if (!reply) return {reply.code(), reply.message()};
    return ok_void();
  }

  Result<std::pair<VersionId, std::uint64_t>> av_get(std::string_view key) {
    std::string rest;
    put_lp(rest, key);
    auto reply = roundtrip(wire::kAvGet, rest);
    if (!reply) return {reply.code(), reply.message()};
    ByteReader in(*reply);
    VersionId v = decode_version(in);
    return std::make_pair(v, in.read_u64());
  }

  Result<bool> av_lock(std::string_view key, std::uint64_t tid) {
    std::string rest;
    put_lp(rest, key);
    put_u64be(rest, tid);
    auto reply = roundtrip(wire::kAvLock, rest);
    if (!reply) return {reply.code(), reply.message()};
    return !reply->empty() && (*reply)[0] != 0;
  }

  VoidResult av_unlock(std::string_view key, std::uint64_t tid) {
    std::string rest;
    put_lp(rest, key);
    put_u64be(rest, tid);
    auto reply = roundtrip(wire::kAvUnlock, rest);
    if (!reply) return {reply.code(), reply.message()};
    return ok_void();
  }

  VoidResult av_set(std::string_view key, const VersionId& v, std::uint64_t commit_tid,
                    std::uint64_t holder_tid) {
    std::string rest;
    put_lp(rest, key);
    encode_version(rest, v);
    put_u64be(rest, commit_tid);
    put_u64be(rest, holder_tid);
    auto reply = roundtrip(wire::kAvSet, rest);
    if (!reply) return {reply.code(), reply.message()};
    return ok_void();
  }

 private:
  Result<std::string> roundtrip(std::uint8_t opcode, std::string_view rest) {
    auto resp = net_.call(node_, wire::request(opcode, user_, rest));
    if (!resp) return {ErrorCode::kIOFailure, "coordinator unreachable"};
    wire::Reply reply = wire::parse_reply(*resp);
    if (reply.status == Status::kError) return {reply.code, reply.message};
    if (reply.status != Status::kSuccess)
      return {ErrorCode::kBadRequest, "unexpected status"};
    return reply.payload;
  }

  Transport& net_;
  NodeId node_;
  std::string user_;
};

}  // namespace vstore
