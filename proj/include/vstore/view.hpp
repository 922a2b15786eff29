#pragma once

// View-layer state kept by every server: read policies, named merge
// functions, and the notification broker.
//
// Policies: a key is world-readable until its first POLICY_PUT, which names
// the requester as owner and restricts reads. Grants are append-only — a user
// may read exactly the versions listed for them (the owner reads everything).
// Grant batches are broadcast; every node learns the restriction, and nodes
// that store data for the key keep the grant as a policy record (so a batch
// costs at most one record per server holding the object).
//
// Merge functions: named (ancestor, v1, v2) -> merged-or-conflict callables.
// Built-ins: "append" concatenates v1 then v2; "aggregation" treats values as
// 8-byte BE integers and combines ancestor + both diffs; "choose-one" takes
// the first argument. Conflicts never write.
//
// Broker: per-server fan-out of (key, version) events to subscriptions.
// Publishing only enqueues — delivery runs separately, retries until the sink
// accepts, and drops the oldest events past a bounded backlog (counted).

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "common.hpp"
#include "version.hpp"

namespace vstore {

// ------------------------------------------------------------------ policies

class AccessController {
 public:
  struct ApplyResult {
    bool stored_record = false;  // counted toward per-grant record totals
  };

  // First application restricts the key and fixes ownership. Later
  // applications must come from the owner. holds_key says whether this node
  // stores any version of the key; only then is the grant counted as a
  // stored policy record.
  Result<ApplyResult> apply_policy(const std::string& requester, const std::string& key,
                                   const std::string& grantee,
                                   const std::vector<VersionId>& versions,
                                   bool holds_key) {
    std::lock_guard lock(mu_);
    auto& st = keys_[key];
    if (!st.restricted) {
      st.restricted = true;
      st.owner = requester;
    } else if (st.owner != requester) {
      return {ErrorCode::kNotOwner, "policy writes require the key owner"};
    }
    auto& granted = st.grants[grantee];
    for (const auto& v : versions) granted.insert(v.h);
    ApplyResult res;
    if (holds_key) {
      st.policy_records += 1;
      res.stored_record = true;
    }
    return res;
  }

  // May `user` read version h of `key` as served from this node?
  bool check_read(const std::string& user, const std::string& key, const Digest& h) const {
    std::lock_guard lock(mu_);
    auto it = keys_.find(key);
    if (it == keys_.end() || !it->second.restricted) return true;
    const auto& st = it->second;
    if (user == st.owner) return true;
    auto git = st.grants.find(user);
    return git != st.grants.end() && git->second.count(h) != 0;
  }

  bool restricted(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = keys_.find(key);
    return it != keys_.end() && it->second.restricted;
  }

  std::optional<std::string> owner(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = keys_.find(key);
    if (it == keys_.end() || !it->second.restricted) return std::nullopt;
    return it->second.owner;
  }

  std::uint64_t policy_records(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = keys_.find(key);
    return it == keys_.end() ? 0 : it->second.policy_records;
  }

  void clear() {
    std::lock_guard lock(mu_);
    keys_.clear();
  }

 private:
  struct KeyPolicy {
    bool restricted = false;
    std::string owner;
    std::map<std::string, std::set<Digest>> grants;
    std::uint64_t policy_records = 0;
  };

  mutable std::mutex mu_;
  std::map<std::string, KeyPolicy> keys_;
};

// ------------------------------------------------------------ merge functions

// Returns the merged value, or nullopt to signal a conflict (nothing is
// written in that case).
using MergeFn = std::function<std::optional<Bytes>(
    std::string_view ancestor, std::string_view v1, std::string_view v2)>;

inline std::uint64_t be64_or_zero(std::string_view v) {
  if (v.size() != 8) return 0;
  return get_u64be(reinterpret_cast<const unsigned char*>(v.data()));
}

class MergeFunctionRegistry {
 public:
  MergeFunctionRegistry() {
    fns_["append"] = [](std::string_view, std::string_view v1,
                        std::string_view v2) -> std::optional<Bytes> {
      Bytes out(v1);
      out += v2;
      return out;
    };
    fns_["aggregation"] = [](std::string_view ancestor, std::string_view v1,
                             std::string_view v2) -> std::optional<Bytes> {
      std::uint64_t base = be64_or_zero(ancestor);
      std::uint64_t a = be64_or_zero(v1);
      std::uint64_t b = be64_or_zero(v2);
      std::uint64_t merged = base + (a - base) + (b - base);
      Bytes out;
      put_u64be(out, merged);
      return out;
    };
    fns_["choose-one"] = [](std::string_view, std::string_view v1,
                            std::string_view) -> std::optional<Bytes> {
      return Bytes(v1);
    };
  }

  void register_fn(const std::string& name, MergeFn fn) { fns_[name] = std::move(fn); }

  const MergeFn* find(const std::string& name) const {
    auto it = fns_.find(name);
    return it == fns_.end() ? nullptr : &it->second;
  }

 private:
  std::map<std::string, MergeFn> fns_;
};

// -------------------------------------------------------------------- broker

struct Notification {
  std::string key;
  VersionId version;
};

class Broker {
 public:
  static constexpr std::size_t kMaxBacklog = 1 << 16;

  // Sink returns true when the event was handed over; false = try again on a
  // later drain (subscriber unreachable).
  using Sink = std::function<bool(const Notification&)>;

  std::uint64_t subscribe(const std::string& key, Sink sink) {
    std::lock_guard lock(mu_);
    auto id = next_id_++;
    subs_[id] = Sub{key, std::move(sink), {}};
    return id;
  }

  void unsubscribe(std::uint64_t id) {
    std::lock_guard lock(mu_);
    subs_.erase(id);
  }

  // Called from the write path: enqueue only, never deliver inline.
  void publish(const std::string& key, const VersionId& version) {
    std::lock_guard lock(mu_);
    for (auto& [id, sub] : subs_) {
      if (sub.key != key) continue;
      if (sub.backlog.size() >= kMaxBacklog) {
        sub.backlog.pop_front();
        ++dropped_;
      }
      sub.backlog.push_back(Notification{key, version});
    }
  }

  // Push every backlog as far as its sink accepts, preserving per-key order.
  // Returns the number of events handed over.
  std::size_t drain() {
    std::lock_guard lock(mu_);
    std::size_t delivered = 0;
    for (auto& [id, sub] : subs_) {
      while (!sub.backlog.empty()) {
        if (!sub.sink(sub.backlog.front())) break;
        sub.backlog.pop_front();
        ++delivered;
      }
    }
    return delivered;
  }

  std::size_t pending() const {
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [id, sub] : subs_) n += sub.backlog.size();
    return n;
  }

  std::uint64_t dropped() const {
    std::lock_guard lock(mu_);
    return dropped_;
  }

  std::size_t subscriptions() const {
    std::lock_guard lock(mu_);
    return subs_.size();
  }

  void clear() {
    std::lock_guard lock(mu_);
    subs_.clear();
    dropped_ = 0;
  }

 private:
  struct Sub {
    std::string key;
    Sink sink;
    std::deque<Notification> backlog;
  };

  mutable std::mutex mu_;
  std::uint64_t next_id_ = 1;
  std::uint64_t dropped_ = 0;
  std::map<std::uint64_t, Sub> subs_;
};

}  // namespace vstore
