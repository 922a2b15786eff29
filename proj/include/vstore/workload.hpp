#pragma once

// Deterministic workload harness. A WorkloadSpec plus a transport environment
// produce a MetricsReport — newline-delimited JSON, one object per metric.
// Generators are pure functions of (spec, seed): the same configuration always
// yields the same operation stream, and on the simulated network the same
// byte-identical report. run_sim() builds a simulated cluster (with optional
// fault schedule) around run_workload(); the TCP runner reuses run_workload()
// with a socket transport.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "client.hpp"
#include "common.hpp"
#include "sim.hpp"
#include "transport.hpp"
#include "txn.hpp"
#include "wire.hpp"

namespace vstore {

// ------------------------------------------------------------- Zipf sampling
//
// Rejection-inversion sampling for the Zipf distribution (Hörmann &
// Derflinger's method, the same construction used by the Apache Commons
// samplers): invert the integral of a continuous majorizing hat of the
// discrete probabilities, then accept/reject. Exponent 0 degenerates to the
// uniform distribution and is handled directly.
class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t elements, double exponent)
      : n_(elements), s_(exponent) {
    if (s_ > 0.0 && n_ > 1) {
      h_x1_ = h_integral(1.5) - 1.0;
      h_n_ = h_integral(static_cast<double>(n_) + 0.5);
      threshold_ = 2.0 - h_integral_inverse(h_integral(2.5) - h(2.0));
    }
  }

  std::uint64_t elements() const { return n_; }
  double exponent() const { return s_; }

  // Draws from {1, …, elements}; 1 is the most probable element.
  template <class Rng>
  std::uint64_t operator()(Rng& rng) {
    if (n_ <= 1) return 1;
    if (s_ == 0.0) return 1 + rng() % n_;
    for (;;) {
      double u = h_n_ + unit(rng) * (h_x1_ - h_n_);
      double x = h_integral_inverse(u);
      double kd = std::floor(x + 0.5);
      if (kd < 1.0) kd = 1.0;
      if (kd > static_cast<double>(n_)) kd = static_cast<double>(n_);
      std::uint64_t k = static_cast<std::uint64_t>(kd);
      if (kd - x <= threshold_ || u >= h_integral(kd + 0.5) - h(kd)) return k;
    }
  }

 private:
  // Uniform double in [0,1) built from the top 53 bits of the generator —
  // pinned arithmetic, no library-defined distribution involved.
  template <class Rng>
  static double unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
  }

  // log(1+x)/x, stable near zero.
  static double helper1(double x) { return x != 0.0 ? std::log1p(x) / x : 1.0; }
  // (e^x - 1)/x, stable near zero.
  static double helper2(double x) { return x != 0.0 ? std::expm1(x) / x : 1.0; }

  double h(double x) const { return std::exp(-s_ * std::log(x)); }

  // Antiderivative of h; the s == 1 singularity cancels inside helper2.
  double h_integral(double x) const {
    double lx = std::log(x);
    return helper2((1.0 - s_) * lx) * lx;
  }

  double h_integral_inverse(double u) const {
    double t = u * (1.0 - s_);
    if (t < -1.0) t = -1.0;  // clamp round-off at the left tail
    return std::exp(helper1(t) * u);
  }

  std::uint64_t n_;
  double s_;
  double h_x1_ = 0.0;
  double h_n_ = 0.0;
  double threshold_ = 0.0;
};

// -------------------------------------------------------- counting transport

// Wraps any transport and counts outgoing frames per opcode. The workload
// runners measure client round trips with it, so the numbers mean the same
// thing over the simulated switchboard and over TCP.
class CountingTransport : public Transport {
 public:
  explicit CountingTransport(Transport& inner) : inner_(inner) {}

  std::optional<wire::Frame> call(NodeId node, const wire::Frame& request) override {
    bump(request.opcode);
    return inner_.call(node, request);
  }

  Result<std::uint64_t> subscribe(NodeId node, std::string_view user,
                                  std::string_view key, Broker::Sink sink) override {
    bump(wire::kSubscribe);
    return inner_.subscribe(node, user, key, std::move(sink));
  }

  void reset() {
    std::lock_guard lock(mu_);
    counts_.clear();
  }

  std::uint64_t count(std::uint8_t opcode) const {
    std::lock_guard lock(mu_);
    auto it = counts_.find(opcode);
    return it == counts_.end() ? 0 : it->second;
  }

  std::uint64_t total() const {
    std::lock_guard lock(mu_);
    std::uint64_t sum = 0;
    for (const auto& [op, n] : counts_) sum += n;
    return sum;
  }

  std::map<std::uint8_t, std::uint64_t> snapshot() const {
    std::lock_guard lock(mu_);
    return counts_;
  }

 private:
  void bump(std::uint8_t opcode) {
    std::lock_guard lock(mu_);
    ++counts_[opcode];
  }

  Transport& inner_;
  mutable std::mutex mu_;
  std::map<std::uint8_t, std::uint64_t> counts_;
};

inline std::string opcode_name(std::uint8_t opcode) {
  switch (opcode) {
    case wire::kPut: return "put";
    case wire::kGet: return "get";
    case wire::kMerge: return "merge";
    case wire::kGetPrev: return "get_prev";
    case wire::kGetKPrev: return "get_k_prev";
    case wire::kSubscribe: return "subscribe";
    case wire::kPolicyPut: return "policy_put";
    case wire::kAdminSetT: return "admin_set_t";
    case wire::kStats: return "stats";
    case wire::kTxnBegin: return "txn_begin";
    case wire::kTxnRead: return "txn_read";
    case wire::kTxnWrite: return "txn_write";
    case wire::kTxnCommit: return "txn_commit";
    case wire::kTxnAbort: return "txn_abort";
    case wire::kAvGet: return "av_get";
    case wire::kAvSet: return "av_set";
    case wire::kAvLock: return "av_lock";
    case wire::kAvUnlock: return "av_unlock";
    case wire::kEvent: return "event";
    default: {
      char buf[16];
      std::snprintf(buf, sizeof buf, "op_%02x", opcode);
      return buf;
    }
  }
}

// ------------------------------------------------------------ metrics report

// Ordered list of named metrics, serialized as ND-JSON (one object per line).
// nlohmann emits object keys alphabetically and numbers via shortest
// round-trip, so a report serializes to identical bytes across runs.
class MetricsReport {
 public:
  void add(std::string name, nlohmann::json value) {
    lines_.push_back({{"metric", std::move(name)}, {"value", std::move(value)}});
  }

  std::string to_ndjson() const {
    std::string out;
    for (const auto& line : lines_) {
      out += line.dump();
      out += '\n';
    }
    return out;
  }

  const nlohmann::json* find(std::string_view name) const {
    for (const auto& line : lines_)
      if (line.at("metric").get_ref<const std::string&>() == name)
        return &line.at("value");
    return nullptr;
  }

  std::uint64_t u64(std::string_view name) const {
    const auto* v = find(name);
    return v != nullptr && v->is_number() ? v->get<std::uint64_t>() : 0;
  }

  double dbl(std::string_view name) const {
    const auto* v = find(name);
    return v != nullptr && v->is_number() ? v->get<double>() : 0.0;
  }

  const std::vector<nlohmann::json>& lines() const { return lines_; }

 private:
  std::vector<nlohmann::json> lines_;
};

// ------------------------------------------------------------ workload specs

enum class WorkloadKind {
  kMixed,         // random reads/writes over a key universe, with subscriptions
  kScanChain,     // linear history; batched scan vs one-hop-at-a-time walk
  kDelta,         // one chain of small edits — exercises delta compression
  kRandom,        // one chain of unrelated values — compression must bow out
  kTxnIncrement,  // concurrent counter increments through the transaction layer
};

inline std::optional<WorkloadKind> parse_workload_kind(std::string_view name) {
  if (name == "mixed") return WorkloadKind::kMixed;
  if (name == "scan-chain") return WorkloadKind::kScanChain;
  if (name == "delta") return WorkloadKind::kDelta;
  if (name == "random") return WorkloadKind::kRandom;
  if (name == "txn-increment") return WorkloadKind::kTxnIncrement;
  return std::nullopt;
}

inline std::string to_string(WorkloadKind kind) {
  switch (kind) {
    case WorkloadKind::kMixed: return "mixed";
    case WorkloadKind::kScanChain: return "scan-chain";
    case WorkloadKind::kDelta: return "delta";
    case WorkloadKind::kRandom: return "random";
    case WorkloadKind::kTxnIncrement: return "txn-increment";
  }
  return "unknown";
}

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::kMixed;
  std::uint64_t operations = 1000;  // ops / versions / transactions, per kind
  std::uint64_t keys = 16;          // key universe (mixed, txn-increment)
  std::uint64_t record_size = 128;  // value bytes (mixed, delta, random, scan)
  double read_fraction = 0.5;       // mixed: probability an op is a read
  std::uint64_t chain_length = 40;  // scan-chain: versions in the history
  std::uint32_t scan_m = 32;        // scan-chain: records requested per scan
  std::uint64_t edit_window = 128;  // delta: span containing every edit
  std::uint64_t max_edit = 32;      // delta: bytes rewritten per version
  double zipf_exponent = 0.0;       // txn-increment: key skew (0 = uniform)
  std::uint64_t txn_group = 4;      // txn-increment: overlapping txns per round
  NodeId coordinator = 0;           // txn-increment: transaction service node
};

inline VoidResult validate(const WorkloadSpec& spec) {
  auto fail = [](std::string msg) {
    return VoidResult(ErrorCode::kConfigInvalid, std::move(msg));
  };
  if (spec.operations == 0) return fail("operations must be positive");
  if (spec.keys == 0) return fail("keys must be positive");
  if (spec.record_size == 0) return fail("record_size must be positive");
  if (!(spec.read_fraction >= 0.0 && spec.read_fraction <= 1.0))
    return fail("read_fraction must lie in [0, 1]");
  if (!(spec.zipf_exponent >= 0.0)) return fail("zipf_exponent must be >= 0");
  switch (spec.kind) {
    case WorkloadKind::kScanChain:
      if (spec.chain_length < 2) return fail("chain_length must be at least 2");
      if (spec.scan_m == 0) return fail("scan_m must be positive");
      break;
    case WorkloadKind::kDelta:
      if (spec.max_edit == 0) return fail("max_edit must be positive");
      if (spec.edit_window <= spec.max_edit)
        return fail("edit_window must exceed max_edit");
      if (spec.edit_window > spec.record_size)
        return fail("edit_window cannot exceed record_size");
      break;
    case WorkloadKind::kTxnIncrement:
      if (spec.txn_group == 0) return fail("txn_group must be positive");
      break;
    default:
      break;
  }
  return ok_void();
}

// Node unreachable over [from, to] simulator ticks; its state survives.
struct FaultWindow {
  NodeId node = 0;
  std::uint64_t from = 0;
  std::uint64_t to = 0;
};

// Node loses its stored state at tick `at` (and serves empty afterwards).
struct CrashEvent {
  NodeId node = 0;
  std::uint64_t at = 0;
};

struct SimRunConfig {
  SimConfig cluster;
  WorkloadSpec workload;
  std::vector<FaultWindow> downs;
  std::vector<CrashEvent> crashes;
};

inline VoidResult validate(const SimRunConfig& cfg) {
  auto fail = [](std::string msg) {
    return VoidResult(ErrorCode::kConfigInvalid, std::move(msg));
  };
  if (cfg.cluster.nodes == 0) return fail("cluster needs at least one node");
  if (cfg.cluster.n_replicas == 0) return fail("n_replicas must be positive");
  if (cfg.cluster.n_replicas > cfg.cluster.nodes)
    return fail("n_replicas cannot exceed the node count");
  if (cfg.cluster.write_quorum == 0 ||
      cfg.cluster.write_quorum > cfg.cluster.n_replicas)
    return fail("write_quorum must lie in [1, n_replicas]");
  if (auto ok = validate(cfg.workload); !ok) return ok;
  if (cfg.workload.kind == WorkloadKind::kTxnIncrement &&
      cfg.workload.coordinator >= cfg.cluster.nodes)
    return fail("coordinator must name a cluster node");
  for (const auto& w : cfg.downs) {
    if (w.node >= cfg.cluster.nodes) return fail("fault window names a node outside the cluster");
    if (w.from > w.to) return fail("fault window ends before it starts");
  }
  for (const auto& c : cfg.crashes)
    if (c.node >= cfg.cluster.nodes) return fail("crash event names a node outside the cluster");
  return ok_void();
}

// --------------------------------------------------------------- environment

// What a workload needs from the outside world. run_sim fills this from a
// SimCluster; the TCP runner fills it from socket endpoints. `settle` drains
// in-flight notifications (a no-op when delivery is already asynchronous);
// `ticks` reads a logical clock if one exists.
struct WorkloadEnv {
  Transport* transport = nullptr;
  Ring ring;
  std::size_t n_replicas = 3;
  std::size_t write_quorum = 2;
  int max_redirects = 3;
  std::uint64_t seed = 1;
  std::function<void()> settle;
  std::function<std::uint64_t()> ticks;
};

// ------------------------------------------------------------------- details

namespace workload_detail {

inline Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes out;
  out.reserve(n);
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 8 == 0) word = rng();
    out.push_back(static_cast<char>(word & 0xFF));
    word >>= 8;
  }
  return out;
}

inline Bytes u64_value(std::uint64_t v) {
  Bytes out;
  put_u64be(out, v);
  return out;
}

inline std::uint64_t value_u64(const Bytes& b) {
  ByteReader in(b);
  return in.read_u64();
}

// Sum a per-key stats field across every node; each record lives on
// n_replicas nodes, so callers divide by that for per-replica figures.
inline std::uint64_t sum_key_stat(ClientSession& client, const Ring& ring,
                                  const std::string& key, const char* field) {
  std::uint64_t sum = 0;
  for (NodeId node : ring.members()) {
    auto stats = client.node_stats(node, key);
    if (!stats) continue;
    auto it = stats->find("keys");
    if (it == stats->end() || !it->contains(key)) continue;
    sum += (*it)[key][field].get<std::uint64_t>();
  }
  return sum;
}

inline VoidResult run_mixed(const WorkloadSpec& spec, const WorkloadEnv& env,
                            ClientSession& client, std::mt19937_64& rng,
                            MetricsReport& report) {
  std::vector<std::string> universe;
  universe.reserve(spec.keys);
  for (std::uint64_t i = 0; i < spec.keys; ++i)
    universe.push_back("mixed/k" + std::to_string(i));

  // One shared sink over every key in the universe; the session dedups
  // per-key, and distinct versions are counted across redeliveries here.
  auto delivered_total = std::make_shared<std::uint64_t>(0);
  auto delivered_distinct = std::make_shared<std::set<Digest>>();
  auto sink_mu = std::make_shared<std::mutex>();
  Broker::Sink sink = [=](const Notification& n) {
    std::lock_guard lock(*sink_mu);
    ++*delivered_total;
    delivered_distinct->insert(n.version.h);
    return true;
  };
  std::uint64_t keys_subscribed = 0;
  for (const auto& key : universe)
    if (client.subscribe(key, sink)) ++keys_subscribed;
  bool subscribed = keys_subscribed == universe.size();

  struct Known {
    VersionId version;
    Bytes value;
  };
  std::map<std::string, Known> latest;
  std::vector<const std::string*> written_keys;  // keys present in `latest`
  std::set<Digest> written;
  std::uint64_t reads = 0, writes = 0;
  std::uint64_t read_failures = 0, write_failures = 0, value_mismatches = 0;

  auto unit = [&rng] {
    return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
  };

  for (std::uint64_t op = 0; op < spec.operations; ++op) {
    bool do_read = !latest.empty() && unit() < spec.read_fraction;
    if (do_read) {
      ++reads;
      const std::string& key = *written_keys[rng() % written_keys.size()];
      const Known& want = latest.at(key);
      auto got = client.get_value(key, want.version);
      if (!got) {
        ++read_failures;
      } else if (*got != want.value) {
        ++value_mismatches;
      }
    } else {
      ++writes;
      const std::string& key = universe[rng() % universe.size()];
      Bytes value = random_bytes(rng, spec.record_size);
      auto it = latest.find(key);
      VersionId parent = it == latest.end() ? root_version() : it->second.version;
      auto put = client.put(key, parent, value);
      if (!put) {
        ++write_failures;
        continue;
      }
      if (it == latest.end()) {
        auto [ins, fresh] = latest.emplace(key, Known{});
        it = ins;
        written_keys.push_back(&ins->first);
        (void)fresh;
      }
      it->second = Known{*put, std::move(value)};
      written.insert(put->h);
    }
  }
  if (env.settle) env.settle();

  std::uint64_t missing = 0;
  for (const Digest& h : written)
    if (delivered_distinct->count(h) == 0) ++missing;
  std::uint64_t unexpected = 0;
  for (const Digest& h : *delivered_distinct)
    if (written.count(h) == 0) ++unexpected;

  report.add("reads", reads);
  report.add("writes", writes);
  report.add("read_failures", read_failures);
  report.add("write_failures", write_failures);
  report.add("value_mismatches", value_mismatches);
  report.add("subscribed", subscribed);
  report.add("keys_subscribed", keys_subscribed);
  report.add("notifications_delivered", *delivered_total);
  report.add("notifications_distinct",
             static_cast<std::uint64_t>(delivered_distinct->size()));
  report.add("notifications_missing", missing);
  report.add("notifications_unexpected", unexpected);
  return ok_void();
}

inline VoidResult run_scan_chain(const WorkloadSpec& spec, const WorkloadEnv&,
                                 ClientSession& client, CountingTransport& net,
                                 std::mt19937_64& rng, MetricsReport& report) {
  const std::string key = "scan/chain";
  VersionId head = root_version();
  for (std::uint64_t i = 0; i < spec.chain_length; ++i) {
    auto put = client.put(key, head, random_bytes(rng, spec.record_size));
    if (!put) return {put.code(), put.message()};
    head = *put;
  }

  net.reset();
  Result<ClientScan> batched{ErrorCode::kIOFailure, "scan never ran"};
  for (std::uint64_t round = 0; round < spec.operations; ++round) {
    batched = client.get_k_previous(key, head, spec.scan_m);
    if (!batched) return {batched.code(), batched.message()};
  }
  std::uint64_t batched_frames = net.count(wire::kGetKPrev);
  std::uint64_t batched_all = net.total();

  net.reset();
  Result<ClientScan> naive{ErrorCode::kIOFailure, "walk never ran"};
  for (std::uint64_t round = 0; round < spec.operations; ++round) {
    naive = client.naive_scan(key, head, spec.scan_m);
    if (!naive) return {naive.code(), naive.message()};
  }
  std::uint64_t naive_frames = net.count(wire::kGetPrev);
  std::uint64_t naive_all = net.total();

  bool match = batched->records.size() == naive->records.size() &&
               batched->terminator == naive->terminator;
  if (match) {
    for (std::size_t i = 0; i < batched->records.size(); ++i) {
      const NodeRecord& a = batched->records[i];
      const NodeRecord& b = naive->records[i];
      if (!same_version(a.version, b.version) ||
          a.payload.bytes != b.payload.bytes) {
        match = false;
        break;
      }
    }
  }

  report.add("chain_length", spec.chain_length);
  report.add("scan_m", spec.scan_m);
  report.add("scans", spec.operations);
  report.add("batched_round_trips", batched_frames);
  report.add("batched_round_trips_per_scan", batched_frames / spec.operations);
  report.add("batched_frames_total", batched_all);
  report.add("naive_round_trips", naive_frames);
  report.add("naive_round_trips_per_scan", naive_frames / spec.operations);
  report.add("naive_frames_total", naive_all);
  report.add("records_per_scan",
             static_cast<std::uint64_t>(batched->records.size()));
  report.add("scan_results_match", match);
  return ok_void();
}

inline VoidResult run_chain_compression(const WorkloadSpec& spec,
                                        const WorkloadEnv& env,
                                        ClientSession& client,
                                        std::mt19937_64& rng,
                                        MetricsReport& report) {
  const bool random_kind = spec.kind == WorkloadKind::kRandom;
  const std::string key = random_kind ? "random/chain" : "delta/chain";

  // Delta runs confine every edit to one window at a fixed offset, so each
  // version differs from any ancestor within a bounded span. Random runs
  // regenerate the whole value each time.
  std::uint64_t window_off = 0;
  if (!random_kind && spec.record_size > spec.edit_window)
    window_off = rng() % (spec.record_size - spec.edit_window + 1);

  Bytes value = random_bytes(rng, spec.record_size);
  VersionId cur = root_version();
  std::uint64_t payload_total = 0;
  std::vector<std::pair<VersionId, Bytes>> history;
  history.reserve(spec.operations);
  for (std::uint64_t i = 0; i < spec.operations; ++i) {
    if (i > 0) {
      if (random_kind) {
        value = random_bytes(rng, spec.record_size);
      } else {
        std::uint64_t len = 1 + rng() % spec.max_edit;
        std::uint64_t pos = window_off + rng() % (spec.edit_window - len + 1);
        Bytes patch = random_bytes(rng, len);
        value.replace(pos, len, patch);
      }
    }
    auto put = client.put(key, cur, value);
    if (!put) return {put.code(), put.message()};
    cur = *put;
    payload_total += value.size();
    history.emplace_back(cur, value);
  }

  std::uint64_t mismatches = 0;
  for (const auto& [v, want] : history) {
    auto got = client.get_value(key, v);
    if (!got || *got != want) ++mismatches;
  }

  std::uint64_t stored_all = sum_key_stat(client, env.ring, key, "used");
  double per_replica =
      static_cast<double>(stored_all) / static_cast<double>(env.n_replicas);
  report.add("versions", spec.operations);
  report.add("payload_bytes", payload_total);
  report.add("stored_bytes_all_replicas", stored_all);
  report.add("stored_bytes_per_replica", per_replica);
  report.add("compression_ratio",
             per_replica / static_cast<double>(payload_total));
  report.add("roundtrip_checked",
             static_cast<std::uint64_t>(history.size()));
  report.add("roundtrip_mismatches", mismatches);
  return ok_void();
}

inline VoidResult run_txn_increment(const WorkloadSpec& spec,
                                    const WorkloadEnv&, CountingTransport& net,
                                    std::mt19937_64& rng,
                                    MetricsReport& report) {
  TxnClient txn(net, spec.coordinator, "bench");
  std::vector<std::string> keys;
  keys.reserve(spec.keys);
  for (std::uint64_t i = 0; i < spec.keys; ++i)
    keys.push_back("txn/k" + std::to_string(i));

  // Seed every counter at zero so later reads never miss.
  for (const auto& key : keys) {
    auto b = txn.begin();
    if (!b) return {b.code(), b.message()};
    if (auto w = txn.write(b->tid, key, u64_value(0)); !w)
      return {w.code(), w.message()};
    auto c = txn.commit(b->tid);
    if (!c) return {c.code(), c.message()};
    if (!*c) return {ErrorCode::kConflict, "seeding transaction aborted"};
  }

  ZipfSampler pick(spec.keys, spec.zipf_exponent);
  std::vector<std::uint64_t> tally(spec.keys, 0);
  std::uint64_t commits = 0, aborts = 0;

  struct Open {
    std::uint64_t tid = 0;
    std::size_t key = 0;
    bool live = false;  // reached its write; eligible to commit the increment
  };
  std::uint64_t remaining = spec.operations;
  while (remaining > 0) {
    std::uint64_t group = std::min<std::uint64_t>(spec.txn_group, remaining);
    remaining -= group;
    std::vector<Open> open(group);
    // Begin the whole group first so the transactions genuinely overlap.
    for (auto& o : open) {
      auto b = txn.begin();
      if (!b) return {b.code(), b.message()};
      o.tid = b->tid;
      o.key = static_cast<std::size_t>(pick(rng) - 1);
    }
    for (auto& o : open) {
      auto r = txn.read(o.tid, keys[o.key]);
      if (!r) {
        if (r.code() == ErrorCode::kTxnAborted) continue;  // stale snapshot
        return {r.code(), r.message()};
      }
      auto w = txn.write(o.tid, keys[o.key], u64_value(value_u64(r->second) + 1));
      if (!w) return {w.code(), w.message()};
      o.live = true;
    }
    for (auto& o : open) {
      auto c = txn.commit(o.tid);
      if (!c) return {c.code(), c.message()};
      if (*c && o.live) {
        ++commits;
        ++tally[o.key];
      } else {
        ++aborts;
      }
    }
  }

  // Every committed increment must be present in the final counters.
  std::uint64_t tally_mismatches = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    auto b = txn.begin();
    if (!b) return {b.code(), b.message()};
    auto r = txn.read(b->tid, keys[i]);
    if (!r) return {r.code(), r.message()};
    if (value_u64(r->second) != tally[i]) ++tally_mismatches;
    if (auto a = txn.abort(b->tid); !a) return {a.code(), a.message()};
  }

  report.add("txns", spec.operations);
  report.add("commits", commits);
  report.add("aborts", aborts);
  report.add("abort_rate",
             static_cast<double>(aborts) / static_cast<double>(spec.operations));
  report.add("zipf_exponent", spec.zipf_exponent);
  report.add("txn_group", spec.txn_group);
  report.add("tally_mismatches", tally_mismatches);
  return ok_void();
}

}  // namespace workload_detail

// ----------------------------------------------------------------- run_workload

// Runs one workload against whatever cluster the environment points at and
// returns the metrics. The transport is wrapped in a frame counter, so every
// report carries client round-trip counts alongside the per-kind figures.
inline Result<MetricsReport> run_workload(const WorkloadSpec& spec,
                                          WorkloadEnv env) {
  if (auto ok = validate(spec); !ok) return {ok.code(), ok.message()};
  if (env.transport == nullptr)
    return {ErrorCode::kConfigInvalid, "workload environment needs a transport"};

  CountingTransport net(*env.transport);
  ClientSession::Config cc;
  cc.user = "bench";
  cc.ring = env.ring;
  cc.n_replicas = env.n_replicas;
  cc.write_quorum = env.write_quorum;
  cc.max_redirects = env.max_redirects;
  ClientSession client(std::move(cc), net);

  MetricsReport report;
  report.add("workload", to_string(spec.kind));
  report.add("seed", env.seed);
  report.add("nodes", static_cast<std::uint64_t>(env.ring.members().size()));
  report.add("operations", spec.operations);

  std::mt19937_64 rng(env.seed ^ 0x9E3779B97F4A7C15ULL);
  VoidResult ran = [&]() -> VoidResult {
    switch (spec.kind) {
      case WorkloadKind::kMixed:
        return workload_detail::run_mixed(spec, env, client, rng, report);
      case WorkloadKind::kScanChain:
        return workload_detail::run_scan_chain(spec, env, client, net, rng, report);
      case WorkloadKind::kDelta:
      case WorkloadKind::kRandom:
        return workload_detail::run_chain_compression(spec, env, client, rng, report);
      case WorkloadKind::kTxnIncrement:
        return workload_detail::run_txn_increment(spec, env, net, rng, report);
    }
    return {ErrorCode::kConfigInvalid, "unknown workload kind"};
  }();
  if (!ran) return {ran.code(), ran.message()};

  // Frame counters are snapshotted before the stats sweep below adds its own
  // traffic. Counts cover everything since the last in-run reset.
  nlohmann::json frames = nlohmann::json::object();
  for (const auto& [op, n] : net.snapshot()) frames[opcode_name(op)] = n;
  report.add("frames_total", net.total());
  report.add("frames_by_opcode", std::move(frames));
  report.add("redirects_followed", client.redirects_seen());
  if (env.ticks) report.add("ticks", env.ticks());

  std::uint64_t stored = 0, cache_hits = 0, cache_entries = 0;
  std::uint64_t remote_fetches = 0, tamper = 0, unreachable = 0;
  for (NodeId node : env.ring.members()) {
    auto stats = client.node_stats(node);
    if (!stats) {
      ++unreachable;
      continue;
    }
    for (const auto& [key, ks] : (*stats)["keys"].items())
      stored += ks["used"].get<std::uint64_t>();
    cache_hits += (*stats)["cache"]["hits"].get<std::uint64_t>();
    cache_entries += (*stats)["cache"]["entries"].get<std::uint64_t>();
    remote_fetches += (*stats)["remote_fetches"].get<std::uint64_t>();
    tamper += (*stats)["tamper_detected"].get<std::uint64_t>();
  }
  report.add("stored_bytes_total", stored);
  report.add("cache_hits", cache_hits);
  report.add("cache_entries", cache_entries);
  report.add("remote_fetches", remote_fetches);
  double lookups = static_cast<double>(cache_hits + remote_fetches);
  report.add("cache_hit_rate",
             lookups > 0.0 ? static_cast<double>(cache_hits) / lookups : 0.0);
  report.add("tamper_detected", tamper);
  report.add("stats_nodes_unreachable", unreachable);

  // Correctness rollup: the sim and bench CLIs exit nonzero iff this is
  // nonzero. Availability hiccups (read/write failures) are reported above
  // but are not invariant violations.
  std::uint64_t violations = report.u64("value_mismatches") +
                             report.u64("roundtrip_mismatches") +
                             report.u64("tally_mismatches") +
                             report.u64("notifications_missing") +
                             report.u64("notifications_unexpected") + tamper;
  if (const auto* m = report.find("scan_results_match");
      m != nullptr && m->is_boolean() && !m->get<bool>())
    ++violations;
  report.add("invariant_violations", violations);
  return report;
}

// --------------------------------------------------------------------- run_sim

// Builds a simulated cluster, applies the fault schedule, runs the workload,
// and reports. Everything is driven by (config, seed): two runs of one config
// serialize to byte-identical reports.
inline Result<MetricsReport> run_sim(const SimRunConfig& cfg) {
  if (auto ok = validate(cfg); !ok) return {ok.code(), ok.message()};

  SimRunConfig eff = cfg;
  // Compression chains park their whole history in one region; grow the
  // region budget so placement never interferes with the measurement.
  if (eff.workload.kind == WorkloadKind::kDelta ||
      eff.workload.kind == WorkloadKind::kRandom) {
    std::uint64_t payload = eff.workload.operations * eff.workload.record_size;
    std::uint64_t need = payload + payload / 4 + (1ull << 16);
    eff.cluster.default_capacity = std::max(eff.cluster.default_capacity, need);
  }

  SimCluster cluster(eff.cluster);
  for (const auto& w : eff.downs) cluster.net().add_down(w.node, w.from, w.to);
  for (const auto& c : eff.crashes) cluster.net().add_crash(c.node, c.at);
  if (eff.workload.kind == WorkloadKind::kTxnIncrement)
    cluster.enable_transactions(eff.workload.coordinator);

  WorkloadEnv env;
  env.transport = &cluster.net().endpoint("client:bench");
  env.ring = cluster.ring();
  env.n_replicas = eff.cluster.n_replicas;
  env.write_quorum = eff.cluster.write_quorum;
  env.max_redirects = eff.cluster.max_redirects;
  env.seed = eff.cluster.seed;
  env.settle = [&cluster] { cluster.pump_notifications(); };
  env.ticks = [&cluster] { return cluster.net().now(); };

  auto report = run_workload(eff.workload, std::move(env));
  if (report) report->add("region_capacity", eff.cluster.default_capacity);
  return report;
}

}  // namespace vstore
