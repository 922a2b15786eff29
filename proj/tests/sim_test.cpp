// Workload harness: deterministic replay, scan round-trip accounting,
// compression ratios, mixed-op invariants, and transactional counters.

#include <doctest.h>

#include <random>
#include <vector>

#include <vstore/workload.hpp>

using namespace vstore;

namespace {

SimRunConfig base_run(WorkloadKind kind) {
  SimRunConfig cfg;
  cfg.cluster.nodes = 4;
  cfg.cluster.n_replicas = 3;
  cfg.cluster.write_quorum = 2;
  cfg.cluster.seed = 91;
  cfg.workload.kind = kind;
  return cfg;
}

}  // namespace

TEST_CASE("zipf draws are deterministic, skewed, and cover the range") {
  std::mt19937_64 a(7), b(7);
  ZipfSampler z(64, 1.5);
  for (int i = 0; i < 1000; ++i) CHECK(z(a) == z(b));

  std::mt19937_64 rng(11);
  std::vector<std::uint64_t> counts(64, 0);
  for (int i = 0; i < 20000; ++i) {
    std::uint64_t k = z(rng);
    REQUIRE(k >= 1);
    REQUIRE(k <= 64);
    ++counts[k - 1];
  }
  CHECK(counts[0] > counts[1]);
  CHECK(counts[1] > counts[7]);
  CHECK(counts[0] > 20000 / 4);  // the head dominates under exponent 1.5

  ZipfSampler u(64, 0.0);
  std::vector<std::uint64_t> uc(64, 0);
  for (int i = 0; i < 64000; ++i) ++uc[u(rng) - 1];
  for (auto c : uc) {
    CHECK(c > 700);  // flat within sampling noise under exponent 0
    CHECK(c < 1300);
  }
}

TEST_CASE("a sim run is a pure function of its config") {
  auto cfg = base_run(WorkloadKind::kMixed);
  cfg.workload.operations = 400;
  cfg.workload.keys = 8;
  cfg.workload.record_size = 96;
  // Faults start after the subscription setup phase so coverage stays full.
  cfg.downs.push_back({1, 300, 700});
  cfg.crashes.push_back({3, 1100});
  auto r1 = run_sim(cfg);
  auto r2 = run_sim(cfg);
  REQUIRE(r1.ok());
  REQUIRE(r2.ok());
  CHECK(!r1->to_ndjson().empty());
  CHECK(r1->to_ndjson() == r2->to_ndjson());
  // Faults notwithstanding, a 3-replica quorum keeps the run clean.
  CHECK(r1->u64("value_mismatches") == 0);
  CHECK(r1->u64("write_failures") == 0);
  CHECK(r1->u64("notifications_missing") == 0);

  auto scan = base_run(WorkloadKind::kScanChain);
  scan.workload.operations = 2;
  auto s1 = run_sim(scan);
  auto s2 = run_sim(scan);
  REQUIRE(s1.ok());
  REQUIRE(s2.ok());
  CHECK(s1->to_ndjson() == s2->to_ndjson());

  auto txn = base_run(WorkloadKind::kTxnIncrement);
  txn.workload.operations = 120;
  txn.workload.keys = 16;
  txn.workload.zipf_exponent = 1.2;
  auto t1 = run_sim(txn);
  auto t2 = run_sim(txn);
  REQUIRE(t1.ok());
  REQUIRE(t2.ok());
  CHECK(t1->to_ndjson() == t2->to_ndjson());
}

TEST_CASE("report lines are one json object per metric") {
  auto cfg = base_run(WorkloadKind::kMixed);
  cfg.workload.operations = 50;
  auto r = run_sim(cfg);
  REQUIRE(r.ok());
  REQUIRE(!r->lines().empty());
  CHECK(r->lines().front().at("value").get<std::string>() == "mixed");
  for (const auto& line : r->lines()) {
    CHECK(line.is_object());
    CHECK(line.contains("metric"));
    CHECK(line.contains("value"));
    CHECK(line.size() == 2);
  }
  std::string nd = r->to_ndjson();
  CHECK(std::count(nd.begin(), nd.end(), '\n') ==
        static_cast<long>(r->lines().size()));
}

TEST_CASE("batched scans cost one round trip where the walk pays per record") {
  auto cfg = base_run(WorkloadKind::kScanChain);
  cfg.workload.chain_length = 40;
  cfg.workload.scan_m = 32;
  cfg.workload.operations = 1;
  auto r = run_sim(cfg);
  REQUIRE(r.ok());
  CHECK(r->u64("batched_round_trips") == 1);
  CHECK(r->u64("naive_round_trips") == 32);
  CHECK(r->u64("batched_round_trips_per_scan") == 1);
  CHECK(r->u64("naive_round_trips_per_scan") == 32);
  CHECK(r->u64("records_per_scan") == 32);
  REQUIRE(r->find("scan_results_match") != nullptr);
  CHECK(r->find("scan_results_match")->get<bool>());
  CHECK(r->u64("redirects_followed") == 0);

  // Repeated scans stay at one round trip each.
  cfg.workload.operations = 5;
  auto again = run_sim(cfg);
  REQUIRE(again.ok());
  CHECK(again->u64("batched_round_trips") == 5);
  CHECK(again->u64("batched_round_trips_per_scan") == 1);
  CHECK(again->u64("naive_round_trips_per_scan") == 32);
}

TEST_CASE("edit chains compress below a third while random chains cannot") {
  auto d = base_run(WorkloadKind::kDelta);
  d.workload.operations = 2000;
  d.workload.record_size = 1024;
  auto rd = run_sim(d);
  REQUIRE(rd.ok());
  CHECK(rd->u64("roundtrip_checked") == 2000);
  CHECK(rd->u64("roundtrip_mismatches") == 0);
  CHECK(rd->dbl("compression_ratio") < 0.30);
  CHECK(rd->u64("payload_bytes") == 2000 * 1024);

  auto rw = base_run(WorkloadKind::kRandom);
  rw.workload.operations = 600;
  rw.workload.record_size = 1024;
  auto rr = run_sim(rw);
  REQUIRE(rr.ok());
  CHECK(rr->u64("roundtrip_mismatches") == 0);
  CHECK(rr->dbl("compression_ratio") <= 1.10);
  CHECK(rr->dbl("compression_ratio") > 0.90);  // nothing to share, all stored full
}

TEST_CASE("the mixed workload sees its own writes and every notification") {
  auto cfg = base_run(WorkloadKind::kMixed);
  cfg.workload.operations = 500;
  cfg.workload.keys = 8;
  cfg.workload.record_size = 64;
  cfg.workload.read_fraction = 0.6;
  auto r = run_sim(cfg);
  REQUIRE(r.ok());
  CHECK(r->u64("reads") + r->u64("writes") == 500);
  CHECK(r->u64("value_mismatches") == 0);
  CHECK(r->u64("read_failures") == 0);
  CHECK(r->u64("write_failures") == 0);
  REQUIRE(r->find("subscribed") != nullptr);
  CHECK(r->find("subscribed")->get<bool>());
  CHECK(r->u64("notifications_missing") == 0);
  CHECK(r->u64("notifications_unexpected") == 0);
  CHECK(r->u64("notifications_distinct") == r->u64("writes"));
  CHECK(r->u64("notifications_delivered") >= r->u64("notifications_distinct"));
  CHECK(r->u64("tamper_detected") == 0);
}

TEST_CASE("increment transactions stay exact and contention raises aborts") {
  auto uni = base_run(WorkloadKind::kTxnIncrement);
  uni.workload.operations = 600;
  uni.workload.keys = 64;
  uni.workload.txn_group = 4;
  uni.workload.zipf_exponent = 0.0;
  auto ru = run_sim(uni);
  REQUIRE(ru.ok());
  CHECK(ru->u64("tally_mismatches") == 0);
  CHECK(ru->u64("commits") + ru->u64("aborts") == 600);
  CHECK(ru->u64("commits") > 0);

  auto hot = uni;
  hot.workload.zipf_exponent = 1.5;
  auto rh = run_sim(hot);
  REQUIRE(rh.ok());
  CHECK(rh->u64("tally_mismatches") == 0);
  CHECK(rh->u64("commits") + rh->u64("aborts") == 600);
  CHECK(rh->u64("aborts") > 0);
  CHECK(rh->dbl("abort_rate") > ru->dbl("abort_rate"));
}

TEST_CASE("invalid configurations are rejected before anything runs") {
  auto cfg = base_run(WorkloadKind::kMixed);
  cfg.cluster.write_quorum = 5;
  CHECK(run_sim(cfg).code() == ErrorCode::kConfigInvalid);

  cfg = base_run(WorkloadKind::kDelta);
  cfg.workload.edit_window = 16;
  cfg.workload.max_edit = 32;
  CHECK(run_sim(cfg).code() == ErrorCode::kConfigInvalid);

  cfg = base_run(WorkloadKind::kMixed);
  cfg.workload.read_fraction = 1.5;
  CHECK(run_sim(cfg).code() == ErrorCode::kConfigInvalid);

  cfg = base_run(WorkloadKind::kMixed);
  cfg.workload.operations = 0;
  CHECK(run_sim(cfg).code() == ErrorCode::kConfigInvalid);

  cfg = base_run(WorkloadKind::kTxnIncrement);
  cfg.workload.coordinator = 9;
  CHECK(run_sim(cfg).code() == ErrorCode::kConfigInvalid);

  cfg = base_run(WorkloadKind::kMixed);
  cfg.downs.push_back({0, 10, 5});
  CHECK(run_sim(cfg).code() == ErrorCode::kConfigInvalid);

  cfg = base_run(WorkloadKind::kMixed);
  cfg.crashes.push_back({7, 10});
  CHECK(run_sim(cfg).code() == ErrorCode::kConfigInvalid);

  cfg = base_run(WorkloadKind::kScanChain);
  cfg.workload.chain_length = 1;
  CHECK(run_sim(cfg).code() == ErrorCode::kConfigInvalid);
}
