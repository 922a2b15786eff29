// vstore command line: cluster node, deterministic simulator, benchmark
// driver, and the ugit demo application.
//
//   vstore server --config node.json
//   vstore sim    --config sim.json        (ND-JSON metrics on stdout)
//   vstore bench  --config bench.json      (ND-JSON metrics on stdout)
//   vstore ugit   commit|checkout|log|merge ...
//
// sim and bench exit 0 iff the run finished with no invariant violations.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <memory>
#include <string>
#include <thread>

#include <vstore/config.hpp>
#include <vstore/net.hpp>
#include <vstore/ugit.hpp>
#include <vstore/workload.hpp>

namespace {

using namespace vstore;

std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop.store(true); }

// Versions travel through the CLI as the hex of their wire form
// (digest || depth || tag), so any command can hand them back verbatim.
std::string version_to_hex(const VersionId& v) {
  std::string wire;
  encode_version(wire, v);
  return to_hex(wire);
}

Result<VersionId> hex_to_version(const std::string& hex) {
  if (hex.empty() || hex == "root") return root_version();
  if (hex.size() % 2 != 0)
    return {ErrorCode::kBadRequest, "version hex has odd length"};
  std::string bytes;
  bytes.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    auto nibble = [](char c) -> int {
      if (c >= '0' && c <= '9') return c - '0';
      if (c >= 'a' && c <= 'f') return c - 'a' + 10;
      if (c >= 'A' && c <= 'F') return c - 'A' + 10;
      return -1;
    };
    int hi = nibble(hex[i]);
    int lo = nibble(hex[i + 1]);
    if (hi < 0 || lo < 0)
      return {ErrorCode::kBadRequest, "version hex has non-hex characters"};
    bytes.push_back(static_cast<char>((hi << 4) | lo));
  }
  try {
    ByteReader in(bytes);
    VersionId v = decode_version(in);
    if (in.remaining() != 0)
      return {ErrorCode::kBadRequest, "trailing bytes after the version"};
    return v;
  } catch (const std::out_of_range&) {
    return {ErrorCode::kBadRequest, "not a valid wire-form version"};
  }
}

int run_server(const std::string& config_path) {
  auto cfg = load_server_config(config_path);
  if (!cfg) {
    std::fprintf(stderr, "error: %s\n", cfg.message().c_str());
    return 2;
  }
  std::vector<NodeId> ids;
  for (const auto& [id, addr] : cfg->peers) ids.push_back(id);
  Ring ring(ids, cfg->virtual_points);

  NodeServer::Config sc;
  sc.node_id = cfg->node_id;
  sc.n_replicas = cfg->n_replicas;
  sc.ring = ring;
  sc.store.default_region_capacity = cfg->region_capacity;
  sc.store.cache_budget = cfg->cache_budget;
  sc.store.rng_seed = cfg->seed;
  sc.store.compress_default = cfg->compress;
  NodeServer node(std::move(sc));

  TcpTransport peers(cfg->peers);
  node.set_peer_caller([&peers](NodeId dest, const wire::Frame& f) {
    return peers.call(dest, f);
  });

  std::unique_ptr<TcpTransport> txn_net;
  std::unique_ptr<TxnService> txn;
  if (cfg->coordinator) {
    txn_net = std::make_unique<TcpTransport>(cfg->peers);
    ClientSession::Config cc;
    cc.user = "txn-engine";
    cc.ring = ring;
    cc.n_replicas = cfg->n_replicas;
    cc.write_quorum = cfg->write_quorum;
    txn = std::make_unique<TxnService>(ClientSession(std::move(cc), *txn_net));
    node.set_txn_handler([svc = txn.get()](const std::string& user,
                                           const wire::Frame& req) {
      return svc->handle(user, req);
    });
  }

  TcpServer server(node, cfg->listen);
  if (!server.listening()) {
    std::fprintf(stderr, "error: cannot listen on %s\n", cfg->listen.c_str());
    return 2;
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::fprintf(stderr, "node %u listening on %s (port %u)%s\n", cfg->node_id,
               cfg->listen.c_str(), server.port(),
               cfg->coordinator ? ", transaction coordinator" : "");
  while (!g_stop.load())
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

int finish_run(const Result<MetricsReport>& report) {
  if (!report) {
    std::fprintf(stderr, "error: %s\n", report.message().c_str());
    return 2;
  }
  std::fputs(report->to_ndjson().c_str(), stdout);
  return report->u64("invariant_violations") == 0 ? 0 : 1;
}

int run_sim_cmd(const std::string& config_path) {
  auto cfg = load_sim_config(config_path);
  if (!cfg) {
    std::fprintf(stderr, "error: %s\n", cfg.message().c_str());
    return 2;
  }
  return finish_run(run_sim(*cfg));
}

int run_bench_cmd(const std::string& config_path) {
  auto cfg = load_bench_config(config_path);
  if (!cfg) {
    std::fprintf(stderr, "error: %s\n", cfg.message().c_str());
    return 2;
  }
  return finish_run(run_bench(*cfg));
}

// Shared plumbing for the ugit subcommands: a cluster config (same shape as
// the bench file, workload ignored) plus the repository key prefix.
struct UgitArgs {
  std::string cluster;
  std::string repo = "demo";
  std::string user = "ugit";
};

struct UgitContext {
  std::unique_ptr<TcpTransport> net;
  std::unique_ptr<ClientSession> session;
  std::unique_ptr<UGit> repo;
};

Result<UgitContext> ugit_context(const UgitArgs& args) {
  auto cfg = load_bench_config(args.cluster);
  if (!cfg) return {cfg.code(), cfg.message()};
  std::vector<NodeId> ids;
  for (const auto& [id, addr] : cfg->nodes) ids.push_back(id);
  UgitContext ctx;
  ctx.net = std::make_unique<TcpTransport>(cfg->nodes);
  ClientSession::Config cc;
  cc.user = args.user;
  cc.ring = Ring(ids, cfg->virtual_points);
  cc.n_replicas = cfg->n_replicas;
  cc.write_quorum = cfg->write_quorum;
  cc.max_redirects = cfg->max_redirects;
  ctx.session = std::make_unique<ClientSession>(std::move(cc), *ctx.net);
  ctx.repo = std::make_unique<UGit>(*ctx.session, args.repo);
  return ctx;
}

std::uint64_t now_seconds() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::seconds>(
      std::chrono::system_clock::now().time_since_epoch()).count());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vstore - versioned distributed key-value store"};
  app.require_subcommand(1);

  auto* server = app.add_subcommand("server", "run one storage node");
  std::string server_config;
  server->add_option("--config", server_config, "node config JSON")->required();

  auto* sim = app.add_subcommand("sim", "deterministic simulated run");
  std::string sim_config;
  sim->add_option("--config", sim_config, "sim config JSON")->required();

  auto* bench = app.add_subcommand("bench", "workload against live servers");
  std::string bench_config;
  bench->add_option("--config", bench_config, "bench config JSON")->required();

  auto* ugit = app.add_subcommand("ugit", "git-like demo on the store");
  ugit->require_subcommand(1);
  UgitArgs ua;
  ugit->add_option("--cluster", ua.cluster, "cluster config JSON (bench file shape)")
      ->required();
  ugit->add_option("--repo", ua.repo, "repository key prefix");
  ugit->add_option("--user", ua.user, "acting user id");

  auto* commit = ugit->add_subcommand("commit", "commit a directory tree");
  std::string commit_dir, commit_msg, commit_author = "ugit", commit_parent;
  std::uint64_t commit_ts = 0;
  bool commit_ts_set = false;
  commit->add_option("--dir", commit_dir, "directory to commit")->required();
  commit->add_option("--message,-m", commit_msg, "commit message")->required();
  commit->add_option("--author", commit_author, "author id");
  commit->add_option("--parent", commit_parent, "parent commit (hex, empty = first commit)");
  commit->add_option("--timestamp", commit_ts, "commit time (unix seconds)")
      ->each([&commit_ts_set](const std::string&) { commit_ts_set = true; });

  auto* checkout = ugit->add_subcommand("checkout", "materialize a commit");
  std::string co_commit, co_dest;
  checkout->add_option("--commit", co_commit, "commit version (hex)")->required();
  checkout->add_option("--dest", co_dest, "destination directory")->required();

  auto* log = ugit->add_subcommand("log", "walk history from a commit");
  std::string log_from;
  std::uint32_t log_limit = 32;
  log->add_option("--from", log_from, "commit version (hex)")->required();
  log->add_option("--limit", log_limit, "maximum commits to list");

  auto* merge = ugit->add_subcommand("merge", "three-way merge of two commits");
  std::string mg_ours, mg_theirs, mg_msg = "merge", mg_author = "ugit";
  std::uint64_t mg_ts = 0;
  bool mg_ts_set = false;
  merge->add_option("--ours", mg_ours, "first commit (hex)")->required();
  merge->add_option("--theirs", mg_theirs, "second commit (hex)")->required();
  merge->add_option("--message,-m", mg_msg, "merge commit message");
  merge->add_option("--author", mg_author, "author id");
  merge->add_option("--timestamp", mg_ts, "commit time (unix seconds)")
      ->each([&mg_ts_set](const std::string&) { mg_ts_set = true; });

  CLI11_PARSE(app, argc, argv);

  if (server->parsed()) return run_server(server_config);
  if (sim->parsed()) return run_sim_cmd(sim_config);
  if (bench->parsed()) return run_bench_cmd(bench_config);

  // ugit subcommands
  auto ctx = ugit_context(ua);
  if (!ctx) {
    std::fprintf(stderr, "error: %s\n", ctx.message().c_str());
    return 2;
  }
  UGit& repo = *ctx->repo;

  if (commit->parsed()) {
    auto parent = hex_to_version(commit_parent);
    if (!parent) {
      std::fprintf(stderr, "error: --parent: %s\n", parent.message().c_str());
      return 2;
    }
    std::uint64_t ts = commit_ts_set ? commit_ts : now_seconds();
    auto made = repo.commit_dir(commit_dir, commit_msg, commit_author, ts, *parent);
    if (!made) {
      std::fprintf(stderr, "error: %s\n", made.message().c_str());
      return 1;
    }
    std::printf("%s\n", version_to_hex(*made).c_str());
    return 0;
  }

  if (checkout->parsed()) {
    auto commit_v = hex_to_version(co_commit);
    if (!commit_v) {
      std::fprintf(stderr, "error: --commit: %s\n", commit_v.message().c_str());
      return 2;
    }
    auto files = repo.checkout(*commit_v, co_dest);
    if (!files) {
      std::fprintf(stderr, "error: %s\n", files.message().c_str());
      return 1;
    }
    std::fprintf(stderr, "checked out %zu files\n", *files);
    return 0;
  }

  if (log->parsed()) {
    auto from = hex_to_version(log_from);
    if (!from) {
      std::fprintf(stderr, "error: --from: %s\n", from.message().c_str());
      return 2;
    }
    auto history = repo.log(*from, log_limit);
    if (!history) {
      std::fprintf(stderr, "error: %s\n", history.message().c_str());
      return 1;
    }
    for (const auto& c : *history) {
      std::printf("commit %s\n", version_to_hex(c.version).c_str());
      if (c.parents.size() > 1) {
        std::printf("merge of");
        for (const auto& p : c.parents) std::printf(" %s", short_hex(p).c_str());
        std::printf("\n");
      }
      std::printf("author  %s\ndate    %llu\n\n    %s\n\n", c.author.c_str(),
                  static_cast<unsigned long long>(c.timestamp), c.message.c_str());
    }
    return 0;
  }

  if (merge->parsed()) {
    auto ours = hex_to_version(mg_ours);
    auto theirs = hex_to_version(mg_theirs);
    if (!ours || !theirs) {
      std::fprintf(stderr, "error: commits must be valid version hex\n");
      return 2;
    }
    std::uint64_t ts = mg_ts_set ? mg_ts : now_seconds();
    auto outcome = repo.merge_commits(*ours, *theirs, mg_msg, mg_author, ts);
    if (!outcome) {
      std::fprintf(stderr, "error: %s\n", outcome.message().c_str());
      return 1;
    }
    if (!outcome->merged()) {
      std::fprintf(stderr, "conflicts in %zu path(s):\n", outcome->conflicts.size());
      for (const auto& path : outcome->conflicts)
        std::fprintf(stderr, "  %s\n", path.c_str());
      return 1;
    }
    std::printf("%s\n", version_to_hex(outcome->commit).c_str());
    return 0;
  }

  return 2;
}
