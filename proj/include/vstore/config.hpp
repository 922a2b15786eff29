#pragma once

// JSON configuration files for the command-line tools. Loaders are lenient
// about extra keys and strict about values: anything malformed surfaces as
// kConfigInvalid with the offending field named.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "common.hpp"
#include "net.hpp"
#include "workload.hpp"

namespace vstore {

// A single node process.
//
// {
//   "node_id": 0,
//   "listen": "127.0.0.1:7400",
//   "peers": { "0": "127.0.0.1:7400", "1": "127.0.0.1:7401", ... },
//   "n_replicas": 3, "write_quorum": 2, "virtual_points": 64,
//   "region_capacity": 1048576, "cache_budget": 4194304,
//   "compress": true, "seed": 1, "coordinator": false
// }
//
// `peers` must list every cluster node (this one included) under its node id;
// every process must agree on the peer map and virtual_points so they derive
// the same ring.
struct ServerConfig {
  NodeId node_id = 0;
  std::string listen = "127.0.0.1:7400";
  std::map<NodeId, std::string> peers;
  std::size_t n_replicas = 3;
  std::size_t write_quorum = 2;
  std::uint32_t virtual_points = Ring::kDefaultVirtualPoints;
  std::uint64_t region_capacity = kDefaultRegionCapacity;
  std::uint64_t cache_budget = kDefaultCacheBudget;
  bool compress = true;
  std::uint64_t seed = 1;
  bool coordinator = false;
};

namespace config_detail {

inline Result<nlohmann::json> load_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    return {ErrorCode::kIOFailure, "cannot open config file " + path};
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    return {ErrorCode::kConfigInvalid, path + ": " + e.what()};
  }
}

// Node-id-keyed address map; JSON object keys are strings, so parse them.
inline Result<std::map<NodeId, std::string>> parse_addr_map(
    const nlohmann::json& j, const char* field) {
  if (!j.is_object())
    return {ErrorCode::kConfigInvalid, std::string(field) + " must be an object"};
  std::map<NodeId, std::string> out;
  for (const auto& [key, value] : j.items()) {
    char* end = nullptr;
    long id = std::strtol(key.c_str(), &end, 10);
    if (end == nullptr || *end != '\0' || id < 0)
      return {ErrorCode::kConfigInvalid,
              std::string(field) + " key '" + key + "' is not a node id"};
    if (!value.is_string())
      return {ErrorCode::kConfigInvalid,
              std::string(field) + "[" + key + "] must be an address string"};
    out[static_cast<NodeId>(id)] = value.get<std::string>();
  }
  return out;
}

inline Result<WorkloadSpec> parse_workload(const nlohmann::json& j) {
  if (!j.is_object())
    return {ErrorCode::kConfigInvalid, "workload must be an object"};
  WorkloadSpec spec;
  try {
    std::string kind = j.value("kind", std::string("mixed"));
    auto parsed = parse_workload_kind(kind);
    if (!parsed)
      return {ErrorCode::kConfigInvalid, "unknown workload kind '" + kind + "'"};
    spec.kind = *parsed;
    spec.operations = j.value("operations", spec.operations);
    spec.keys = j.value("keys", spec.keys);
    spec.record_size = j.value("record_size", spec.record_size);
    spec.read_fraction = j.value("read_fraction", spec.read_fraction);
    spec.chain_length = j.value("chain_length", spec.chain_length);
    spec.scan_m = j.value("scan_m", spec.scan_m);
    spec.edit_window = j.value("edit_window", spec.edit_window);
    spec.max_edit = j.value("max_edit", spec.max_edit);
    spec.zipf_exponent = j.value("zipf_exponent", spec.zipf_exponent);
    spec.txn_group = j.value("txn_group", spec.txn_group);
    spec.coordinator = j.value("coordinator", spec.coordinator);
  } catch (const nlohmann::json::exception& e) {
    return {ErrorCode::kConfigInvalid, std::string("workload: ") + e.what()};
  }
  if (auto ok = validate(spec); !ok) return {ok.code(), ok.message()};
  return spec;
}

}  // namespace config_detail

inline Result<ServerConfig> load_server_config(const std::string& path) {
  auto doc = config_detail::load_json(path);
  if (!doc) return {doc.code(), doc.message()};
  ServerConfig cfg;
  try {
    cfg.node_id = doc->value("node_id", cfg.node_id);
    cfg.listen = doc->value("listen", cfg.listen);
    if (doc->contains("peers")) {
      auto peers = config_detail::parse_addr_map((*doc)["peers"], "peers");
      if (!peers) return {peers.code(), peers.message()};
      cfg.peers = std::move(*peers);
    }
    cfg.n_replicas = doc->value("n_replicas", cfg.n_replicas);
    cfg.write_quorum = doc->value("write_quorum", cfg.write_quorum);
    cfg.virtual_points = doc->value("virtual_points", cfg.virtual_points);
    cfg.region_capacity = doc->value("region_capacity", cfg.region_capacity);
    cfg.cache_budget = doc->value("cache_budget", cfg.cache_budget);
    cfg.compress = doc->value("compress", cfg.compress);
    cfg.seed = doc->value("seed", cfg.seed);
    cfg.coordinator = doc->value("coordinator", cfg.coordinator);
  } catch (const nlohmann::json::exception& e) {
    return {ErrorCode::kConfigInvalid, path + ": " + e.what()};
  }
  if (cfg.peers.empty())
    return {ErrorCode::kConfigInvalid, "peers must list every cluster node"};
  if (cfg.peers.count(cfg.node_id) == 0)
    return {ErrorCode::kConfigInvalid, "peers must include this node's own id"};
  if (cfg.n_replicas == 0 || cfg.n_replicas > cfg.peers.size())
    return {ErrorCode::kConfigInvalid, "n_replicas must lie in [1, node count]"};
  if (cfg.write_quorum == 0 || cfg.write_quorum > cfg.n_replicas)
    return {ErrorCode::kConfigInvalid, "write_quorum must lie in [1, n_replicas]"};
  return cfg;
}

// Simulator run:
//
// {
//   "cluster": { "nodes": 4, "n_replicas": 3, "write_quorum": 2, "seed": 1,
//                "virtual_points": 64, "region_capacity": 1048576,
//                "cache_budget": 4194304, "compress": true, "max_redirects": 3 },
//   "workload": { "kind": "mixed", ... },
//   "downs":   [ { "node": 1, "from": 100, "to": 500 } ],
//   "crashes": [ { "node": 2, "at": 900 } ]
// }
inline Result<SimRunConfig> load_sim_config(const std::string& path) {
  auto doc = config_detail::load_json(path);
  if (!doc) return {doc.code(), doc.message()};
  SimRunConfig cfg;
  try {
    if (doc->contains("cluster")) {
      const auto& c = (*doc)["cluster"];
      cfg.cluster.nodes = c.value("nodes", cfg.cluster.nodes);
      cfg.cluster.n_replicas = c.value("n_replicas", cfg.cluster.n_replicas);
      cfg.cluster.write_quorum = c.value("write_quorum", cfg.cluster.write_quorum);
      cfg.cluster.virtual_points = c.value("virtual_points", cfg.cluster.virtual_points);
      cfg.cluster.seed = c.value("seed", cfg.cluster.seed);
      cfg.cluster.default_capacity = c.value("region_capacity", cfg.cluster.default_capacity);
      cfg.cluster.cache_budget = c.value("cache_budget", cfg.cluster.cache_budget);
      cfg.cluster.compress = c.value("compress", cfg.cluster.compress);
      cfg.cluster.max_redirects = c.value("max_redirects", cfg.cluster.max_redirects);
    }
    if (doc->contains("workload")) {
      auto spec = config_detail::parse_workload((*doc)["workload"]);
      if (!spec) return {spec.code(), spec.message()};
      cfg.workload = std::move(*spec);
    }
    for (const auto& d : doc->value("downs", nlohmann::json::array())) {
      FaultWindow w;
      w.node = d.value("node", w.node);
      w.from = d.value("from", w.from);
      w.to = d.value("to", w.to);
      cfg.downs.push_back(w);
    }
    for (const auto& d : doc->value("crashes", nlohmann::json::array())) {
      CrashEvent c;
      c.node = d.value("node", c.node);
      c.at = d.value("at", c.at);
      cfg.crashes.push_back(c);
    }
  } catch (const nlohmann::json::exception& e) {
    return {ErrorCode::kConfigInvalid, path + ": " + e.what()};
  }
  if (auto ok = validate(cfg); !ok) return {ok.code(), ok.message()};
  return cfg;
}

// Bench run against live servers:
//
// {
//   "nodes": { "0": "127.0.0.1:7400", ... },
//   "n_replicas": 3, "write_quorum": 2, "seed": 1, "virtual_points": 64,
//   "max_redirects": 3, "settle_ms": 300,
//   "workload": { "kind": "mixed", ... }
// }
inline Result<BenchConfig> load_bench_config(const std::string& path) {
  auto doc = config_detail::load_json(path);
  if (!doc) return {doc.code(), doc.message()};
  BenchConfig cfg;
  try {
    if (doc->contains("nodes")) {
      auto nodes = config_detail::parse_addr_map((*doc)["nodes"], "nodes");
      if (!nodes) return {nodes.code(), nodes.message()};
      cfg.nodes = std::move(*nodes);
    }
    cfg.n_replicas = doc->value("n_replicas", cfg.n_replicas);
    cfg.write_quorum = doc->value("write_quorum", cfg.write_quorum);
    cfg.max_redirects = doc->value("max_redirects", cfg.max_redirects);
    cfg.virtual_points = doc->value("virtual_points", cfg.virtual_points);
    cfg.seed = doc->value("seed", cfg.seed);
    cfg.settle_ms = doc->value("settle_ms", cfg.settle_ms);
    if (doc->contains("workload")) {
      auto spec = config_detail::parse_workload((*doc)["workload"]);
      if (!spec) return {spec.code(), spec.message()};
      cfg.workload = std::move(*spec);
    }
  } catch (const nlohmann::json::exception& e) {
    return {ErrorCode::kConfigInvalid, path + ": " + e.what()};
  }
  if (cfg.nodes.empty())
    return {ErrorCode::kConfigInvalid, "nodes must list at least one server"};
  return cfg;
}

}  // namespace vstore
