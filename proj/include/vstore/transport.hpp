#pragma once

// How a client (or a peer server) reaches cluster nodes. The simulator and
// the TCP stack both implement this; everything above it — quorum writes,
// replica fallback, scans, subscriptions — is transport-agnostic.

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "ring.hpp"
#include "view.hpp"
#include "wire.hpp"

namespace vstore {

class Transport {
 public:
  virtual ~Transport() = default;

  // One request/response exchange. nullopt = node unreachable (or the reply
  // was lost); the caller decides whether to fall back or fail.
  virtual std::optional<wire::Frame> call(NodeId node, const wire::Frame& request) = 0;

  // Same request to several nodes; result i corresponds to nodes[i].
  virtual std::vector<std::optional<wire::Frame>> multicall(
      const std::vector<NodeId>& nodes, const wire::Frame& request) {
    std::vector<std::optional<wire::Frame>> out;
    out.reserve(nodes.size());
    for (NodeId node : nodes) out.push_back(call(node, request));
    return out;
  }

  // Register a push channel on `node` for events about `key`. The sink is
  // invoked on delivery and returns true to acknowledge. Returns the
  // subscription id assigned by that node.
  virtual Result<std::uint64_t> subscribe(NodeId node, std::string_view user,
                                          std::string_view key, Broker::Sink sink) = 0;
};

}  // namespace vstore
