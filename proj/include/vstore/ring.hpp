#pragma once

// Consistent-hash ring over a 64-bit space.
//
// Every node contributes a fixed number of virtual points (default 64),
// placed at hash64(node_id "#" point_index). A lookup walks clockwise from
// hash64(placement bytes) to the first point; replica routing continues
// clockwise collecting the next distinct physical nodes.
//
// Placement bytes for key k with node tag n are the injective pairing
// lp(k) || lp(n), so an empty tag and a tagged relocation land independently.

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "common.hpp"
#include "sha256.hpp"

namespace vstore {

using NodeId = std::uint32_t;

inline std::string placement_bytes(std::string_view key, std::string_view tag) {
  std::string out;
  put_lp(out, key);
  put_lp(out, tag);
  return out;
}

class Ring {
 public:
  static constexpr std::uint32_t kDefaultVirtualPoints = 64;

  Ring() = default;

  Ring(const std::vector<NodeId>& nodes, std::uint32_t virtual_points = kDefaultVirtualPoints) {
    for (NodeId node : nodes) add_node(node, virtual_points);
  }

  void add_node(NodeId node, std::uint32_t virtual_points = kDefaultVirtualPoints) {
    for (std::uint32_t i = 0; i < virtual_points; ++i) {
      std::string label = std::to_string(node) + "#" + std::to_string(i);
      points_.push_back({hash64(label), node});
    }
    std::sort(points_.begin(), points_.end());
    physical_ = members().size();
  }

  std::size_t physical_nodes() const { return physical_; }
  bool empty() const { return points_.empty(); }

  // Sorted list of distinct physical node ids on the ring.
  std::vector<NodeId> members() const {
    std::vector<NodeId> ids;
    ids.reserve(points_.size());
    for (const auto& p : points_) ids.push_back(p.second);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  }

  // Owner of the first virtual point clockwise from the placement hash.
  NodeId lookup(std::string_view key, std::string_view tag) const {
    return points_[first_index(key, tag)].second;
  }

  // Primary plus the next distinct physical successors, up to n_replicas
  // total. Fewer physical nodes than n_replicas collapses the list.
  std::vector<NodeId> route(std::string_view key, std::string_view tag,
                            std::size_t n_replicas) const {
    std::vector<NodeId> out;
    if (points_.empty()) return out;
    std::size_t want = std::min(n_replicas, physical_);
    std::size_t idx = first_index(key, tag);
    for (std::size_t step = 0; step < points_.size() && out.size() < want; ++step) {
      NodeId node = points_[(idx + step) % points_.size()].second;
      if (std::find(out.begin(), out.end(), node) == out.end()) out.push_back(node);
    }
    return out;
  }

 private:
  std::size_t first_index(std::string_view key, std::string_view tag) const {
    std::uint64_t point = hash64(placement_bytes(key, tag));
    auto it = std::lower_bound(points_.begin(), points_.end(),
                               std::make_pair(point, NodeId{0}));
    if (it == points_.end()) it = points_.begin();
    return static_cast<std::size_t>(it - points_.begin());
  }

  std::vector<std::pair<std::uint64_t, NodeId>> points_;
  std::size_t physical_ = 0;
};

}  // namespace vstore
