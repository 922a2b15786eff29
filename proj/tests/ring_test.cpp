// Consistent-hash ring: determinism, replica selection, balance.

#include <doctest.h>

#include <vstore/ring.hpp>

#include <map>
#include <random>

#include "test_util.hpp"

using namespace vstore;

TEST_CASE("same membership gives identical placement") {
  Ring a({1, 2, 3, 4});
  Ring b({1, 2, 3, 4});
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    auto key = testutil::random_bytes(rng, 1 + rng() % 12);
    auto tag = testutil::random_bytes(rng, rng() % 9);
    CHECK(a.lookup(key, tag) == b.lookup(key, tag));
    CHECK(a.route(key, tag, 3) == b.route(key, tag, 3));
  }
}

TEST_CASE("route returns distinct physical nodes, primary first") {
  Ring ring({10, 20, 30, 40, 50});
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    auto key = testutil::random_bytes(rng, 6);
    auto nodes = ring.route(key, "", 3);
    REQUIRE(nodes.size() == 3);
    CHECK(nodes[0] == ring.lookup(key, ""));
    CHECK(nodes[0] != nodes[1]);
    CHECK(nodes[1] != nodes[2]);
    CHECK(nodes[0] != nodes[2]);
  }
}

TEST_CASE("single-node ring collapses replica sets") {
  Ring ring({7});
  auto nodes = ring.route("key", "", 3);
  REQUIRE(nodes.size() == 1);
  CHECK(nodes[0] == 7);
}

TEST_CASE("replica count capped by physical membership") {
  Ring ring({1, 2});
  CHECK(ring.route("k", "", 5).size() == 2);
  CHECK(ring.physical_nodes() == 2);
}

TEST_CASE("tag changes placement independently of key") {
  Ring ring({1, 2, 3, 4, 5, 6, 7, 8});
  int moved = 0;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    auto key = testutil::random_bytes(rng, 8);
    auto tag = testutil::random_bytes(rng, 8);
    if (ring.lookup(key, "") != ring.lookup(key, tag)) ++moved;
  }
  CHECK(moved > 60);  // fresh tags relocate most keys on an 8-node ring
}

TEST_CASE("virtual points spread load within tolerance") {
  std::vector<NodeId> nodes{1, 2, 3, 4, 5, 6, 7, 8};
  Ring ring(nodes, 64);
  std::map<NodeId, int> hits;
  std::mt19937_64 rng(4);
  const int kKeys = 100000;
  for (int i = 0; i < kKeys; ++i) hits[ring.lookup(testutil::random_bytes(rng, 10), "")]++;

  double expected = double(kKeys) / nodes.size();
  for (auto node : nodes) {
    CHECK(hits[node] > expected * 0.7);
    CHECK(hits[node] < expected * 1.3);
  }
}

TEST_CASE("placement bytes are injective in key and tag") {
  CHECK(placement_bytes("ab", "c") != placement_bytes("a", "bc"));
  CHECK(placement_bytes("a", "") != placement_bytes("", "a"));
}
