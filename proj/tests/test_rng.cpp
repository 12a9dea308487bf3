#include "cmo/rng.hpp"

#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <vector>

using cmo::Rng;

TEST_CASE("same seed gives the same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a() == b());
}

TEST_CASE("substreams depend on the path only") {
  Rng parent(7);
  Rng s1 = parent.substream({1, 2});
  for (int i = 0; i < 100; ++i) parent();
  Rng s2 = parent.substream({1, 2});
  for (int i = 0; i < 100; ++i) CHECK(s1() == s2());
  CHECK(parent.substream({1, 2}).seed() != parent.substream({2, 1}).seed());
  CHECK(parent.substream({1}).seed() != parent.substream({1, 0}).seed());
  CHECK(Rng(7).substream({3}).seed() != Rng(8).substream({3}).seed());
}

TEST_CASE("below is in range and roughly uniform") {
  Rng rng(1);
  std::vector<int> hits(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    const auto v = rng.below(7);
    REQUIRE(v < 7);
    ++hits[v];
  }
  for (int h : hits) CHECK(std::abs(h - n / 7) < 400);
}

TEST_CASE("uniform lies in [0, 1)") {
  Rng rng(2);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
  CHECK(lo < 1e-3);
  CHECK(hi > 1.0 - 1e-3);
}

TEST_CASE("shuffle is a deterministic permutation") {
  std::vector<int> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  b = a;
  Rng r1(9), r2(9);
  cmo::shuffle(a.begin(), a.end(), r1);
  cmo::shuffle(b.begin(), b.end(), r2);
  CHECK(a == b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  std::vector<int> id(50);
  std::iota(id.begin(), id.end(), 0);
  CHECK(a != id);
}
