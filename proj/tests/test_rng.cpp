#include <doctest.h>

#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "fisherjscc/rng.hpp"

using namespace fisherjscc;

TEST_SUITE("rng") {

TEST_CASE("philox4x32-10 known-answer vectors") {
  using A4 = std::array<std::uint32_t, 4>;
  CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        A4{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        A4{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams are reproducible and distinct") {
  CounterRng a(42, 0), b(42, 0), c(42, 1), d(43, 0);
  std::vector<std::uint64_t> va, vb, vc, vd;
  for (int i = 0; i < 16; ++i) {
    va.push_back(a.next_u64());
    vb.push_back(b.next_u64());
    vc.push_back(c.next_u64());
    vd.push_back(d.next_u64());
  }
  CHECK(va == vb);
  CHECK(va != vc);
  CHECK(va != vd);
}

TEST_CASE("derive_seed separates labels and indices") {
  std::set<std::uint64_t> seen;
  seen.insert(derive_seed(1, "noise", {0, 0}));
  seen.insert(derive_seed(1, "noise", {0, 1}));
  seen.insert(derive_seed(1, "noise", {1, 0}));
  seen.insert(derive_seed(1, "noise"));
  seen.insert(derive_seed(1, "shuffle", {0, 0}));
  seen.insert(derive_seed(2, "noise", {0, 0}));
  CHECK(seen.size() == 6);
  CHECK(derive_seed(9, "data") == derive_seed(9, "data"));
}

TEST_CASE("uniform draws lie in their intervals and have mean 1/2") {
  CounterRng rng(5);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    const double v = rng.uniform_open0();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(v > 0.0);
    REQUIRE(v <= 1.0);
    sum += u;
  }
  // 6 standard errors of a U(0,1) mean.
  CHECK(std::abs(sum / n - 0.5) < 6.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST_CASE("normal draws have unit variance and light tails") {
  CounterRng rng(6);
  const int n = 200000;
  double s1 = 0.0, s2 = 0.0, s4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s1 += x;
    s2 += x * x;
    s4 += x * x * x * x;
  }
  CHECK(std::abs(s1 / n) < 6.0 / std::sqrt(n));
  CHECK(std::abs(s2 / n - 1.0) < 6.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(s4 / n - 3.0) < 6.0 * std::sqrt(96.0 / n));
}

TEST_CASE("below is unbiased over a non power of two") {
  CounterRng rng(7);
  std::array<int, 3> counts{};
  const int n = 90000;
  for (int i = 0; i < n; ++i) ++counts[rng.below(3)];
  for (int c : counts) CHECK(std::abs(c - n / 3) < 6 * std::sqrt(n * (1.0 / 3) * (2.0 / 3)));
  CHECK_THROWS_AS(rng.below(0), std::invalid_argument);
}

}
