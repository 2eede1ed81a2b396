#include <catch2/catch_amalgamated.hpp>

#include "mabe/core.hpp"

using namespace mabe;

TEST_CASE("rng is deterministic per seed") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
  Rng c(43);
  REQUIRE(Rng(42).next_u64() != c.next_u64());
}

TEST_CASE("rng uniform stays in range and looks flat") {
  Rng rng(7);
  const int n = 100000;
  double mean = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    mean += u;
  }
  mean /= n;
  // 3 standard errors of the mean of U(0,1)
  REQUIRE(std::abs(mean - 0.5) < 3.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST_CASE("rng normal has the right first two moments") {
  Rng rng(11);
  const int n = 100000;
  double m = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    m += z;
    s2 += z * z;
  }
  m /= n;
  s2 = s2 / n - m * m;
  REQUIRE(std::abs(m) < 3.0 / std::sqrt(static_cast<double>(n)));
  REQUIRE(std::abs(s2 - 1.0) < 0.05);
}

TEST_CASE("derived streams differ from the parent and from each other") {
  Rng rng(5);
  Rng a = rng.derive(0), b = rng.derive(1), c = rng.derive("rollout");
  REQUIRE(a.next_u64() != b.next_u64());
  REQUIRE(a.next_u64() != c.next_u64());
  // deriving does not advance the parent
  Rng rng2(5);
  rng2.derive(0);
  REQUIRE(Rng(5).next_u64() == rng2.next_u64());
}

TEST_CASE("matvec computes W x + b") {
  Mat w(2, 3);
  w.at(0, 0) = 1;
  w.at(0, 1) = 2;
  w.at(0, 2) = 3;
  w.at(1, 0) = -1;
  w.at(1, 1) = 0;
  w.at(1, 2) = 1;
  Vec x{1, 1, 1}, b{10, 20}, y;
  matvec(w, x, b, y);
  REQUIRE(y[0] == Catch::Approx(16.0));
  REQUIRE(y[1] == Catch::Approx(20.0));
}

TEST_CASE("fnv1a64 is stable") {
  REQUIRE(fnv1a64("") == 0xCBF29CE484222325ULL);
  REQUIRE(fnv1a64("a") != fnv1a64("b"));
}
