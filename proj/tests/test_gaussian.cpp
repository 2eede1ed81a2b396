#include <catch2/catch_amalgamated.hpp>

#include "mabe/core.hpp"
#include "mabe/gaussian.hpp"

using namespace mabe;

namespace {

DiagGaussian random_gaussian(Rng& rng, int dim) {
  Vec mean(dim), ls(dim);
  for (int i = 0; i < dim; ++i) {
    mean[i] = rng.uniform(-2.0, 2.0);
    ls[i] = rng.uniform(-1.5, 0.5);
  }
  return make_gaussian(std::move(mean), std::move(ls));
}

// independent density evaluation, no shared code with gaussian_log_prob
double oracle_log_prob(const DiagGaussian& d, const Vec& x) {
  double lp = 0.0;
  for (int i = 0; i < d.dim(); ++i) {
    const double var = std::exp(2.0 * d.log_std[i]);
    lp += -0.5 * std::log(2.0 * 3.14159265358979323846 * var) -
          (x[i] - d.mean[i]) * (x[i] - d.mean[i]) / (2.0 * var);
  }
  return lp;
}

}  // namespace

TEST_CASE("standard normal density at the mode") {
  DiagGaussian d = make_gaussian({0.0}, {0.0});
  REQUIRE(gaussian_log_prob(d, Vec{0.0}) == Catch::Approx(-0.9189385332046727).epsilon(1e-12));
}

TEST_CASE("log prob at the mean drops the quadratic term") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    DiagGaussian d = random_gaussian(rng, 4);
    double expected = 0.0;
    for (int i = 0; i < 4; ++i) expected -= d.log_std[i];
    expected -= 0.5 * 4 * kLog2Pi;
    REQUIRE(gaussian_log_prob(d, d.mean) == Catch::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("log prob matches an independent closed form") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    DiagGaussian d = random_gaussian(rng, 3);
    Vec x(3);
    for (double& v : x) v = rng.uniform(-3.0, 3.0);
    REQUIRE(gaussian_log_prob(d, x) == Catch::Approx(oracle_log_prob(d, x)).epsilon(1e-12));
  }
}

TEST_CASE("log prob dimension mismatch raises") {
  DiagGaussian d = make_gaussian({0.0, 0.0}, {0.0, 0.0});
  REQUIRE_THROWS_AS(gaussian_log_prob(d, Vec{0.0}), ConfigError);
}

TEST_CASE("kl of identical distributions is exactly zero") {
  Rng rng(5);
  DiagGaussian d = random_gaussian(rng, 6);
  REQUIRE(gaussian_kl(d, d) == 0.0);
}

TEST_CASE("unit-variance mean shift of one gives kl 0.5") {
  DiagGaussian p = make_gaussian({1.0}, {0.0});
  DiagGaussian q = make_gaussian({0.0}, {0.0});
  REQUIRE(gaussian_kl(p, q) == Catch::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("kl matches a monte carlo estimate within 3 standard errors") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    DiagGaussian p = random_gaussian(rng, 2);
    DiagGaussian q = random_gaussian(rng, 2);
    const double kl = gaussian_kl(p, q);
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
      Vec noise = draw_standard_normal(rng, 2);
      Vec x = gaussian_sample(p, noise);
      const double v = gaussian_log_prob(p, x) - gaussian_log_prob(q, x);
      sum += v;
      sumsq += v * v;
    }
    const double mc = sum / n;
    const double se = std::sqrt(std::max(0.0, sumsq / n - mc * mc) / n);
    REQUIRE(std::abs(kl - mc) < 3.0 * se + 1e-9);
  }
}

TEST_CASE("kl is nonnegative and zero only at equality") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    DiagGaussian p = random_gaussian(rng, 3);
    DiagGaussian q = random_gaussian(rng, 3);
    const double kl = gaussian_kl(p, q);
    REQUIRE(kl >= 0.0);
    if (p.mean != q.mean || p.log_std != q.log_std) REQUIRE(kl > 0.0);
  }
}

TEST_CASE("kl gradient matches finite differences") {
  Rng rng(37);
  DiagGaussian p = random_gaussian(rng, 3);
  DiagGaussian q = random_gaussian(rng, 3);
  Vec dm, dls;
  gaussian_kl_grad_p(p, q, dm, dls);
  const double step = 1e-6;
  for (int i = 0; i < 3; ++i) {
    DiagGaussian p1 = p, p2 = p;
    p1.mean[i] += step;
    p2.mean[i] -= step;
    REQUIRE(dm[i] ==
            Catch::Approx((gaussian_kl(p1, q) - gaussian_kl(p2, q)) / (2 * step)).margin(1e-5));
    p1 = p;
    p2 = p;
    p1.log_std[i] += step;
    p2.log_std[i] -= step;
    REQUIRE(dls[i] ==
            Catch::Approx((gaussian_kl(p1, q) - gaussian_kl(p2, q)) / (2 * step)).margin(1e-5));
  }
}

TEST_CASE("sampling with zero noise returns the mean") {
  Rng rng(41);
  DiagGaussian d = random_gaussian(rng, 5);
  Vec zero(5, 0.0);
  REQUIRE(gaussian_sample(d, zero) == d.mean);
}

TEST_CASE("log_std at the clamp floor keeps samples near the mean") {
  DiagGaussian d = make_gaussian({1.0, -1.0}, {-100.0, -100.0});  // clamps to the floor
  REQUIRE(d.log_std[0] == kLogStdMin);
  Vec noise{3.0, -3.0};
  Vec x = gaussian_sample(d, noise);
  REQUIRE(std::abs(x[0] - 1.0) <= 3.0 * std::exp(kLogStdMin));
  REQUIRE(std::abs(x[1] + 1.0) <= 3.0 * std::exp(kLogStdMin));
}

TEST_CASE("sample moments match the distribution within 3 standard errors") {
  Rng rng(43);
  DiagGaussian d = make_gaussian({0.7, -0.3}, {std::log(0.5), std::log(1.5)});
  const int n = 100000;
  Vec mean(2, 0.0), var(2, 0.0);
  for (int i = 0; i < n; ++i) {
    Vec x = gaussian_sample(d, draw_standard_normal(rng, 2));
    for (int j = 0; j < 2; ++j) mean[j] += x[j];
  }
  for (double& v : mean) v /= n;
  Rng rng2(43);
  for (int i = 0; i < n; ++i) {
    Vec x = gaussian_sample(d, draw_standard_normal(rng2, 2));
    for (int j = 0; j < 2; ++j) var[j] += (x[j] - mean[j]) * (x[j] - mean[j]);
  }
  for (double& v : var) v /= n;
  for (int j = 0; j < 2; ++j) {
    const double sd = d.std(j);
    REQUIRE(std::abs(mean[j] - d.mean[j]) < 3.0 * sd / std::sqrt(static_cast<double>(n)));
    // var of sample variance ~ 2 sd^4 / n
    REQUIRE(std::abs(var[j] - sd * sd) < 3.0 * sd * sd * std::sqrt(2.0 / n));
  }
}

TEST_CASE("importance identity integrates to one at smoke level") {
  // E_q[p(x)/q(x)] = 1 when q covers p
  Rng rng(47);
  DiagGaussian p = make_gaussian({0.3}, {std::log(0.8)});
  DiagGaussian q = make_gaussian({0.0}, {std::log(1.5)});
  const int n = 200000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    Vec x = gaussian_sample(q, draw_standard_normal(rng, 1));
    sum += std::exp(gaussian_log_prob(p, x) - gaussian_log_prob(q, x));
  }
  REQUIRE(sum / n == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("mismatched mean and log_std widths raise") {
  REQUIRE_THROWS_AS(make_gaussian({0.0, 1.0}, {0.0}), ConfigError);
}
