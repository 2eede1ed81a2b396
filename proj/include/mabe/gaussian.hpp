#pragma once

// Diagonal Gaussian distributions: the output head of the policy, the
// behavioral prior, and every dynamics-ensemble member.

#include <cmath>
#include <string>

#include "mabe/core.hpp"

namespace mabe {

inline constexpr double kLogStdMin = -10.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct DiagGaussian {
  Vec mean;
  Vec log_std;  // clamped to [kLogStdMin, kLogStdMax] by constructors below

  int dim() const { return static_cast<int>(mean.size()); }
  double std(int i) const { return std::exp(log_std[i]); }
};

inline DiagGaussian make_gaussian(Vec mean, Vec log_std,
                                  double lo = kLogStdMin, double hi = kLogStdMax) {
  if (mean.size() != log_std.size())
    throw ConfigError("gaussian mean/log_std dimension mismatch: " +
                      std::to_string(mean.size()) + " vs " + std::to_string(log_std.size()));
  for (double& v : log_std) v = clamp(v, lo, hi);
  return DiagGaussian{std::move(mean), std::move(log_std)};
}

// Sum over dimensions of the exact diagonal-Gaussian log density.
inline double gaussian_log_prob(const DiagGaussian& d, std::span<const double> x) {
  if (static_cast<int>(x.size()) != d.dim())
    throw ConfigError("gaussian_log_prob dimension mismatch");
  double lp = 0.0;
  for (int i = 0; i < d.dim(); ++i) {
    const double s = d.std(i);
    const double z = (x[i] - d.mean[i]) / s;
    lp += -d.log_std[i] - 0.5 * kLog2Pi - 0.5 * z * z;
  }
  return lp;
}

// Closed-form KL(p || q) for diagonal Gaussians; >= 0, zero iff p == q.
inline double gaussian_kl(const DiagGaussian& p, const DiagGaussian& q) {
  if (p.dim() != q.dim())
    throw ConfigError("gaussian_kl dimension mismatch");
  double kl = 0.0;
  for (int i = 0; i < p.dim(); ++i) {
    const double sp = p.std(i), sq = q.std(i);
    const double dm = p.mean[i] - q.mean[i];
    kl += q.log_std[i] - p.log_std[i] + (sp * sp + dm * dm) / (2.0 * sq * sq) - 0.5;
  }
  return kl;
}

// Gradient of KL(p || q) with respect to p's mean and log_std.
// d/dmu_p   = (mu_p - mu_q) / sq^2
// d/dlogs_p = sp^2 / sq^2 - 1
inline void gaussian_kl_grad_p(const DiagGaussian& p, const DiagGaussian& q,
                               Vec& d_mean, Vec& d_log_std) {
  const int n = p.dim();
  d_mean.assign(n, 0.0);
  d_log_std.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const double sp = p.std(i), sq = q.std(i);
    d_mean[i] = (p.mean[i] - q.mean[i]) / (sq * sq);
    d_log_std[i] = (sp * sp) / (sq * sq) - 1.0;
  }
}

// Reparameterized sample: mean + std * noise. Pathwise differentiable in
// (mean, log_std); the noise vector is supplied by the caller.
inline Vec gaussian_sample(const DiagGaussian& d, std::span<const double> noise) {
  if (static_cast<int>(noise.size()) != d.dim())
    throw ConfigError("gaussian_sample noise dimension mismatch");
  Vec x(d.dim());
  for (int i = 0; i < d.dim(); ++i) x[i] = d.mean[i] + d.std(i) * noise[i];
  return x;
}

inline Vec draw_standard_normal(Rng& rng, int dim) {
  Vec z(dim);
  for (int i = 0; i < dim; ++i) z[i] = rng.normal();
  return z;
}

// Entropy of a diagonal Gaussian: sum(log_std) + dim/2 * (1 + log 2pi).
inline double gaussian_entropy(const DiagGaussian& d) {
  double h = 0.5 * d.dim() * (1.0 + kLog2Pi);
  for (int i = 0; i < d.dim(); ++i) h += d.log_std[i];
  return h;
}

}  // namespace mabe
