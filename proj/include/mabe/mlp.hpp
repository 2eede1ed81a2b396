#pragma once

// Dense feed-forward networks with rectifier hidden units, hand-rolled
// reverse-mode gradients, and a bias-corrected adaptive-moment optimizer.
// This is the substrate every trainable object in the library sits on:
// policies, priors, critics, and dynamics members are all MlpParams.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mabe/core.hpp"
#include "mabe/gaussian.hpp"

namespace mabe {

enum class Head { Linear, Gaussian };

struct MlpParams {
  struct Layer {
    Mat w;  // [out x in]
    Vec b;  // [out]
  };
  std::vector<Layer> layers;
  Head head = Head::Linear;
  double log_std_min = kLogStdMin;
  double log_std_max = kLogStdMax;

  int in_dim() const { return layers.front().w.cols; }
  int out_dim() const { return layers.back().w.rows; }  // raw output width
  // Width of the mean/log_std halves of a gaussian two-head output.
  int gaussian_dim() const { return out_dim() / 2; }
  int num_layers() const { return static_cast<int>(layers.size()); }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& l : layers) n += l.w.a.size() + l.b.size();
    return n;
  }
};

// Grads share the layer layout of the params they differentiate.
using MlpGrads = MlpParams;

inline MlpGrads make_grads_like(const MlpParams& p) {
  MlpGrads g;
  g.head = p.head;
  g.layers.reserve(p.layers.size());
  for (const auto& l : p.layers)
    g.layers.push_back({Mat(l.w.rows, l.w.cols), Vec(l.b.size(), 0.0)});
  return g;
}

inline void check_shape(const MlpParams& p) {
  if (p.layers.empty()) throw ConfigError("mlp has no layers");
  for (size_t i = 0; i + 1 < p.layers.size(); ++i) {
    if (p.layers[i].w.rows != p.layers[i + 1].w.cols)
      throw ConfigError("mlp layer dimensions do not chain at layer " + std::to_string(i));
  }
  for (const auto& l : p.layers) {
    if (static_cast<int>(l.b.size()) != l.w.rows)
      throw ConfigError("mlp bias width does not match weight rows");
    if (!all_finite(l.w.a) || !all_finite(l.b))
      throw NumericError("mlp parameters contain non-finite entries");
  }
  if (p.head == Head::Gaussian && p.out_dim() % 2 != 0)
    throw ConfigError("gaussian two-head output width must be even");
}

// He-style init for rectifier hidden layers; the final layer is scaled down
// so fresh policies start near-deterministic around zero.
inline MlpParams init_mlp(int in, const std::vector<int>& hidden, int out, Head head,
                          Rng& rng, double final_scale = 0.01) {
  MlpParams p;
  p.head = head;
  std::vector<int> dims;
  dims.push_back(in);
  for (int h : hidden) dims.push_back(h);
  dims.push_back(out);
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    MlpParams::Layer l{Mat(dims[i + 1], dims[i]), Vec(dims[i + 1], 0.0)};
    const bool last = (i + 2 == dims.size());
    const double scale = last ? final_scale : std::sqrt(2.0 / dims[i]);
    for (double& v : l.w.a) v = scale * rng.normal();
    p.layers.push_back(std::move(l));
  }
  check_shape(p);
  return p;
}

struct MlpCache {
  std::vector<Vec> x;  // x[l] = input to layer l; x[L] = raw output
  std::vector<Vec> z;  // z[l] = pre-activation of layer l
};

// Deterministic forward pass; returns the raw output vector.
inline Vec mlp_forward(const MlpParams& p, std::span<const double> input, MlpCache* cache = nullptr) {
  if (static_cast<int>(input.size()) != p.in_dim())
    throw ConfigError("mlp_forward input width " + std::to_string(input.size()) +
                      " != layer width " + std::to_string(p.in_dim()));
  Vec x(input.begin(), input.end());
  if (cache) {
    cache->x.clear();
    cache->z.clear();
    cache->x.push_back(x);
  }
  const int L = p.num_layers();
  Vec z;
  for (int l = 0; l < L; ++l) {
    matvec(p.layers[l].w, x, p.layers[l].b, z);
    if (cache) cache->z.push_back(z);
    if (l + 1 < L) {
      for (double& v : z) v = v > 0.0 ? v : 0.0;  // rectifier
    }
    x = z;
    if (cache) cache->x.push_back(x);
  }
  return x;
}

inline DiagGaussian raw_to_gaussian(const MlpParams& p, Vec raw) {
  const int m = p.gaussian_dim();
  Vec mean(raw.begin(), raw.begin() + m);
  Vec ls(raw.begin() + m, raw.end());
  return make_gaussian(std::move(mean), std::move(ls), p.log_std_min, p.log_std_max);
}

inline DiagGaussian mlp_forward_gaussian(const MlpParams& p, std::span<const double> input,
                                         MlpCache* cache = nullptr) {
  if (p.head != Head::Gaussian) throw ConfigError("mlp_forward_gaussian on linear-head net");
  return raw_to_gaussian(p, mlp_forward(p, input, cache));
}

// Reverse pass from d(loss)/d(raw output). Accumulates parameter gradients
// into g and returns d(loss)/d(input), so composite objectives can chain
// networks (critic -> action -> policy).
inline Vec mlp_backward(const MlpParams& p, const MlpCache& cache,
                        std::span<const double> grad_out, MlpGrads& g) {
  const int L = p.num_layers();
  Vec delta(grad_out.begin(), grad_out.end());
  for (int l = L - 1; l >= 0; --l) {
    const auto& layer = p.layers[l];
    auto& gl = g.layers[l];
    const Vec& xin = cache.x[l];
    if (l + 1 < L) {
      // rectifier subgradient on this layer's output
      const Vec& zpre = cache.z[l];
      for (int r = 0; r < layer.w.rows; ++r)
        if (zpre[r] <= 0.0) delta[r] = 0.0;
    }
    for (int r = 0; r < layer.w.rows; ++r) {
      gl.b[r] += delta[r];
      double* grow = gl.w.a.data() + static_cast<size_t>(r) * layer.w.cols;
      const double d = delta[r];
      for (int c = 0; c < layer.w.cols; ++c) grow[c] += d * xin[c];
    }
    Vec prev(layer.w.cols, 0.0);
    for (int r = 0; r < layer.w.rows; ++r) {
      const double* row = layer.w.a.data() + static_cast<size_t>(r) * layer.w.cols;
      const double d = delta[r];
      for (int c = 0; c < layer.w.cols; ++c) prev[c] += row[c] * d;
    }
    delta = std::move(prev);
  }
  return delta;
}

// For gaussian heads: maps (d/dmean, d/dlog_std) of a loss onto the raw
// output gradient, masking log_std coordinates pinned at the clamp bounds.
inline Vec gaussian_head_grad(const MlpParams& p, const Vec& raw,
                              std::span<const double> d_mean,
                              std::span<const double> d_log_std) {
  const int m = p.gaussian_dim();
  Vec grad(2 * m, 0.0);
  for (int i = 0; i < m; ++i) grad[i] = d_mean[i];
  for (int i = 0; i < m; ++i) {
    const double z = raw[m + i];
    grad[m + i] = (z > p.log_std_min && z < p.log_std_max) ? d_log_std[i] : 0.0;
  }
  return grad;
}

// Loss over one sample's raw output: fills grad_out, returns the loss value.
using SampleLoss = std::function<double(size_t, std::span<const double>, std::span<double>)>;

// Exact reverse-mode gradients of the batch-mean loss.
inline MlpGrads mlp_gradients(const MlpParams& p, const std::vector<Vec>& inputs,
                              const SampleLoss& loss, double* mean_loss = nullptr) {
  MlpGrads g = make_grads_like(p);
  MlpCache cache;
  Vec grad_out(p.out_dim());
  double total = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    Vec out = mlp_forward(p, inputs[i], &cache);
    std::fill(grad_out.begin(), grad_out.end(), 0.0);
    const double li = loss(i, out, grad_out);
    if (!std::isfinite(li))
      throw NumericError("non-finite loss at batch index " + std::to_string(i));
    total += li;
    mlp_backward(p, cache, grad_out, g);
  }
  const double inv = inputs.empty() ? 0.0 : 1.0 / static_cast<double>(inputs.size());
  for (auto& l : g.layers) {
    for (double& v : l.w.a) v *= inv;
    for (double& v : l.b) v *= inv;
  }
  if (mean_loss) *mean_loss = total * inv;
  return g;
}

// ---------------------------------------------------------------------------
// Adaptive-moment optimizer over an arbitrary flat parameter block.

struct AdamState {
  Vec m;  // first moments
  Vec v;  // second moments
  int64_t t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamState adam_init(size_t n, double lr) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.lr = lr;
  return s;
}

inline void adam_step_flat(AdamState& s, std::span<double> params, std::span<const double> grads) {
  if (params.size() != s.m.size() || grads.size() != s.m.size())
    throw ConfigError("adam state/parameter shape mismatch");
  s.t += 1;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (size_t i = 0; i < params.size(); ++i) {
    const double gi = grads[i];
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * gi;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * gi * gi;
    const double mhat = s.m[i] / bc1;
    const double vhat = s.v[i] / bc2;
    params[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

// Visits every parameter of an MLP in a fixed order (w0, b0, w1, b1, ...).
template <typename F>
inline void for_each_param(MlpParams& p, F&& f) {
  for (auto& l : p.layers) {
    for (double& v : l.w.a) f(v);
    for (double& v : l.b) f(v);
  }
}

template <typename F>
inline void for_each_param(const MlpParams& p, F&& f) {
  for (const auto& l : p.layers) {
    for (const double& v : l.w.a) f(v);
    for (const double& v : l.b) f(v);
  }
}

inline Vec flatten(const MlpParams& p) {
  Vec out;
  out.reserve(p.param_count());
  for_each_param(p, [&](const double& v) { out.push_back(v); });
  return out;
}

inline void unflatten(MlpParams& p, std::span<const double> flat) {
  size_t i = 0;
  for_each_param(p, [&](double& v) { v = flat[i++]; });
}

inline AdamState adam_init(const MlpParams& p, double lr) { return adam_init(p.param_count(), lr); }

// One bias-corrected update of the network parameters.
inline void adam_step(AdamState& s, MlpParams& p, const MlpGrads& g) {
  Vec pf = flatten(p);
  Vec gf = flatten(g);
  adam_step_flat(s, pf, gf);
  unflatten(p, pf);
}

inline bool params_equal(const MlpParams& a, const MlpParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (size_t i = 0; i < a.layers.size(); ++i)
    if (a.layers[i].w.a != b.layers[i].w.a || a.layers[i].b != b.layers[i].b) return false;
  return true;
}

}  // namespace mabe
