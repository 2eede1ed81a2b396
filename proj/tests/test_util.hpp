#pragma once

// Shared test oracles. These deliberately re-derive results through
// independent code paths (naive loops, finite differences, Monte Carlo) so
// they can catch errors in the library implementations they check.

#include <cmath>
#include <vector>

#include "mabe/core.hpp"
#include "mabe/mlp.hpp"

namespace testutil {

using mabe::MlpParams;
using mabe::Vec;

// Independent forward pass: explicit index loops, no shared helpers.
inline Vec naive_forward(const MlpParams& p, const Vec& input) {
  Vec x = input;
  for (size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    Vec y(layer.w.rows, 0.0);
    for (int r = 0; r < layer.w.rows; ++r) {
      double s = layer.b[r];
      for (int c = 0; c < layer.w.cols; ++c) s += layer.w.at(r, c) * x[c];
      y[r] = s;
    }
    if (l + 1 < p.layers.size())
      for (double& v : y)
        if (v < 0.0) v = 0.0;
    x = y;
  }
  return x;
}

inline double batch_mean_loss(const MlpParams& p, const std::vector<Vec>& inputs,
                              const mabe::SampleLoss& loss) {
  double total = 0.0;
  Vec scratch(p.out_dim());
  for (size_t i = 0; i < inputs.size(); ++i) {
    Vec out = mabe::mlp_forward(p, inputs[i]);
    std::fill(scratch.begin(), scratch.end(), 0.0);
    total += loss(i, out, scratch);
  }
  return total / static_cast<double>(inputs.size());
}

// Central finite differences of the batch-mean loss over every parameter.
inline mabe::MlpGrads fd_gradients(const MlpParams& params, const std::vector<Vec>& inputs,
                                   const mabe::SampleLoss& loss, double step = 1e-5) {
  MlpParams p = params;
  mabe::MlpGrads g = mabe::make_grads_like(p);
  Vec flat = mabe::flatten(p);
  Vec gflat(flat.size());
  for (size_t i = 0; i < flat.size(); ++i) {
    const double saved = flat[i];
    flat[i] = saved + step;
    mabe::unflatten(p, flat);
    const double lp = batch_mean_loss(p, inputs, loss);
    flat[i] = saved - step;
    mabe::unflatten(p, flat);
    const double lm = batch_mean_loss(p, inputs, loss);
    flat[i] = saved;
    gflat[i] = (lp - lm) / (2.0 * step);
  }
  mabe::unflatten(p, flat);
  mabe::MlpGrads out = mabe::make_grads_like(p);
  mabe::unflatten(out, gflat);
  return out;
}

// Largest relative disagreement between two gradient blocks.
inline double max_rel_grad_error(const mabe::MlpGrads& a, const mabe::MlpGrads& b,
                                 double abs_floor = 1e-6) {
  Vec fa = mabe::flatten(a), fb = mabe::flatten(b);
  double worst = 0.0;
  for (size_t i = 0; i < fa.size(); ++i) {
    const double denom = std::max({std::abs(fa[i]), std::abs(fb[i]), abs_floor});
    worst = std::max(worst, std::abs(fa[i] - fb[i]) / denom);
  }
  return worst;
}

}  // namespace testutil
