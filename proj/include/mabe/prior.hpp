#pragma once

// Behavioral priors: fit a Q-function to the offline data by TD-error
// minimization, turn Q-values into per-transition advantage weights, and
// train Gaussian priors by weighted maximum likelihood. Uniform weights
// reproduce the plain behavior-cloning prior; advantage or trajectory-return
// weights bias the prior toward high-value behavior.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mabe/checkpoint.hpp"
#include "mabe/core.hpp"
#include "mabe/dataset.hpp"
#include "mabe/dynamics.hpp"  // Normalizer
#include "mabe/gaussian.hpp"
#include "mabe/mlp.hpp"

namespace mabe {

// ---------------------------------------------------------------------------
// Dataset Q-function (SARSA-on-data).

struct QCfg {
  std::vector<int> hidden = {64, 64};
  double lr = 1e-3;
  int batch = 256;
  int max_epochs = 200;
  int patience = 10;
  double polyak = 5e-3;
  double plateau_tol = 1e-5;
};

struct DatasetQ {
  MlpParams net;     // (obs ++ action) -> scalar
  MlpParams target;
  Normalizer obs_norm;
  double gamma = 0.99;
  Vec train_loss_log;  // per-epoch mean TD loss
};

inline double q_value(const DatasetQ& q, std::span<const double> obs,
                      std::span<const double> action) {
  Vec x = q.obs_norm.normalize(obs);
  x.insert(x.end(), action.begin(), action.end());
  return mlp_forward(q.net, x)[0];
}

namespace detail_q {
inline double q_forward(const MlpParams& net, const Normalizer& norm,
                        std::span<const double> obs, std::span<const double> action) {
  Vec x = norm.normalize(obs);
  x.insert(x.end(), action.begin(), action.end());
  return mlp_forward(net, x)[0];
}
}  // namespace detail_q

// Minimizes the mean squared TD error with the dataset's own next action as
// the bootstrap action. Trajectory-boundary transitions without a terminal
// flag (timeouts) have no in-trajectory successor action and are excluded
// from the loss. Stops when the training loss plateaus.
inline DatasetQ fit_q_dataset(const Dataset& d, double gamma, const QCfg& cfg, uint64_t seed) {
  if (gamma < 0.0 || gamma >= 1.0) throw ConfigError("fit_q_dataset needs gamma in [0,1)");
  if (d.transitions.empty()) throw ConfigError("fit_q_dataset on empty dataset");
  const DatasetStats st = dataset_stats(d);
  DatasetQ q;
  q.gamma = gamma;
  q.obs_norm.mean = st.obs_mean;
  q.obs_norm.std = st.obs_std;
  Rng rng(seed);
  q.net = init_mlp(d.obs_dim + d.act_dim, cfg.hidden, 1, Head::Linear, rng, 0.01);
  q.target = q.net;

  // usable transitions and their successor action index
  std::vector<size_t> train_idx;
  std::vector<size_t> next_idx(d.size(), 0);
  for (size_t i = 0; i < d.size(); ++i) {
    const auto& t = d.transitions[i];
    if (t.done) {
      train_idx.push_back(i);
    } else if (!t.traj_end) {
      next_idx[i] = i + 1;
      train_idx.push_back(i);
    }
  }
  if (train_idx.empty()) throw ConfigError("dataset has no transitions usable for TD targets");

  AdamState opt = adam_init(q.net, cfg.lr);
  MlpCache cache;
  double best_loss = 1e300;
  int patience_left = cfg.patience;
  std::vector<size_t> order = train_idx;

  for (int epoch = 0; epoch < cfg.max_epochs && patience_left > 0; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_loss = 0.0;
    size_t epoch_count = 0;
    for (size_t pos = 0; pos < order.size(); pos += cfg.batch) {
      const size_t end = std::min(order.size(), pos + cfg.batch);
      MlpGrads g = make_grads_like(q.net);
      for (size_t bi = pos; bi < end; ++bi) {
        const auto& t = d.transitions[order[bi]];
        double y = t.reward;
        if (!t.done) {
          const auto& nt = d.transitions[next_idx[order[bi]]];
          y += gamma * detail_q::q_forward(q.target, q.obs_norm, t.next_obs, nt.action);
        }
        Vec x = q.obs_norm.normalize(t.obs);
        x.insert(x.end(), t.action.begin(), t.action.end());
        Vec out = mlp_forward(q.net, x, &cache);
        const double err = out[0] - y;
        epoch_loss += 0.5 * err * err;
        Vec gout{err};
        mlp_backward(q.net, cache, gout, g);
      }
      const double inv = 1.0 / static_cast<double>(end - pos);
      for (auto& l : g.layers) {
        for (double& v : l.w.a) v *= inv;
        for (double& v : l.b) v *= inv;
      }
      adam_step(opt, q.net, g);
      // polyak target toward online net
      Vec on = flatten(q.net), tg = flatten(q.target);
      for (size_t i = 0; i < on.size(); ++i) tg[i] = cfg.polyak * on[i] + (1.0 - cfg.polyak) * tg[i];
      unflatten(q.target, tg);
      epoch_count += end - pos;
    }
    epoch_loss /= static_cast<double>(epoch_count);
    q.train_loss_log.push_back(epoch_loss);
    if (epoch_loss < best_loss - cfg.plateau_tol * std::max(1.0, std::abs(best_loss))) {
      best_loss = epoch_loss;
      patience_left = cfg.patience;
    } else {
      --patience_left;
    }
  }
  return q;
}

// ---------------------------------------------------------------------------
// Weighting functions.

enum class QNorm { RMax, MaxQ };

// w_i = exp(omega_i / eta) with omega_i = Q(s_i,a_i) * (1-gamma) / r_max.
// QNorm::MaxQ switches to omega_i = Q_i / max_j Q_j.
inline Vec advantage_weights(const DatasetQ& q, const Dataset& d, double gamma, double r_max,
                             double eta, QNorm norm_mode = QNorm::RMax) {
  if (eta <= 0.0) throw ConfigError("advantage_weights needs eta > 0");
  Vec qs(d.size());
  for (size_t i = 0; i < d.size(); ++i)
    qs[i] = q_value(q, d.transitions[i].obs, d.transitions[i].action);

  Vec w(d.size());
  if (norm_mode == QNorm::RMax) {
    double norm = r_max;
    if (norm <= 0.0) {
      norm = 0.0;
      for (const auto& t : d.transitions) norm = std::max(norm, std::abs(t.reward));
      if (norm == 0.0) norm = 1.0;
      log_warn("advantage_weights: r_max <= 0, normalizing by max |reward| = " +
               std::to_string(norm));
    }
    for (size_t i = 0; i < d.size(); ++i) w[i] = std::exp(qs[i] * (1.0 - gamma) / norm / eta);
  } else {
    double qmax = *std::max_element(qs.begin(), qs.end());
    if (qmax <= 0.0) {
      qmax = 0.0;
      for (double v : qs) qmax = std::max(qmax, std::abs(v));
      if (qmax == 0.0) qmax = 1.0;
      log_warn("advantage_weights: max Q <= 0, normalizing by max |Q|");
    }
    for (size_t i = 0; i < d.size(); ++i) w[i] = std::exp(qs[i] / qmax / eta);
  }
  for (double v : w)
    if (!std::isfinite(v)) throw NumericError("advantage weight overflow; raise eta");
  return w;
}

// Every transition of a trajectory shares exp(R_hat / eta), where R_hat is
// the trajectory return normalized by the best return in the dataset.
inline Vec return_weights(const Dataset& d, double eta) {
  if (eta <= 0.0) throw ConfigError("return_weights needs eta > 0");
  const DatasetStats st = dataset_stats(d);
  double norm = *std::max_element(st.traj_returns.begin(), st.traj_returns.end());
  if (norm <= 0.0) {
    norm = 0.0;
    for (double r : st.traj_returns) norm = std::max(norm, std::abs(r));
    if (norm == 0.0) norm = 1.0;
    log_warn("return_weights: max trajectory return <= 0, normalizing by max |return|");
  }
  Vec w(d.size());
  for (size_t t = 0; t < d.num_trajectories(); ++t) {
    const double wt = std::exp(st.traj_returns[t] / norm / eta);
    const size_t beg = d.traj_offsets[t];
    const size_t end = beg + d.traj_length(t);
    for (size_t i = beg; i < end; ++i) w[i] = wt;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Prior training: weighted Gaussian maximum likelihood with a 90-10
// train-validation split and early stopping on validation weighted NLL.

struct PriorCfg {
  std::vector<int> hidden = {64, 64};
  double lr = 1e-3;
  int batch = 256;
  int max_epochs = 300;
  int patience = 12;
  double val_fraction = 0.1;
};

struct PriorParams {
  MlpParams net;  // obs -> gaussian head over actions
  Normalizer obs_norm;
  double eta = 1.0;
  std::string mode = "uniform";  // uniform | q-advantage | trajectory-return
  double val_nll = 0.0;          // best validation weighted NLL
  double init_val_nll = 0.0;     // validation weighted NLL at initialization
};

inline DiagGaussian prior_distribution(const PriorParams& p, std::span<const double> obs) {
  return mlp_forward_gaussian(p.net, p.obs_norm.normalize(obs));
}

namespace detail_prior {
inline double weighted_val_nll(const MlpParams& net, const Normalizer& norm, const Dataset& d,
                               const Vec& weights, std::span<const size_t> idx) {
  double total = 0.0;
  for (size_t i : idx) {
    const auto& t = d.transitions[i];
    DiagGaussian g = mlp_forward_gaussian(net, norm.normalize(t.obs));
    total += weights[i] * -gaussian_log_prob(g, t.action);
  }
  return total / static_cast<double>(idx.size());
}
}  // namespace detail_prior

inline PriorParams train_prior(const Dataset& d, const Vec& weights, const PriorCfg& cfg,
                               uint64_t seed) {
  if (weights.size() != d.size())
    throw ConfigError("train_prior weights length " + std::to_string(weights.size()) +
                      " != transition count " + std::to_string(d.size()));
  for (double w : weights)
    if (!(w > 0.0)) throw ConfigError("train_prior weights must be positive");

  const DatasetStats st = dataset_stats(d);
  PriorParams p;
  p.obs_norm.mean = st.obs_mean;
  p.obs_norm.std = st.obs_std;
  Rng rng(seed);
  p.net = init_mlp(d.obs_dim, cfg.hidden, 2 * d.act_dim, Head::Gaussian, rng, 0.01);

  std::vector<size_t> perm(d.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  const size_t n_val = std::max<size_t>(1, static_cast<size_t>(cfg.val_fraction * d.size()));
  std::vector<size_t> val(perm.end() - n_val, perm.end());
  std::vector<size_t> train(perm.begin(), perm.end() - n_val);
  if (train.empty()) train = val;

  AdamState opt = adam_init(p.net, cfg.lr);
  MlpParams best = p.net;
  double best_val = detail_prior::weighted_val_nll(p.net, p.obs_norm, d, weights, val);
  p.init_val_nll = best_val;
  int patience_left = cfg.patience;

  MlpCache cache;
  const int ad = d.act_dim;
  Vec d_mean(ad), d_ls(ad);
  for (int epoch = 0; epoch < cfg.max_epochs && patience_left > 0; ++epoch) {
    for (size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[rng.index(i)]);
    for (size_t pos = 0; pos < train.size(); pos += cfg.batch) {
      const size_t end = std::min(train.size(), pos + cfg.batch);
      MlpGrads g = make_grads_like(p.net);
      for (size_t bi = pos; bi < end; ++bi) {
        const auto& t = d.transitions[train[bi]];
        Vec raw = mlp_forward(p.net, p.obs_norm.normalize(t.obs), &cache);
        DiagGaussian dist = raw_to_gaussian(p.net, raw);
        const double w = weights[train[bi]];
        for (int j = 0; j < ad; ++j) {
          const double s = dist.std(j);
          const double z = (t.action[j] - dist.mean[j]) / s;
          d_mean[j] = w * -z / s;          // d(w * nll)/d mean
          d_ls[j] = w * (1.0 - z * z);     // d(w * nll)/d log_std
        }
        Vec gout = gaussian_head_grad(p.net, raw, d_mean, d_ls);
        mlp_backward(p.net, cache, gout, g);
      }
      const double inv = 1.0 / static_cast<double>(end - pos);
      for (auto& l : g.layers) {
        for (double& v : l.w.a) v *= inv;
        for (double& v : l.b) v *= inv;
      }
      adam_step(opt, p.net, g);
    }
    const double val_nll = detail_prior::weighted_val_nll(p.net, p.obs_norm, d, weights, val);
    if (val_nll < best_val - 1e-9) {
      best_val = val_nll;
      best = p.net;
      patience_left = cfg.patience;
    } else {
      --patience_left;
    }
  }
  p.net = std::move(best);
  p.val_nll = best_val;
  return p;
}

// Mean log-likelihood of dataset actions under the prior, over a subset.
inline double prior_log_likelihood(const PriorParams& p, const Dataset& d,
                                   std::span<const size_t> idx) {
  double total = 0.0;
  for (size_t i : idx) {
    const auto& t = d.transitions[i];
    total += gaussian_log_prob(prior_distribution(p, t.obs), t.action);
  }
  return total / static_cast<double>(idx.size());
}

// ---------------------------------------------------------------------------
// Checkpointing.

inline Checkpoint pack_prior(const PriorParams& p) {
  Checkpoint ck;
  ck.kind = "prior";
  pack_mlp(ck, "net", p.net);
  ck.put("obs_norm.mean", p.obs_norm.mean);
  ck.put("obs_norm.std", p.obs_norm.std);
  ck.meta["eta"] = std::to_string(p.eta);
  ck.meta["mode"] = p.mode;
  ck.meta["val_nll"] = std::to_string(p.val_nll);
  ck.meta["init_val_nll"] = std::to_string(p.init_val_nll);
  return ck;
}

inline PriorParams unpack_prior(const Checkpoint& ck) {
  if (ck.kind != "prior") throw IoError("checkpoint is not a prior");
  PriorParams p;
  p.net = unpack_mlp(ck, "net");
  p.obs_norm.mean = ck.get("obs_norm.mean");
  p.obs_norm.std = ck.get("obs_norm.std");
  p.eta = std::stod(ck.meta_or("eta", "1"));
  p.mode = ck.meta_or("mode", "uniform");
  p.val_nll = std::stod(ck.meta_or("val_nll", "0"));
  p.init_val_nll = std::stod(ck.meta_or("init_val_nll", "0"));
  return p;
}

inline Checkpoint pack_dataset_q(const DatasetQ& q) {
  Checkpoint ck;
  ck.kind = "dataset_q";
  pack_mlp(ck, "net", q.net);
  pack_mlp(ck, "target", q.target);
  ck.put("obs_norm.mean", q.obs_norm.mean);
  ck.put("obs_norm.std", q.obs_norm.std);
  ck.meta["gamma"] = std::to_string(q.gamma);
  return ck;
}

inline DatasetQ unpack_dataset_q(const Checkpoint& ck) {
  if (ck.kind != "dataset_q") throw IoError("checkpoint is not a dataset Q-function");
  DatasetQ q;
  q.net = unpack_mlp(ck, "net");
  q.target = unpack_mlp(ck, "target");
  q.obs_norm.mean = ck.get("obs_norm.mean");
  q.obs_norm.std = ck.get("obs_norm.std");
  q.gamma = std::stod(ck.meta_or("gamma", "0.99"));
  return q;
}

}  // namespace mabe
