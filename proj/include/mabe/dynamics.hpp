#pragma once

// Maximum-likelihood ensemble of Gaussian next-state and reward models.
// Each member predicts a Gaussian over (state delta, reward) in normalized
// target space, with a per-member learned state-independent log-std vector.
// Members train on bootstrap resamples with early stopping on a shared
// holdout; the k members with lowest holdout NLL form the elite set used
// for rollouts and uncertainty estimation.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mabe/checkpoint.hpp"
#include "mabe/core.hpp"
#include "mabe/dataset.hpp"
#include "mabe/gaussian.hpp"
#include "mabe/mlp.hpp"

namespace mabe {

struct Normalizer {
  Vec mean, std;

  Vec normalize(std::span<const double> x) const {
    Vec y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean[i]) / std[i];
    return y;
  }
};

struct DynamicsCfg {
  int members = 5;
  int elites = 3;
  std::vector<int> hidden = {64, 64};
  double lr = 1e-3;
  int batch = 256;
  int max_epochs = 200;
  int patience = 8;
  double holdout_fraction = 0.1;
  double bound_expand = 5.0;  // rollout truncation box, in units of data span
  double xi = 1.0;            // default uncertainty penalty coefficient
};

struct DynamicsMember {
  MlpParams net;  // (obs ++ act) -> mean of (delta obs, reward), linear head
  Vec log_std;    // learned, one entry per output dimension
  double holdout_nll = 0.0;
};

struct DynamicsEnsemble {
  int obs_dim = 0;
  int act_dim = 0;
  std::vector<DynamicsMember> members;
  std::vector<int> elites;  // indices into members, ascending holdout NLL
  Normalizer in_norm;       // over (obs ++ act)
  Vec target_mean, target_std;  // over (delta obs, reward)
  Vec obs_lo, obs_hi;           // rollout truncation bounds
  double xi = 1.0;

  int out_dim() const { return obs_dim + 1; }

  bool is_elite(int member) const {
    return std::find(elites.begin(), elites.end(), member) != elites.end();
  }
};

// Lowest-NLL selection; ties broken by member index.
inline std::vector<int> select_elites(const Vec& holdout_nlls, int k) {
  std::vector<int> idx(holdout_nlls.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return holdout_nlls[a] < holdout_nlls[b]; });
  idx.resize(k);
  return idx;
}

namespace detail_dyn {

struct Sample {
  Vec x;  // normalized input
  Vec t;  // normalized target
};

inline double member_nll(const DynamicsMember& m, const std::vector<Sample>& samples,
                         std::span<const size_t> idx) {
  double total = 0.0;
  for (size_t i : idx) {
    Vec mean = mlp_forward(m.net, samples[i].x);
    for (size_t j = 0; j < mean.size(); ++j) {
      const double z = (samples[i].t[j] - mean[j]) * std::exp(-m.log_std[j]);
      total += m.log_std[j] + 0.5 * kLog2Pi + 0.5 * z * z;
    }
  }
  return total / static_cast<double>(idx.size());
}

}  // namespace detail_dyn

inline DynamicsEnsemble train_dynamics(const Dataset& d, const DynamicsCfg& cfg, uint64_t seed) {
  if (d.transitions.empty()) throw ConfigError("train_dynamics on empty dataset");
  if (cfg.members < cfg.elites) throw ConfigError("dynamics ensemble needs members >= elites");

  const DatasetStats st = dataset_stats(d);
  DynamicsEnsemble e;
  e.obs_dim = d.obs_dim;
  e.act_dim = d.act_dim;
  e.xi = cfg.xi;
  e.in_norm.mean = st.obs_mean;
  e.in_norm.mean.insert(e.in_norm.mean.end(), st.act_mean.begin(), st.act_mean.end());
  e.in_norm.std = st.obs_std;
  e.in_norm.std.insert(e.in_norm.std.end(), st.act_std.begin(), st.act_std.end());

  // rollout truncation box
  e.obs_lo.resize(d.obs_dim);
  e.obs_hi.resize(d.obs_dim);
  for (int i = 0; i < d.obs_dim; ++i) {
    const double span = std::max(st.obs_max[i] - st.obs_min[i], 0.1);
    e.obs_lo[i] = st.obs_min[i] - cfg.bound_expand * span - 1.0;
    e.obs_hi[i] = st.obs_max[i] + cfg.bound_expand * span + 1.0;
  }

  // normalized regression samples
  const int od = d.obs_dim, out = d.obs_dim + 1;
  std::vector<detail_dyn::Sample> samples(d.size());
  Vec tmean(out, 0.0), tstd(out, 0.0);
  for (size_t i = 0; i < d.size(); ++i) {
    const auto& tr = d.transitions[i];
    Vec raw(out);
    for (int j = 0; j < od; ++j) raw[j] = tr.next_obs[j] - tr.obs[j];
    raw[od] = tr.reward;
    for (int j = 0; j < out; ++j) tmean[j] += raw[j];
    samples[i].t = std::move(raw);
    Vec in = tr.obs;
    in.insert(in.end(), tr.action.begin(), tr.action.end());
    samples[i].x = e.in_norm.normalize(in);
  }
  for (int j = 0; j < out; ++j) tmean[j] /= static_cast<double>(d.size());
  for (const auto& s : samples)
    for (int j = 0; j < out; ++j) {
      const double dv = s.t[j] - tmean[j];
      tstd[j] += dv * dv;
    }
  for (int j = 0; j < out; ++j) {
    tstd[j] = std::sqrt(tstd[j] / static_cast<double>(d.size()));
    if (tstd[j] == 0.0) tstd[j] = 1.0;
  }
  for (auto& s : samples)
    for (int j = 0; j < out; ++j) s.t[j] = (s.t[j] - tmean[j]) / tstd[j];
  e.target_mean = tmean;
  e.target_std = tstd;

  // shared holdout split
  Rng root(seed);
  std::vector<size_t> perm(samples.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[root.index(i)]);
  const size_t n_holdout =
      std::max<size_t>(1, static_cast<size_t>(cfg.holdout_fraction * samples.size()));
  std::vector<size_t> holdout(perm.end() - n_holdout, perm.end());
  std::vector<size_t> pool(perm.begin(), perm.end() - n_holdout);
  if (pool.empty()) pool = holdout;

  const int in_dim = d.obs_dim + d.act_dim;
  Vec best_nlls;
  for (int m = 0; m < cfg.members; ++m) {
    Rng mrng = root.derive(1000 + m);
    DynamicsMember member;
    member.net = init_mlp(in_dim, cfg.hidden, out, Head::Linear, mrng, 0.01);
    member.log_std.assign(out, -1.0);

    // bootstrap resample of the training pool
    std::vector<size_t> boot(pool.size());
    for (size_t i = 0; i < boot.size(); ++i) boot[i] = pool[mrng.index(pool.size())];

    const size_t n_params = member.net.param_count() + member.log_std.size();
    AdamState opt = adam_init(n_params, cfg.lr);

    MlpParams best_net = member.net;
    Vec best_ls = member.log_std;
    double best_nll = detail_dyn::member_nll(member, samples, holdout);
    int patience_left = cfg.patience;

    std::vector<size_t> order = boot;
    MlpCache cache;
    for (int epoch = 0; epoch < cfg.max_epochs && patience_left > 0; ++epoch) {
      for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[mrng.index(i)]);
      for (size_t pos = 0; pos < order.size(); pos += cfg.batch) {
        const size_t end = std::min(order.size(), pos + cfg.batch);
        MlpGrads g = make_grads_like(member.net);
        Vec ls_grad(out, 0.0);
        for (size_t bi = pos; bi < end; ++bi) {
          const auto& s = samples[order[bi]];
          Vec mean = mlp_forward(member.net, s.x, &cache);
          Vec gout(out);
          for (int j = 0; j < out; ++j) {
            const double inv_var = std::exp(-2.0 * member.log_std[j]);
            const double err = s.t[j] - mean[j];
            gout[j] = -err * inv_var;
            // pinned at a clamp bound: only gradients pointing inward apply
            double gls = 1.0 - err * err * inv_var;
            if ((member.log_std[j] <= kLogStdMin && gls > 0.0) ||
                (member.log_std[j] >= kLogStdMax && gls < 0.0))
              gls = 0.0;
            ls_grad[j] += gls;
          }
          mlp_backward(member.net, cache, gout, g);
        }
        const double inv = 1.0 / static_cast<double>(end - pos);
        Vec flat = flatten(member.net);
        Vec gflat = flatten(g);
        for (double& v : gflat) v *= inv;
        for (int j = 0; j < out; ++j) {
          flat.push_back(member.log_std[j]);
          gflat.push_back(ls_grad[j] * inv);
        }
        adam_step_flat(opt, flat, gflat);
        unflatten(member.net, std::span<const double>(flat.data(), member.net.param_count()));
        for (int j = 0; j < out; ++j)
          member.log_std[j] =
              clamp(flat[member.net.param_count() + j], kLogStdMin, kLogStdMax);
      }
      const double nll = detail_dyn::member_nll(member, samples, holdout);
      if (nll < best_nll - 1e-7) {
        best_nll = nll;
        best_net = member.net;
        best_ls = member.log_std;
        patience_left = cfg.patience;
      } else {
        --patience_left;
      }
    }
    member.net = std::move(best_net);
    member.log_std = std::move(best_ls);
    member.holdout_nll = best_nll;
    best_nlls.push_back(best_nll);
    e.members.push_back(std::move(member));
  }
  e.elites = select_elites(best_nlls, cfg.elites);
  return e;
}

// Next-state distribution and reward mean for one elite member.
inline std::pair<DiagGaussian, double> predict(const DynamicsEnsemble& e, int member,
                                               std::span<const double> obs,
                                               std::span<const double> action) {
  if (!e.is_elite(member))
    throw ConfigError("predict called with non-elite member " + std::to_string(member));
  const auto& m = e.members[member];
  Vec in(obs.begin(), obs.end());
  in.insert(in.end(), action.begin(), action.end());
  Vec x = e.in_norm.normalize(in);
  Vec mean = mlp_forward(m.net, x);
  const int od = e.obs_dim;
  Vec next(od), ls(od);
  for (int j = 0; j < od; ++j) {
    next[j] = obs[j] + mean[j] * e.target_std[j] + e.target_mean[j];
    ls[j] = m.log_std[j] + std::log(e.target_std[j]);
  }
  const double reward = mean[od] * e.target_std[od] + e.target_mean[od];
  // dynamics stds are derived quantities; no head clamp applies
  DiagGaussian g = make_gaussian(std::move(next), std::move(ls), -60.0, 60.0);
  return {std::move(g), reward};
}

// u(s,a) = max( largest elite predicted-std norm,
//               norm of the per-dimension spread of elite means ).
// Computed in denormalized (state delta, reward) space; spread is the
// population standard deviation across elites.
inline double uncertainty(const DynamicsEnsemble& e, std::span<const double> obs,
                          std::span<const double> action) {
  Vec in(obs.begin(), obs.end());
  in.insert(in.end(), action.begin(), action.end());
  Vec x = e.in_norm.normalize(in);
  const int out = e.out_dim();
  const size_t k = e.elites.size();
  std::vector<Vec> means(k);
  double max_std_norm = 0.0;
  for (size_t i = 0; i < k; ++i) {
    const auto& m = e.members[e.elites[i]];
    Vec mean = mlp_forward(m.net, x);
    double sn = 0.0;
    for (int j = 0; j < out; ++j) {
      mean[j] = mean[j] * e.target_std[j] + e.target_mean[j];
      const double sd = std::exp(m.log_std[j]) * e.target_std[j];
      sn += sd * sd;
    }
    max_std_norm = std::max(max_std_norm, std::sqrt(sn));
    means[i] = std::move(mean);
  }
  double disagreement = 0.0;
  for (int j = 0; j < out; ++j) {
    double mu = 0.0;
    for (const auto& m : means) mu += m[j];
    mu /= static_cast<double>(k);
    double var = 0.0;
    for (const auto& m : means) {
      const double dv = m[j] - mu;
      var += dv * dv;
    }
    disagreement += var / static_cast<double>(k);
  }
  return std::max(max_std_norm, std::sqrt(disagreement));
}

// Policy queried on observations during model rollouts; the Rng supplies
// any action-sampling noise so branches stay seed-deterministic.
using RolloutPolicy = std::function<Vec(const Vec&, Rng&)>;

struct RolloutStats {
  size_t truncated_branches = 0;
};

// h-step branches from uniformly sampled dataset states; one member drawn
// uniformly from the elites at every step.
inline std::vector<Transition> synth_rollouts(const DynamicsEnsemble& e,
                                              const RolloutPolicy& policy, const Dataset& d,
                                              int h, int n_branches, uint64_t seed,
                                              RolloutStats* stats = nullptr) {
  if (h < 1) throw ConfigError("synth_rollouts needs h >= 1");
  std::vector<Transition> out;
  if (n_branches <= 0) return out;
  Rng root(seed);
  for (int b = 0; b < n_branches; ++b) {
    Rng rng = root.derive(b);
    Vec obs = d.transitions[rng.index(d.size())].obs;
    bool truncated = false;
    for (int t = 0; t < h; ++t) {
      Vec a = policy(obs, rng);
      const int member = e.elites[rng.index(e.elites.size())];
      auto [g, reward] = predict(e, member, obs, a);
      Vec noise = draw_standard_normal(rng, e.obs_dim);
      Vec next = gaussian_sample(g, noise);
      bool ok = all_finite(next) && std::isfinite(reward);
      if (ok)
        for (int j = 0; j < e.obs_dim; ++j)
          if (next[j] < e.obs_lo[j] || next[j] > e.obs_hi[j]) ok = false;
      if (!ok) {
        truncated = true;
        break;
      }
      Transition tr;
      tr.obs = obs;
      tr.action = std::move(a);
      tr.reward = reward;
      tr.next_obs = next;
      tr.done = false;
      tr.traj_end = (t + 1 == h);
      out.push_back(std::move(tr));
      obs = std::move(next);
    }
    if (truncated) {
      if (stats) ++stats->truncated_branches;
      if (!out.empty()) out.back().traj_end = true;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpointing.

inline Checkpoint pack_dynamics(const DynamicsEnsemble& e) {
  Checkpoint ck;
  ck.kind = "dynamics_ensemble";
  ck.meta["obs_dim"] = std::to_string(e.obs_dim);
  ck.meta["act_dim"] = std::to_string(e.act_dim);
  ck.meta["members"] = std::to_string(e.members.size());
  ck.meta["xi"] = std::to_string(e.xi);
  std::string el;
  for (size_t i = 0; i < e.elites.size(); ++i) el += (i ? "," : "") + std::to_string(e.elites[i]);
  ck.meta["elites"] = el;
  for (size_t m = 0; m < e.members.size(); ++m) {
    const std::string pre = "member" + std::to_string(m);
    pack_mlp(ck, pre + ".net", e.members[m].net);
    ck.put(pre + ".log_std", e.members[m].log_std);
    ck.meta[pre + ".holdout_nll"] = std::to_string(e.members[m].holdout_nll);
  }
  ck.put("in_norm.mean", e.in_norm.mean);
  ck.put("in_norm.std", e.in_norm.std);
  ck.put("target_mean", e.target_mean);
  ck.put("target_std", e.target_std);
  ck.put("obs_lo", e.obs_lo);
  ck.put("obs_hi", e.obs_hi);
  return ck;
}

inline DynamicsEnsemble unpack_dynamics(const Checkpoint& ck) {
  if (ck.kind != "dynamics_ensemble") throw IoError("checkpoint is not a dynamics ensemble");
  DynamicsEnsemble e;
  e.obs_dim = std::stoi(ck.meta_or("obs_dim", "0"));
  e.act_dim = std::stoi(ck.meta_or("act_dim", "0"));
  e.xi = std::stod(ck.meta_or("xi", "1"));
  const int n = std::stoi(ck.meta_or("members", "0"));
  for (int m = 0; m < n; ++m) {
    const std::string pre = "member" + std::to_string(m);
    DynamicsMember mem;
    mem.net = unpack_mlp(ck, pre + ".net");
    mem.log_std = ck.get(pre + ".log_std");
    mem.holdout_nll = std::stod(ck.meta_or(pre + ".holdout_nll", "0"));
    e.members.push_back(std::move(mem));
  }
  std::string el = ck.meta_or("elites", "");
  size_t pos = 0;
  while (pos < el.size()) {
    size_t comma = el.find(',', pos);
    if (comma == std::string::npos) comma = el.size();
    e.elites.push_back(std::stoi(el.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  e.in_norm.mean = ck.get("in_norm.mean");
  e.in_norm.std = ck.get("in_norm.std");
  e.target_mean = ck.get("target_mean");
  e.target_std = ck.get("target_std");
  e.obs_lo = ck.get("obs_lo");
  e.obs_hi = ck.get("obs_hi");
  return e;
}

}  // namespace mabe
