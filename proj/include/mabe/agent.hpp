#pragma once

// Behavior-regularized actor-critic trained on model-augmented data.
// Per epoch: generate synthetic branch rollouts (optionally with an
// uncertainty reward penalty), then run gradient steps of
//   critic targets:  Q_bar = r + gamma (1-done) [min Q_target(s', a') - beta KL(pi || prior)]
//   policy ascent on E[min Q(s, a_pi) - beta KL(pi || prior)]
//   dual ascent:     beta <- max(0, beta + lr_beta (KL - delta))
//   polyak target updates.
// The prior is a frozen regularizer; only theta, phi, and beta move.

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mabe/checkpoint.hpp"
#include "mabe/core.hpp"
#include "mabe/dataset.hpp"
#include "mabe/dynamics.hpp"
#include "mabe/gaussian.hpp"
#include "mabe/mlp.hpp"
#include "mabe/prior.hpp"

namespace mabe {

struct GaussianPolicy {
  MlpParams net;  // obs -> gaussian head over actions
  Normalizer obs_norm;
  double action_lo = -1.0;
  double action_hi = 1.0;

  DiagGaussian dist(std::span<const double> obs) const {
    return mlp_forward_gaussian(net, obs_norm.normalize(obs));
  }

  Vec act_mean(std::span<const double> obs) const {
    DiagGaussian g = dist(obs);
    Vec a = g.mean;
    for (double& v : a) v = clamp(v, action_lo, action_hi);
    return a;
  }

  Vec act_sample(std::span<const double> obs, Rng& rng) const {
    DiagGaussian g = dist(obs);
    Vec noise = draw_standard_normal(rng, g.dim());
    Vec a = gaussian_sample(g, noise);
    for (double& v : a) v = clamp(v, action_lo, action_hi);
    return a;
  }
};

inline GaussianPolicy policy_from_prior(const PriorParams& prior, double lo, double hi) {
  return GaussianPolicy{prior.net, prior.obs_norm, lo, hi};
}

struct AgentCfg {
  int epochs = 60;        // N
  int branches = 400;     // K synthetic branches per epoch
  int rollout_h = 5;      // h
  int grad_steps = 150;   // G gradient steps per epoch
  int batch = 256;
  double real_fraction = 0.05;
  double gamma = 0.99;
  double delta = 0.5;   // target divergence
  double xi = 1.0;      // uncertainty penalty coefficient; 0 disables
  double beta0 = 1.0;
  double lr_pi = 3e-4;
  double lr_q = 3e-4;
  double lr_beta = 1e-2;
  double polyak = 5e-3;
  bool twin_q = true;
  bool no_prior = false;  // drop KL terms, freeze beta at 0 (uncertainty-only ablation)
  bool no_rl = false;     // return the prior itself, zero gradient steps
  double entropy_coef = 0.0;
  std::vector<int> policy_hidden = {64, 64};
  std::vector<int> critic_hidden = {64, 64};
  double action_lo = -1.0;
  double action_hi = 1.0;
  size_t buffer_capacity = 0;  // 0 -> 100 |D|
  int eval_tail_epochs = 10;   // probe evaluation over the final epochs
  int eval_every = 0;          // additionally probe every k epochs (0 = off)
};

struct AgentState {
  GaussianPolicy policy;
  MlpParams q1, q2;
  MlpParams q1_target, q2_target;
  Normalizer obs_norm;         // critic input normalization (obs part)
  const PriorParams* prior = nullptr;  // frozen; null only with no_prior
  double beta = 1.0;
  AgentCfg cfg;
  AdamState opt_pi, opt_q1, opt_q2;
};

struct EpochMetrics {
  int epoch = 0;
  double critic_loss = 0.0;
  double policy_obj = 0.0;
  double mean_kl = 0.0;
  double beta = 0.0;
  size_t buffer_size = 0;
  std::optional<double> eval_return;
  double wall_clock_s = 0.0;
};

struct TrainMetrics {
  std::vector<EpochMetrics> epochs;
};

inline double penalized_reward(double reward, double u, double xi) { return reward - xi * u; }

// beta' = max(0, beta + lr (measured_kl - delta)): dual ascent on the
// divergence constraint.
inline double update_beta(double beta, double measured_kl, double delta, double lr_beta) {
  return std::max(0.0, beta + lr_beta * (measured_kl - delta));
}

inline void polyak_update(MlpParams& target, const MlpParams& online, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("polyak lambda must lie in [0,1]");
  for (size_t l = 0; l < target.layers.size(); ++l) {
    auto& tw = target.layers[l].w.a;
    const auto& ow = online.layers[l].w.a;
    for (size_t i = 0; i < tw.size(); ++i) tw[i] = lambda * ow[i] + (1.0 - lambda) * tw[i];
    auto& tb = target.layers[l].b;
    const auto& ob = online.layers[l].b;
    for (size_t i = 0; i < tb.size(); ++i) tb[i] = lambda * ob[i] + (1.0 - lambda) * tb[i];
  }
}

namespace detail_agent {

inline Vec critic_input(const AgentState& ag, std::span<const double> obs,
                        std::span<const double> action) {
  Vec x = ag.obs_norm.normalize(obs);
  x.insert(x.end(), action.begin(), action.end());
  return x;
}

inline double critic_value(const MlpParams& net, const AgentState& ag,
                           std::span<const double> obs, std::span<const double> action) {
  return mlp_forward(net, critic_input(ag, obs, action))[0];
}

}  // namespace detail_agent

// Per-transition targets; a' is sampled from the current policy, the KL is
// closed form, and nothing here receives gradients.
inline Vec critic_target(const AgentState& ag, const std::vector<Transition>& batch, Rng& rng) {
  if (batch.empty()) throw ConfigError("critic_target on empty batch");
  Vec targets(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    const auto& t = batch[i];
    double y = t.reward;
    if (!t.done) {
      DiagGaussian pi = ag.policy.dist(t.next_obs);
      Vec noise = draw_standard_normal(rng, pi.dim());
      Vec a = gaussian_sample(pi, noise);
      for (double& v : a) v = clamp(v, ag.cfg.action_lo, ag.cfg.action_hi);
      double qv = detail_agent::critic_value(ag.q1_target, ag, t.next_obs, a);
      if (ag.cfg.twin_q)
        qv = std::min(qv, detail_agent::critic_value(ag.q2_target, ag, t.next_obs, a));
      double reg = 0.0;
      if (!ag.cfg.no_prior && ag.prior)
        reg = ag.beta * gaussian_kl(pi, prior_distribution(*ag.prior, t.next_obs));
      if (ag.cfg.entropy_coef != 0.0) reg -= ag.cfg.entropy_coef * gaussian_entropy(pi);
      y += ag.cfg.gamma * (qv - reg);
    }
    targets[i] = y;
  }
  return targets;
}

// One optimizer step per critic on 1/2 (Q - Q_bar)^2 against shared targets.
// Returns the mean loss across twins.
inline double update_critic(AgentState& ag, const std::vector<Transition>& batch,
                            const Vec& targets) {
  if (targets.size() != batch.size()) throw ConfigError("critic targets misaligned with batch");
  MlpCache cache;
  double mean_loss = 0.0;
  const int n_twins = ag.cfg.twin_q ? 2 : 1;
  for (int twin = 0; twin < n_twins; ++twin) {
    MlpParams& net = twin == 0 ? ag.q1 : ag.q2;
    AdamState& opt = twin == 0 ? ag.opt_q1 : ag.opt_q2;
    MlpGrads g = make_grads_like(net);
    double loss = 0.0;
    for (size_t i = 0; i < batch.size(); ++i) {
      Vec x = detail_agent::critic_input(ag, batch[i].obs, batch[i].action);
      Vec out = mlp_forward(net, x, &cache);
      const double err = out[0] - targets[i];
      loss += 0.5 * err * err;
      Vec gout{err};
      mlp_backward(net, cache, gout, g);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& l : g.layers) {
      for (double& v : l.w.a) v *= inv;
      for (double& v : l.b) v *= inv;
    }
    adam_step(opt, net, g);
    mean_loss += loss * inv;
  }
  return mean_loss / n_twins;
}

// One ascent step on E[min Q(s, a_theta) - beta KL(pi || prior)] with
// reparameterized actions. The prior receives no gradient. Returns the mean
// objective value at the pre-update parameters.
inline double update_policy(AgentState& ag, const std::vector<Transition>& batch, Rng& rng) {
  if (batch.empty()) throw ConfigError("update_policy on empty batch");
  MlpGrads g = make_grads_like(ag.policy.net);
  MlpCache pi_cache, q_cache;
  const int ad = ag.policy.net.gaussian_dim();
  Vec d_mean(ad), d_ls(ad);
  double mean_obj = 0.0;
  for (const auto& t : batch) {
    Vec raw = mlp_forward(ag.policy.net, ag.policy.obs_norm.normalize(t.obs), &pi_cache);
    DiagGaussian pi = raw_to_gaussian(ag.policy.net, raw);
    Vec noise = draw_standard_normal(rng, ad);
    Vec a = gaussian_sample(pi, noise);
    Vec a_clip = a;
    std::vector<bool> inside(ad);
    for (int j = 0; j < ad; ++j) {
      a_clip[j] = clamp(a[j], ag.cfg.action_lo, ag.cfg.action_hi);
      inside[j] = a[j] > ag.cfg.action_lo && a[j] < ag.cfg.action_hi;
    }

    // min-twin critic value and its action gradient (subgradient through min)
    Vec x1 = detail_agent::critic_input(ag, t.obs, a_clip);
    double q1v = mlp_forward(ag.q1, x1, &q_cache)[0];
    bool use_q1 = true;
    double qv = q1v;
    if (ag.cfg.twin_q) {
      const double q2v = detail_agent::critic_value(ag.q2, ag, t.obs, a_clip);
      if (q2v < q1v) {
        use_q1 = false;
        qv = q2v;
        mlp_forward(ag.q2, x1, &q_cache);
      }
    }
    MlpGrads scratch = make_grads_like(use_q1 ? ag.q1 : ag.q2);
    Vec gin{1.0};
    Vec dx = mlp_backward(use_q1 ? ag.q1 : ag.q2, q_cache, gin, scratch);
    const size_t obs_w = ag.obs_norm.mean.size();

    double kl = 0.0;
    Vec kl_dm(ad, 0.0), kl_dls(ad, 0.0);
    if (!ag.cfg.no_prior && ag.prior) {
      DiagGaussian pr = prior_distribution(*ag.prior, t.obs);
      kl = gaussian_kl(pi, pr);
      gaussian_kl_grad_p(pi, pr, kl_dm, kl_dls);
    }

    const double obj = qv - ag.beta * kl + ag.cfg.entropy_coef * gaussian_entropy(pi);
    mean_obj += obj;

    // d(-obj)/d mean, d(-obj)/d log_std
    for (int j = 0; j < ad; ++j) {
      const double dq_da = inside[j] ? dx[obs_w + j] : 0.0;
      d_mean[j] = -dq_da + ag.beta * kl_dm[j];
      d_ls[j] = -dq_da * pi.std(j) * noise[j] + ag.beta * kl_dls[j] - ag.cfg.entropy_coef;
    }
    Vec gout = gaussian_head_grad(ag.policy.net, raw, d_mean, d_ls);
    mlp_backward(ag.policy.net, pi_cache, gout, g);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& l : g.layers) {
    for (double& v : l.w.a) v *= inv;
    for (double& v : l.b) v *= inv;
  }
  adam_step(ag.opt_pi, ag.policy.net, g);
  return mean_obj * inv;
}

// Batch-mean closed-form KL(pi || prior) at the current parameters.
inline double measured_kl(const AgentState& ag, const std::vector<Transition>& batch) {
  if (ag.cfg.no_prior || !ag.prior) return 0.0;
  double kl = 0.0;
  for (const auto& t : batch)
    kl += gaussian_kl(ag.policy.dist(t.obs), prior_distribution(*ag.prior, t.obs));
  return kl / static_cast<double>(batch.size());
}

using EvalProbe = std::function<double(const GaussianPolicy&)>;

// Full Dyna-style loop: alternate synthetic rollout generation and gradient
// phases. Seed-deterministic when run single-threaded.
inline std::pair<GaussianPolicy, TrainMetrics> train_mabe(const Dataset& d,
                                                          const DynamicsEnsemble& ensemble,
                                                          const PriorParams* prior,
                                                          const AgentCfg& cfg, uint64_t seed,
                                                          const EvalProbe& probe = nullptr,
                                                          const GaussianPolicy* init_policy = nullptr) {
  if (!cfg.no_prior && prior == nullptr)
    throw ConfigError("train_mabe needs a prior unless no_prior is set");

  if (cfg.no_rl) {
    if (prior == nullptr) throw ConfigError("no_rl requires a trained prior");
    GaussianPolicy p = policy_from_prior(*prior, cfg.action_lo, cfg.action_hi);
    TrainMetrics m;
    EpochMetrics row;
    row.epoch = 0;
    row.beta = 0.0;
    if (probe) row.eval_return = probe(p);
    m.epochs.push_back(row);
    return {std::move(p), std::move(m)};
  }

  const DatasetStats st = dataset_stats(d);
  Rng root(seed);

  AgentState ag;
  ag.cfg = cfg;
  ag.prior = prior;
  ag.beta = cfg.no_prior ? 0.0 : cfg.beta0;
  ag.obs_norm.mean = st.obs_mean;
  ag.obs_norm.std = st.obs_std;
  {
    Rng init = root.derive("init");
    if (init_policy) {
      ag.policy = *init_policy;  // warm start (keeps the donor's normalization)
    } else {
      ag.policy.net =
          init_mlp(d.obs_dim, cfg.policy_hidden, 2 * d.act_dim, Head::Gaussian, init, 0.01);
      ag.policy.obs_norm = ag.obs_norm;
    }
    ag.policy.action_lo = cfg.action_lo;
    ag.policy.action_hi = cfg.action_hi;
    ag.q1 = init_mlp(d.obs_dim + d.act_dim, cfg.critic_hidden, 1, Head::Linear, init, 0.01);
    ag.q2 = init_mlp(d.obs_dim + d.act_dim, cfg.critic_hidden, 1, Head::Linear, init, 0.01);
    ag.q1_target = ag.q1;
    ag.q2_target = ag.q2;
  }
  ag.opt_pi = adam_init(ag.policy.net, cfg.lr_pi);
  ag.opt_q1 = adam_init(ag.q1, cfg.lr_q);
  ag.opt_q2 = adam_init(ag.q2, cfg.lr_q);

  AugmentedBuffer buffer(d, cfg.buffer_capacity);
  Rng grad_rng = root.derive("grad");
  TrainMetrics metrics;
  const auto t_start = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // rollout phase: branches read a snapshot of the policy
    if (cfg.branches > 0 && cfg.rollout_h > 0) {
      const GaussianPolicy snapshot = ag.policy;
      RolloutPolicy rp = [&snapshot](const Vec& obs, Rng& rng) {
        return snapshot.act_sample(obs, rng);
      };
      Rng roll = root.derive("rollout").derive(epoch);
      auto synth = synth_rollouts(ensemble, rp, d, cfg.rollout_h, cfg.branches, roll.next_u64());
      for (auto& tr : synth) {
        if (cfg.xi != 0.0)
          tr.reward = penalized_reward(tr.reward, uncertainty(ensemble, tr.obs, tr.action), cfg.xi);
        buffer.push_synthetic(std::move(tr));
      }
    }

    // gradient phase
    double sum_closs = 0.0, sum_pobj = 0.0, sum_kl = 0.0;
    for (int gstep = 0; gstep < cfg.grad_steps; ++gstep) {
      auto batch = sample_batch(buffer, cfg.batch, cfg.real_fraction, grad_rng);
      Vec targets = critic_target(ag, batch, grad_rng);
      sum_closs += update_critic(ag, batch, targets);
      sum_pobj += update_policy(ag, batch, grad_rng);
      const double kl = measured_kl(ag, batch);
      sum_kl += kl;
      if (!cfg.no_prior) ag.beta = update_beta(ag.beta, kl, cfg.delta, cfg.lr_beta);
      polyak_update(ag.q1_target, ag.q1, cfg.polyak);
      if (cfg.twin_q) polyak_update(ag.q2_target, ag.q2, cfg.polyak);
    }

    EpochMetrics row;
    row.epoch = epoch;
    const double inv_g = cfg.grad_steps > 0 ? 1.0 / cfg.grad_steps : 0.0;
    row.critic_loss = sum_closs * inv_g;
    row.policy_obj = sum_pobj * inv_g;
    row.mean_kl = sum_kl * inv_g;
    row.beta = ag.beta;
    row.buffer_size = buffer.synthetic_count();
    const bool tail = epoch > cfg.epochs - cfg.eval_tail_epochs;
    const bool cadence = cfg.eval_every > 0 && epoch % cfg.eval_every == 0;
    if (probe && (tail || cadence)) row.eval_return = probe(ag.policy);
    row.wall_clock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    metrics.epochs.push_back(std::move(row));
  }
  return {std::move(ag.policy), std::move(metrics)};
}

// ---------------------------------------------------------------------------
// Policy checkpointing.

inline Checkpoint pack_policy(const GaussianPolicy& p) {
  Checkpoint ck;
  ck.kind = "policy";
  pack_mlp(ck, "net", p.net);
  ck.put("obs_norm.mean", p.obs_norm.mean);
  ck.put("obs_norm.std", p.obs_norm.std);
  ck.meta["action_lo"] = std::to_string(p.action_lo);
  ck.meta["action_hi"] = std::to_string(p.action_hi);
  return ck;
}

inline GaussianPolicy unpack_policy(const Checkpoint& ck) {
  if (ck.kind != "policy") throw IoError("checkpoint is not a policy");
  GaussianPolicy p;
  p.net = unpack_mlp(ck, "net");
  p.obs_norm.mean = ck.get("obs_norm.mean");
  p.obs_norm.std = ck.get("obs_norm.std");
  p.action_lo = std::stod(ck.meta_or("action_lo", "-1"));
  p.action_hi = std::stod(ck.meta_or("action_hi", "1"));
  return p;
}

}  // namespace mabe
