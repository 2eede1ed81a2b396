#pragma once

// End-to-end pipelines: dataset generation -> dynamics -> prior -> agent ->
// evaluation, with content-addressed stage artifacts, plus the ablation and
// cross-domain transfer harnesses and plot-ready CSV emission.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mabe/agent.hpp"
#include "mabe/config.hpp"
#include "mabe/core.hpp"
#include "mabe/dataset.hpp"
#include "mabe/dynamics.hpp"
#include "mabe/env.hpp"
#include "mabe/prior.hpp"

namespace mabe {

// ---------------------------------------------------------------------------
// Evaluation and scoring.

struct EvalResult {
  double mean = 0.0;
  double stddev = 0.0;
};

inline EvalResult evaluate_policy(const EnvSpec& spec, const StatePolicy& policy, int episodes,
                                  uint64_t seed) {
  if (episodes < 1) throw ConfigError("evaluate_policy needs episodes >= 1");
  Rng root(seed);
  Vec returns(episodes);
  for (int e = 0; e < episodes; ++e) {
    Rng er = root.derive(e);
    Trajectory t = rollout_episode(spec, policy, spec.horizon, er.next_u64());
    returns[e] = t.undiscounted_return();
  }
  EvalResult r;
  for (double v : returns) r.mean += v;
  r.mean /= episodes;
  if (episodes > 1) {
    double ss = 0.0;
    for (double v : returns) ss += (v - r.mean) * (v - r.mean);
    r.stddev = std::sqrt(ss / (episodes - 1));
  }
  return r;
}

// Deterministic (mean-action) evaluation by default; stochastic draws per
// step when requested.
inline EvalResult eval_gaussian_policy(const EnvSpec& spec, const GaussianPolicy& policy,
                                       int episodes, uint64_t seed, bool stochastic = false) {
  if (!stochastic) {
    StatePolicy p = [&](const EnvState& st) { return policy.act_mean(observe(spec, st)); };
    return evaluate_policy(spec, p, episodes, seed);
  }
  auto rng = std::make_shared<Rng>(Rng(seed).derive("actions"));
  StatePolicy p = [&, rng](const EnvState& st) {
    return policy.act_sample(observe(spec, st), *rng);
  };
  return evaluate_policy(spec, p, episodes, seed);
}

// D4RL-style convention: 100 (raw - random) / (expert - random).
inline double normalized_score(double raw, double random_ref, double expert_ref) {
  if (expert_ref == random_ref)
    throw ConfigError("normalized_score: degenerate references (expert == random)");
  return 100.0 * (raw - random_ref) / (expert_ref - random_ref);
}

struct RefScores {
  double random_ref = 0.0;
  double expert_ref = 0.0;
};

// Reference scores from the scripted controllers, 100 episodes each.
inline RefScores compute_refs(const EnvSpec& spec, int episodes = 100, uint64_t seed = 424242) {
  RefScores r;
  r.random_ref =
      evaluate_policy(spec, make_scripted(ControllerKind::Random, spec, 0.0, seed), episodes, seed)
          .mean;
  r.expert_ref =
      evaluate_policy(spec, make_scripted(ControllerKind::Expert, spec, 0.0, seed + 1), episodes,
                      seed + 1)
          .mean;
  if (r.expert_ref <= r.random_ref)
    throw ConfigError("reference scores are degenerate: expert <= random");
  return r;
}

// ---------------------------------------------------------------------------
// Result tables.

struct ResultRow {
  std::string experiment;
  std::string arm;
  uint64_t seed = 0;
  double raw_return = 0.0;
  double return_std = 0.0;
  double normalized = 0.0;
};

struct CurveRow {
  std::string arm;
  uint64_t seed = 0;
  EpochMetrics m;
};

inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void emit_metrics(const std::vector<ResultRow>& rows, const std::vector<CurveRow>& curves,
                         const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  std::vector<ResultRow> r = rows;
  std::stable_sort(r.begin(), r.end(), [](const ResultRow& a, const ResultRow& b) {
    if (a.experiment != b.experiment) return a.experiment < b.experiment;
    if (a.arm != b.arm) return a.arm < b.arm;
    return a.seed < b.seed;
  });
  {
    std::ofstream os(out_dir + "/results.csv", std::ios::trunc);
    if (!os) throw IoError("cannot write " + out_dir + "/results.csv");
    os << "experiment,arm,seed,raw_return,return_std,normalized_score\n";
    for (const auto& row : r)
      os << row.experiment << "," << row.arm << "," << row.seed << "," << fmt_g(row.raw_return)
         << "," << fmt_g(row.return_std) << "," << fmt_g(row.normalized) << "\n";
  }

  std::vector<CurveRow> c = curves;
  std::stable_sort(c.begin(), c.end(), [](const CurveRow& a, const CurveRow& b) {
    if (a.arm != b.arm) return a.arm < b.arm;
    if (a.seed != b.seed) return a.seed < b.seed;
    return a.m.epoch < b.m.epoch;
  });
  {
    std::ofstream os(out_dir + "/learning_curves.csv", std::ios::trunc);
    if (!os) throw IoError("cannot write " + out_dir + "/learning_curves.csv");
    os << "arm,seed,epoch,critic_loss,policy_obj,mean_kl,beta,buffer_size,eval_return\n";
    for (const auto& row : c) {
      os << row.arm << "," << row.seed << "," << row.m.epoch << "," << fmt_g(row.m.critic_loss)
         << "," << fmt_g(row.m.policy_obj) << "," << fmt_g(row.m.mean_kl) << ","
         << fmt_g(row.m.beta) << "," << row.m.buffer_size << ",";
      if (row.m.eval_return) os << fmt_g(*row.m.eval_return);
      os << "\n";
    }
  }

  {
    std::ofstream os(out_dir + "/summary.txt", std::ios::trunc);
    if (!os) throw IoError("cannot write " + out_dir + "/summary.txt");
    std::map<std::pair<std::string, std::string>, Vec> by_arm;
    for (const auto& row : r) by_arm[{row.experiment, row.arm}].push_back(row.normalized);
    for (const auto& [key, scores] : by_arm) {
      double mean = 0.0;
      for (double s : scores) mean += s;
      mean /= scores.size();
      double sd = 0.0;
      if (scores.size() > 1) {
        for (double s : scores) sd += (s - mean) * (s - mean);
        sd = std::sqrt(sd / (scores.size() - 1));
      }
      os << key.first << " " << key.second << ": normalized " << fmt_g(mean) << " +- " << fmt_g(sd)
         << " over " << scores.size() << " seed(s)\n";
    }
  }
}

// ---------------------------------------------------------------------------
// Content-addressed stages.

inline uint64_t file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot hash missing file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return fnv1a64(ss.str());
}

namespace stage {

inline std::string env_key(const EnvSpec& s) {
  std::ostringstream o;
  o << "kind=" << static_cast<int>(s.kind) << ";reward=" << static_cast<int>(s.reward)
    << ";dt=" << fmt_g(s.dt) << ";friction=" << fmt_g(s.friction) << ";mass=" << fmt_g(s.mass)
    << ";gravity=" << fmt_g(s.gravity) << ";slope_y=" << fmt_g(s.slope_y)
    << ";track=" << fmt_g(s.track_halfwidth) << ";dir=" << fmt_g(s.dir_x) << "," << fmt_g(s.dir_y)
    << ";goal=" << fmt_g(s.goal_x) << "," << fmt_g(s.goal_y) << ";cost=" << fmt_g(s.action_cost)
    << ";box=" << fmt_g(s.action_lo) << "," << fmt_g(s.action_hi) << ";horizon=" << s.horizon
    << ";init=" << fmt_g(s.init_pos_halfwidth) << "," << fmt_g(s.init_vel_halfwidth);
  return o.str();
}

inline std::string dyn_key(const DynamicsCfg& c) {
  std::ostringstream o;
  o << "members=" << c.members << ";elites=" << c.elites << ";hidden=";
  for (int h : c.hidden) o << h << ",";
  o << ";lr=" << fmt_g(c.lr) << ";batch=" << c.batch << ";epochs=" << c.max_epochs
    << ";patience=" << c.patience << ";holdout=" << fmt_g(c.holdout_fraction)
    << ";bound=" << fmt_g(c.bound_expand) << ";xi=" << fmt_g(c.xi);
  return o.str();
}

inline std::string q_key(const QCfg& c) {
  std::ostringstream o;
  o << "hidden=";
  for (int h : c.hidden) o << h << ",";
  o << ";lr=" << fmt_g(c.lr) << ";batch=" << c.batch << ";epochs=" << c.max_epochs
    << ";patience=" << c.patience << ";polyak=" << fmt_g(c.polyak)
    << ";tol=" << fmt_g(c.plateau_tol);
  return o.str();
}

inline std::string prior_key(const PriorCfg& c, const std::string& mode, double eta,
                             const std::string& q_norm, double gamma, const QCfg& qc) {
  std::ostringstream o;
  o << "mode=" << mode << ";eta=" << fmt_g(eta) << ";q_norm=" << q_norm
    << ";gamma=" << fmt_g(gamma) << ";hidden=";
  for (int h : c.hidden) o << h << ",";
  o << ";lr=" << fmt_g(c.lr) << ";batch=" << c.batch << ";epochs=" << c.max_epochs
    << ";patience=" << c.patience << ";val=" << fmt_g(c.val_fraction) << ";q{" << q_key(qc) << "}";
  return o.str();
}

inline std::string agent_key(const AgentCfg& c) {
  std::ostringstream o;
  o << "N=" << c.epochs << ";K=" << c.branches << ";h=" << c.rollout_h << ";G=" << c.grad_steps
    << ";batch=" << c.batch << ";f=" << fmt_g(c.real_fraction) << ";gamma=" << fmt_g(c.gamma)
    << ";delta=" << fmt_g(c.delta) << ";xi=" << fmt_g(c.xi) << ";beta0=" << fmt_g(c.beta0)
    << ";lr=" << fmt_g(c.lr_pi) << "," << fmt_g(c.lr_q) << "," << fmt_g(c.lr_beta)
    << ";polyak=" << fmt_g(c.polyak) << ";twin=" << c.twin_q << ";no_prior=" << c.no_prior
    << ";no_rl=" << c.no_rl << ";ent=" << fmt_g(c.entropy_coef) << ";ph=";
  for (int h : c.policy_hidden) o << h << ",";
  o << ";ch=";
  for (int h : c.critic_hidden) o << h << ",";
  o << ";box=" << fmt_g(c.action_lo) << "," << fmt_g(c.action_hi) << ";cap=" << c.buffer_capacity
    << ";tail=" << c.eval_tail_epochs << ";every=" << c.eval_every;
  return o.str();
}

}  // namespace stage

// Shared stage runner with artifact reuse. Reruns with an identical config
// hash load the existing artifact unless forced.
struct StageRunner {
  std::string out_dir;
  bool force = false;

  std::string path_for(const std::string& name, const std::string& hash,
                       const std::string& ext) const {
    return out_dir + "/" + name + "_" + hash.substr(0, 16) + "." + ext;
  }

  Dataset ensure_dataset(const std::string& name, const EnvSpec& env, Recipe recipe, size_t size,
                         uint64_t seed, const GenCfg& gen, std::string* hash_out = nullptr,
                         std::string* path_out = nullptr,
                         const std::optional<std::pair<double, double>>& relabel_dir = {}) {
    std::ostringstream key;
    key << stage::env_key(env) << ";recipe=" << recipe_name(recipe) << ";size=" << size
        << ";seed=" << seed << ";noise=" << fmt_g(gen.expert_noise) << ","
        << fmt_g(gen.medium_noise);
    if (relabel_dir)
      key << ";relabel=" << fmt_g(relabel_dir->first) << "," << fmt_g(relabel_dir->second);
    const std::string hash = hash_hex(fnv1a64(key.str()));
    const std::string path = path_for(name, hash, "mabd");
    if (hash_out) *hash_out = hash;
    if (path_out) *path_out = path;

    if (!force && std::filesystem::exists(path)) {
      Dataset d = read_dataset(path);
      if (d.meta.count("config_hash") && d.meta.at("config_hash") == hash) {
        log_info("stage " + name + ": reusing " + path);
        return d;
      }
      log_info("stage " + name + ": config hash changed, regenerating");
    }
    Dataset d = generate_dataset(env, recipe, size, seed, gen);
    if (relabel_dir) {
      for (auto& t : d.transitions)
        t.reward = relabel_directional(env, t.action, t.next_obs, relabel_dir->first,
                                       relabel_dir->second);
      d.meta["relabel_dir"] = fmt_g(relabel_dir->first) + "," + fmt_g(relabel_dir->second);
    }
    d.meta["config_hash"] = hash;
    write_dataset(path, d);
    log_info("stage " + name + ": wrote " + path);
    // reload so in-memory values match the stored single-precision file
    return read_dataset(path);
  }

  DynamicsEnsemble ensure_dynamics(const std::string& name, const Dataset& d,
                                   const std::string& dataset_hash, const DynamicsCfg& cfg,
                                   uint64_t seed, std::string* hash_out = nullptr) {
    const std::string hash =
        hash_hex(fnv1a64("ds=" + dataset_hash + ";" + stage::dyn_key(cfg) +
                         ";seed=" + std::to_string(seed)));
    if (hash_out) *hash_out = hash;
    const std::string path = path_for(name, hash, "mabm");
    if (!force && std::filesystem::exists(path)) {
      Checkpoint ck = read_checkpoint(path);
      if (ck.meta_or("config_hash", "") == hash) {
        log_info("stage " + name + ": reusing " + path);
        return unpack_dynamics(ck);
      }
      log_info("stage " + name + ": config hash changed, retraining");
    }
    DynamicsEnsemble e = train_dynamics(d, cfg, seed);
    Checkpoint ck = pack_dynamics(e);
    ck.meta["config_hash"] = hash;
    ck.meta["dataset_hash"] = dataset_hash;
    write_checkpoint(path, ck);
    log_info("stage " + name + ": wrote " + path);
    return e;
  }

  PriorParams ensure_prior(const std::string& name, const Dataset& d,
                           const std::string& dataset_hash, const std::string& mode, double eta,
                           const std::string& q_norm, double gamma, const QCfg& qcfg,
                           const PriorCfg& pcfg, uint64_t seed,
                           std::string* hash_out = nullptr) {
    const std::string hash = hash_hex(
        fnv1a64("ds=" + dataset_hash + ";" + stage::prior_key(pcfg, mode, eta, q_norm, gamma, qcfg) +
                ";seed=" + std::to_string(seed)));
    if (hash_out) *hash_out = hash;
    const std::string path = path_for(name, hash, "mabm");
    if (!force && std::filesystem::exists(path)) {
      Checkpoint ck = read_checkpoint(path);
      if (ck.meta_or("config_hash", "") == hash) {
        log_info("stage " + name + ": reusing " + path);
        return unpack_prior(ck);
      }
      log_info("stage " + name + ": config hash changed, retraining");
    }

    Vec weights;
    if (mode == "uniform") {
      weights.assign(d.size(), 1.0);
    } else if (mode == "q-advantage") {
      DatasetQ q = fit_q_dataset(d, gamma, qcfg, Rng(seed).derive("qfit").next_u64());
      const DatasetStats st = dataset_stats(d);
      weights = advantage_weights(q, d, gamma, st.r_max, eta,
                                  q_norm == "max_q" ? QNorm::MaxQ : QNorm::RMax);
      Checkpoint qck = pack_dataset_q(q);
      qck.meta["dataset_hash"] = dataset_hash;
      write_checkpoint(path_for(name + "_qfit", hash, "mabm"), qck);
    } else if (mode == "trajectory-return") {
      weights = return_weights(d, eta);
    } else {
      throw ConfigError("unknown prior mode: " + mode);
    }
    PriorParams p = train_prior(d, weights, pcfg, Rng(seed).derive("prior").next_u64());
    p.mode = mode;
    p.eta = eta;
    Checkpoint ck = pack_prior(p);
    ck.meta["config_hash"] = hash;
    ck.meta["dataset_hash"] = dataset_hash;
    write_checkpoint(path, ck);
    log_info("stage " + name + ": wrote " + path);
    return p;
  }
};

// ---------------------------------------------------------------------------
// Pipelines.

struct PipelineResult {
  std::vector<ResultRow> rows;
  std::vector<CurveRow> curves;
  std::map<std::string, std::string> artifacts;  // stage name -> path
  RefScores refs;
};

namespace detail_exp {

inline RefScores resolve_refs(const Config& cfg, const EnvSpec& eval_env) {
  if (cfg.has("experiment.random_ref") && cfg.has("experiment.expert_ref")) {
    RefScores r;
    r.random_ref = cfg.get_d("experiment.random_ref", 0.0);
    r.expert_ref = cfg.get_d("experiment.expert_ref", 1.0);
    if (r.expert_ref <= r.random_ref)
      throw ConfigError("configured reference scores are degenerate");
    return r;
  }
  return compute_refs(eval_env, cfg.get_i("experiment.ref_episodes", 100));
}

// Train one agent arm and evaluate it: raw score is the mean of the
// tail-epoch evaluation probes.
inline void run_arm(const std::string& experiment, const std::string& arm, const Dataset& d,
                    const DynamicsEnsemble& dyn, const PriorParams* prior, AgentCfg acfg,
                    const EnvSpec& eval_env, const Config& cfg, uint64_t seed,
                    const RefScores& refs, std::vector<ResultRow>& rows,
                    std::vector<CurveRow>& curves, const StageRunner& runner,
                    const std::string& policy_hash_meta_dyn,
                    const std::string& policy_hash_meta_prior,
                    const GaussianPolicy* init_policy = nullptr) {
  const int eval_episodes = cfg.get_i("experiment.eval_episodes", 10);
  uint64_t probe_counter = 0;
  EvalProbe probe = [&](const GaussianPolicy& p) {
    const uint64_t s = Rng(seed).derive("eval").derive(probe_counter++).next_u64();
    return eval_gaussian_policy(eval_env, p, eval_episodes, s).mean;
  };
  auto [policy, metrics] = train_mabe(d, dyn, prior, acfg, seed, probe, init_policy);

  Vec tail;
  for (const auto& row : metrics.epochs) {
    const bool in_tail = acfg.no_rl || row.epoch > acfg.epochs - acfg.eval_tail_epochs;
    if (row.eval_return && in_tail) tail.push_back(*row.eval_return);
  }
  if (tail.empty()) tail.push_back(probe(policy));
  double raw = 0.0;
  for (double v : tail) raw += v;
  raw /= static_cast<double>(tail.size());
  double sd = 0.0;
  if (tail.size() > 1) {
    for (double v : tail) sd += (v - raw) * (v - raw);
    sd = std::sqrt(sd / (tail.size() - 1));
  }

  ResultRow rr;
  rr.experiment = experiment;
  rr.arm = arm;
  rr.seed = seed;
  rr.raw_return = raw;
  rr.return_std = sd;
  rr.normalized = normalized_score(raw, refs.random_ref, refs.expert_ref);
  rows.push_back(rr);
  for (const auto& m : metrics.epochs) curves.push_back({arm, seed, m});

  Checkpoint ck = pack_policy(policy);
  ck.meta["arm"] = arm;
  ck.meta["seed"] = std::to_string(seed);
  ck.meta["dynamics_dataset_hash"] = policy_hash_meta_dyn;
  ck.meta["prior_dataset_hash"] = policy_hash_meta_prior;
  const std::string h =
      hash_hex(fnv1a64(stage::agent_key(acfg) + ";arm=" + arm + ";seed=" + std::to_string(seed)));
  write_checkpoint(runner.path_for("policy_" + arm + "_s" + std::to_string(seed), h, "mabm"), ck);
}

}  // namespace detail_exp

// gen-data -> train-dynamics -> train-prior -> train-mabe -> evaluate, with
// every intermediate artifact persisted and reused on reruns.
inline PipelineResult run_pipeline(const Config& cfg, bool force) {
  StageRunner runner{cfg.require("experiment.out"), force};
  std::filesystem::create_directories(runner.out_dir);
  {
    std::ofstream os(runner.out_dir + "/config_resolved.txt", std::ios::trunc);
    os << cfg.serialize();
  }

  const EnvSpec env = env_spec_from_config(cfg);
  GenCfg gen;
  gen.expert_noise = cfg.get_d("dataset.expert_noise", gen.expert_noise);
  gen.medium_noise = cfg.get_d("dataset.medium_noise", gen.medium_noise);
  const Recipe recipe = recipe_from_name(cfg.get("dataset.recipe", "mixed"));
  const size_t size = static_cast<size_t>(cfg.get_u64("dataset.size", 20000));
  const uint64_t dseed = cfg.get_u64("dataset.seed", 7);

  PipelineResult result;
  std::string ds_hash, ds_path;
  Dataset d = runner.ensure_dataset("dataset", env, recipe, size, dseed, gen, &ds_hash, &ds_path);
  result.artifacts["dataset"] = ds_path;

  const DynamicsCfg dcfg = dynamics_cfg_from_config(cfg);
  std::string dyn_hash;
  const uint64_t dyn_seed = cfg.get_u64("dynamics.seed", 11);
  DynamicsEnsemble dyn = runner.ensure_dynamics("dynamics", d, ds_hash, dcfg, dyn_seed, &dyn_hash);
  result.artifacts["dynamics"] = runner.path_for("dynamics", dyn_hash, "mabm");

  const AgentCfg acfg_base = agent_cfg_from_config(cfg, env);
  const std::string mode = cfg.get("prior.mode", "q-advantage");
  const double eta = cfg.get_d("prior.eta", 1.0);
  const std::string q_norm = cfg.get("prior.q_norm", "rmax");
  std::string prior_hash;
  PriorParams prior =
      runner.ensure_prior("prior", d, ds_hash, mode, eta, q_norm, acfg_base.gamma,
                          q_cfg_from_config(cfg), prior_cfg_from_config(cfg),
                          cfg.get_u64("prior.seed", 13), &prior_hash);
  result.artifacts["prior"] = runner.path_for("prior", prior_hash, "mabm");

  result.refs = detail_exp::resolve_refs(cfg, env);
  const std::string name = cfg.get("experiment.name", "pipeline");
  for (uint64_t seed : cfg.get_seeds("experiment.seeds", {1, 2, 3}))
    detail_exp::run_arm(name, "full", d, dyn, &prior, acfg_base, env, cfg, seed, result.refs,
                        result.rows, result.curves, runner, ds_hash, ds_hash);
  emit_metrics(result.rows, result.curves, runner.out_dir);
  return result;
}

// Four arms sharing dataset, dynamics, and prior artifacts; only the ablated
// component differs.
inline PipelineResult run_ablation(const Config& cfg, bool force) {
  StageRunner runner{cfg.require("experiment.out"), force};
  std::filesystem::create_directories(runner.out_dir);
  {
    std::ofstream os(runner.out_dir + "/config_resolved.txt", std::ios::trunc);
    os << cfg.serialize();
  }

  const EnvSpec env = env_spec_from_config(cfg);
  GenCfg gen;
  gen.expert_noise = cfg.get_d("dataset.expert_noise", gen.expert_noise);
  gen.medium_noise = cfg.get_d("dataset.medium_noise", gen.medium_noise);
  const Recipe recipe = recipe_from_name(cfg.get("dataset.recipe", "mixed"));
  const size_t size = static_cast<size_t>(cfg.get_u64("dataset.size", 20000));

  PipelineResult result;
  std::string ds_hash, ds_path;
  Dataset d = runner.ensure_dataset("dataset", env, recipe, size, cfg.get_u64("dataset.seed", 7),
                                    gen, &ds_hash, &ds_path);
  result.artifacts["dataset"] = ds_path;

  std::string dyn_hash;
  DynamicsEnsemble dyn = runner.ensure_dynamics("dynamics", d, ds_hash,
                                                dynamics_cfg_from_config(cfg),
                                                cfg.get_u64("dynamics.seed", 11), &dyn_hash);

  const AgentCfg base = agent_cfg_from_config(cfg, env);
  std::string prior_hash;
  PriorParams prior = runner.ensure_prior(
      "prior", d, ds_hash, cfg.get("prior.mode", "q-advantage"), cfg.get_d("prior.eta", 1.0),
      cfg.get("prior.q_norm", "rmax"), base.gamma, q_cfg_from_config(cfg),
      prior_cfg_from_config(cfg), cfg.get_u64("prior.seed", 13), &prior_hash);

  result.refs = detail_exp::resolve_refs(cfg, env);
  const auto seeds = cfg.get_seeds("experiment.seeds", {1, 2, 3});
  const std::string name = cfg.get("experiment.name", "ablation");

  struct Arm {
    std::string label;
    AgentCfg acfg;
    bool uses_prior;
  };
  std::vector<Arm> arms;
  arms.push_back({"full", base, true});
  {
    AgentCfg a = base;
    a.xi = 0.0;
    arms.push_back({"no_uncertainty", a, true});
  }
  {
    AgentCfg a = base;
    a.no_prior = true;
    arms.push_back({"no_prior", a, false});
  }
  {
    AgentCfg a = base;
    a.no_rl = true;
    arms.push_back({"no_rl", a, true});
  }
  for (const auto& arm : arms)
    for (uint64_t seed : seeds)
      detail_exp::run_arm(name, arm.label, d, dyn, arm.uses_prior ? &prior : nullptr, arm.acfg,
                          env, cfg, seed, result.refs, result.rows, result.curves, runner, ds_hash,
                          arm.uses_prior ? ds_hash : "");
  emit_metrics(result.rows, result.curves, runner.out_dir);
  return result;
}

// Cross-domain transfer: D1 = mixed data on the target-domain forward task,
// D2 = expert data on the source-domain flipped task. All arms are scored on
// the flipped task in the target domain. D1 rewards are relabeled to the
// target task with the known reward function (direction flip).
inline PipelineResult run_transfer(const Config& cfg, bool force) {
  StageRunner runner{cfg.require("experiment.out"), force};
  std::filesystem::create_directories(runner.out_dir);
  {
    std::ofstream os(runner.out_dir + "/config_resolved.txt", std::ios::trunc);
    os << cfg.serialize();
  }

  const EnvSpec env_fwd = env_spec_from_config(cfg);  // target domain, forward task
  if (env_fwd.kind != EnvKind::PointMass || env_fwd.reward != RewardKind::Directional)
    throw ConfigError("transfer harness requires a directional point-mass task");

  EnvSpec env_target = env_fwd;  // target domain, flipped task (evaluation env)
  env_target.dir_x = -env_fwd.dir_x;
  env_target.dir_y = -env_fwd.dir_y;

  EnvSpec env_source = env_target;  // source domain, flipped task
  env_source.friction = cfg.get_d("transfer.source_friction", 0.45);

  GenCfg gen1;
  gen1.expert_noise = cfg.get_d("dataset.expert_noise", gen1.expert_noise);
  gen1.medium_noise = cfg.get_d("dataset.medium_noise", gen1.medium_noise);
  GenCfg gen2 = gen1;
  gen2.expert_noise = cfg.get_d("transfer.d2_expert_noise", 0.15);

  PipelineResult result;
  // D1: target-domain data on the original task, rewards relabeled to the
  // flipped task.
  std::string d1_hash, d1_path;
  Dataset d1 = runner.ensure_dataset(
      "d1", env_fwd, recipe_from_name(cfg.get("transfer.d1_recipe", "mixed")),
      static_cast<size_t>(cfg.get_u64("transfer.d1_size", 20000)),
      cfg.get_u64("transfer.d1_seed", 7), gen1, &d1_hash, &d1_path,
      std::make_pair(env_target.dir_x, env_target.dir_y));
  result.artifacts["d1"] = d1_path;

  // D2: source-domain expert data on the flipped task.
  std::string d2_hash, d2_path;
  Dataset d2 = runner.ensure_dataset(
      "d2", env_source, recipe_from_name(cfg.get("transfer.d2_recipe", "expert")),
      static_cast<size_t>(cfg.get_u64("transfer.d2_size", 10000)),
      cfg.get_u64("transfer.d2_seed", 9), gen2, &d2_hash, &d2_path);
  result.artifacts["d2"] = d2_path;

  const DynamicsCfg dcfg = dynamics_cfg_from_config(cfg);
  std::string dyn1_hash, dyn2_hash;
  DynamicsEnsemble dyn1 =
      runner.ensure_dynamics("dynamics_d1", d1, d1_hash, dcfg, cfg.get_u64("dynamics.seed", 11),
                             &dyn1_hash);
  DynamicsEnsemble dyn2 =
      runner.ensure_dynamics("dynamics_d2", d2, d2_hash, dcfg, cfg.get_u64("dynamics.seed", 11),
                             &dyn2_hash);

  const AgentCfg base = agent_cfg_from_config(cfg, env_fwd);
  std::string prior2_hash;
  PriorParams prior2 = runner.ensure_prior(
      "prior_d2", d2, d2_hash, cfg.get("prior.mode", "q-advantage"), cfg.get_d("prior.eta", 1.0),
      cfg.get("prior.q_norm", "rmax"), base.gamma, q_cfg_from_config(cfg),
      prior_cfg_from_config(cfg), cfg.get_u64("prior.seed", 13), &prior2_hash);

  result.refs = detail_exp::resolve_refs(cfg, env_target);
  const auto seeds = cfg.get_seeds("experiment.seeds", {1, 2, 3});
  const std::string name = cfg.get("experiment.name", "transfer");

  for (uint64_t seed : seeds) {
    // (i) task transfer only: D1 model toward the flipped task, no prior
    {
      AgentCfg a = base;
      a.no_prior = true;
      detail_exp::run_arm(name, "task_only", d1, dyn1, nullptr, a, env_target, cfg, seed,
                          result.refs, result.rows, result.curves, runner, d1_hash, "");
    }
    // (ii) domain transfer only: trained wholly in the source domain,
    // deployed zero-shot in the target domain
    detail_exp::run_arm(name, "domain_only", d2, dyn2, &prior2, base, env_target, cfg, seed,
                        result.refs, result.rows, result.curves, runner, d2_hash, d2_hash);
    // (iii) task transfer with behavior initialization
    {
      AgentCfg a = base;
      a.no_prior = true;
      GaussianPolicy init = policy_from_prior(prior2, a.action_lo, a.action_hi);
      detail_exp::run_arm(name, "task_init", d1, dyn1, nullptr, a, env_target, cfg, seed,
                          result.refs, result.rows, result.curves, runner, d1_hash, d2_hash,
                          &init);
    }
    // (iv) task + domain transfer: D1 dynamics with the D2 behavioral prior
    detail_exp::run_arm(name, "full_mabe", d1, dyn1, &prior2, base, env_target, cfg, seed,
                        result.refs, result.rows, result.curves, runner, d1_hash, d2_hash);
  }
  emit_metrics(result.rows, result.curves, runner.out_dir);
  return result;
}

}  // namespace mabe
