// Command-line driver: dataset generation, stage training, evaluation, and
// the ablation / transfer harnesses. Every subcommand reads the same config
// format; --seed/--out/-D overrides take precedence over file values.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mabe/config.hpp"
#include "mabe/experiment.hpp"

namespace {

using namespace mabe;

Config build_config(const std::string& config_path, const std::string& out_dir,
                    const std::string& seed, const std::vector<std::string>& defines) {
  Config cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  if (!out_dir.empty()) cfg.set("experiment.out", out_dir);
  if (!seed.empty()) cfg.set("experiment.seeds", seed);
  for (const auto& d : defines) {
    const size_t eq = d.find('=');
    if (eq == std::string::npos) throw ConfigError("-D expects key=value, got: " + d);
    cfg.set(trim(d.substr(0, eq)), trim(d.substr(eq + 1)));
  }
  return cfg;
}

void print_rows(const PipelineResult& r) {
  std::printf("%-12s %-16s %6s %12s %12s %8s\n", "experiment", "arm", "seed", "raw", "std",
              "score");
  for (const auto& row : r.rows)
    std::printf("%-12s %-16s %6llu %12.4f %12.4f %8.2f\n", row.experiment.c_str(),
                row.arm.c_str(), static_cast<unsigned long long>(row.seed), row.raw_return,
                row.return_std, row.normalized);
  std::printf("refs: random=%.4f expert=%.4f\n", r.refs.random_ref, r.refs.expert_ref);
}

int run_gen_data(const Config& cfg, bool force) {
  StageRunner runner{cfg.require("experiment.out"), force};
  std::filesystem::create_directories(runner.out_dir);
  GenCfg gen;
  gen.expert_noise = cfg.get_d("dataset.expert_noise", gen.expert_noise);
  gen.medium_noise = cfg.get_d("dataset.medium_noise", gen.medium_noise);
  std::string hash, path;
  Dataset d = runner.ensure_dataset(
      "dataset", env_spec_from_config(cfg), recipe_from_name(cfg.get("dataset.recipe", "mixed")),
      static_cast<size_t>(cfg.get_u64("dataset.size", 20000)), cfg.get_u64("dataset.seed", 7), gen,
      &hash, &path);
  const DatasetStats st = dataset_stats(d);
  std::printf("dataset: %s\n  transitions=%zu trajectories=%zu r_max=%.4f\n", path.c_str(),
              d.size(), d.num_trajectories(), st.r_max);
  if (cfg.get_b("dataset.export_csv", false)) {
    const std::string csv = path.substr(0, path.size() - 5) + ".csv";
    export_csv(csv, d);
    std::printf("  csv export: %s\n", csv.c_str());
  }
  return 0;
}

int run_train_dynamics(const Config& cfg, bool force) {
  StageRunner runner{cfg.require("experiment.out"), force};
  std::filesystem::create_directories(runner.out_dir);
  GenCfg gen;
  gen.expert_noise = cfg.get_d("dataset.expert_noise", gen.expert_noise);
  gen.medium_noise = cfg.get_d("dataset.medium_noise", gen.medium_noise);
  std::string ds_hash;
  Dataset d = runner.ensure_dataset(
      "dataset", env_spec_from_config(cfg), recipe_from_name(cfg.get("dataset.recipe", "mixed")),
      static_cast<size_t>(cfg.get_u64("dataset.size", 20000)), cfg.get_u64("dataset.seed", 7), gen,
      &ds_hash);
  std::string dyn_hash;
  DynamicsEnsemble e =
      runner.ensure_dynamics("dynamics", d, ds_hash, dynamics_cfg_from_config(cfg),
                             cfg.get_u64("dynamics.seed", 11), &dyn_hash);
  std::printf("dynamics: %s\n  members=%zu elites=%zu\n",
              runner.path_for("dynamics", dyn_hash, "mabm").c_str(), e.members.size(),
              e.elites.size());
  for (int idx : e.elites)
    std::printf("  elite %d holdout_nll=%.6f\n", idx, e.members[idx].holdout_nll);
  return 0;
}

int run_train_prior(const Config& cfg, bool force) {
  StageRunner runner{cfg.require("experiment.out"), force};
  std::filesystem::create_directories(runner.out_dir);
  GenCfg gen;
  gen.expert_noise = cfg.get_d("dataset.expert_noise", gen.expert_noise);
  gen.medium_noise = cfg.get_d("dataset.medium_noise", gen.medium_noise);
  std::string ds_hash;
  Dataset d = runner.ensure_dataset(
      "dataset", env_spec_from_config(cfg), recipe_from_name(cfg.get("dataset.recipe", "mixed")),
      static_cast<size_t>(cfg.get_u64("dataset.size", 20000)), cfg.get_u64("dataset.seed", 7), gen,
      &ds_hash);
  std::string prior_hash;
  PriorParams p = runner.ensure_prior(
      "prior", d, ds_hash, cfg.get("prior.mode", "q-advantage"), cfg.get_d("prior.eta", 1.0),
      cfg.get("prior.q_norm", "rmax"), cfg.get_d("agent.gamma", 0.99), q_cfg_from_config(cfg),
      prior_cfg_from_config(cfg), cfg.get_u64("prior.seed", 13), &prior_hash);
  std::printf("prior: %s\n  mode=%s eta=%.4f val_nll=%.6f (init %.6f)\n",
              runner.path_for("prior", prior_hash, "mabm").c_str(), p.mode.c_str(), p.eta,
              p.val_nll, p.init_val_nll);
  return 0;
}

int run_eval(const Config& cfg, const std::string& policy_path) {
  if (policy_path.empty()) throw ConfigError("eval requires --policy PATH");
  GaussianPolicy p = unpack_policy(read_checkpoint(policy_path));
  const EnvSpec env = env_spec_from_config(cfg);
  const int episodes = cfg.get_i("experiment.eval_episodes", 10);
  const uint64_t seed = cfg.get_seeds("experiment.seeds", {1})[0];
  const bool stochastic = cfg.get_b("experiment.stochastic_eval", false);
  EvalResult r = eval_gaussian_policy(env, p, episodes, seed, stochastic);
  std::printf("eval: mean_return=%.4f std=%.4f episodes=%d\n", r.mean, r.stddev, episodes);
  if (cfg.has("experiment.random_ref") && cfg.has("experiment.expert_ref"))
    std::printf("normalized_score=%.2f\n",
                normalized_score(r.mean, cfg.get_d("experiment.random_ref", 0.0),
                                 cfg.get_d("experiment.expert_ref", 1.0)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"offline model-based RL with adaptive behavioral priors"};
  app.require_subcommand(1);

  std::string config_path, out_dir, seed_str, policy_path;
  std::vector<std::string> defines;
  bool force = false;
  app.add_option("--config", config_path, "config file path")->expected(1);
  app.add_option("--seed", seed_str, "override experiment.seeds");
  app.add_option("--out", out_dir, "override experiment.out");
  app.add_flag("--force", force, "retrain stages even if artifacts exist");
  app.add_option("-D,--define", defines, "config override key=value");

  auto* c_gen = app.add_subcommand("gen-data", "generate an offline dataset");
  auto* c_dyn = app.add_subcommand("train-dynamics", "train the dynamics ensemble");
  auto* c_prior = app.add_subcommand("train-prior", "fit Q, weights, and the behavioral prior");
  auto* c_train = app.add_subcommand("train", "train the full agent (no scoring)");
  auto* c_eval = app.add_subcommand("eval", "evaluate a policy checkpoint");
  c_eval->add_option("--policy", policy_path, "policy checkpoint (.mabm)");
  auto* c_abl = app.add_subcommand("ablate", "run the four-arm component ablation");
  auto* c_tr = app.add_subcommand("transfer", "run the cross-domain transfer harness");
  auto* c_pipe = app.add_subcommand("pipeline", "run the full pipeline end to end");

  CLI11_PARSE(app, argc, argv);

  std::string stage = "startup";
  try {
    mabe::Config cfg = build_config(config_path, out_dir, seed_str, defines);
    if (c_gen->parsed()) {
      stage = "gen-data";
      return run_gen_data(cfg, force);
    }
    if (c_dyn->parsed()) {
      stage = "train-dynamics";
      return run_train_dynamics(cfg, force);
    }
    if (c_prior->parsed()) {
      stage = "train-prior";
      return run_train_prior(cfg, force);
    }
    if (c_train->parsed()) {
      stage = "train";
      cfg.set("agent.eval_tail_epochs", "0");
      mabe::PipelineResult r = mabe::run_pipeline(cfg, force);
      print_rows(r);
      return 0;
    }
    if (c_eval->parsed()) {
      stage = "eval";
      return run_eval(cfg, policy_path);
    }
    if (c_abl->parsed()) {
      stage = "ablate";
      print_rows(mabe::run_ablation(cfg, force));
      return 0;
    }
    if (c_tr->parsed()) {
      stage = "transfer";
      print_rows(mabe::run_transfer(cfg, force));
      return 0;
    }
    if (c_pipe->parsed()) {
      stage = "pipeline";
      print_rows(mabe::run_pipeline(cfg, force));
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error in stage %s: %s\n", stage.c_str(), e.what());
    return 1;
  }
  return 2;
}
