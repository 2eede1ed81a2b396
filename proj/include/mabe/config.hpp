#pragma once

// Experiment configuration: an INI-style text format of [section] headers
// and key = value lines. Keys are addressed as "section.key". CLI overrides
// land in the same map, and the fully resolved config is echoed into the
// output directory of every run for reproducibility.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mabe/agent.hpp"
#include "mabe/core.hpp"
#include "mabe/dataset.hpp"
#include "mabe/dynamics.hpp"
#include "mabe/env.hpp"
#include "mabe/prior.hpp"

namespace mabe {

inline std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

struct Config {
  std::map<std::string, std::string> kv;

  bool has(const std::string& key) const { return kv.count(key) > 0; }

  std::string get(const std::string& key, const std::string& dflt) const {
    auto it = kv.find(key);
    return it == kv.end() ? dflt : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("missing config key: " + key);
    return it->second;
  }

  double get_d(const std::string& key, double dflt) const {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    try {
      return std::stod(it->second);
    } catch (...) {
      throw ConfigError("key " + key + " is not a number: " + it->second);
    }
  }

  int get_i(const std::string& key, int dflt) const {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    try {
      return std::stoi(it->second);
    } catch (...) {
      throw ConfigError("key " + key + " is not an integer: " + it->second);
    }
  }

  uint64_t get_u64(const std::string& key, uint64_t dflt) const {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    return std::stoull(it->second);
  }

  bool get_b(const std::string& key, bool dflt) const {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    const std::string v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("key " + key + " is not a boolean: " + v);
  }

  std::vector<int> get_ints(const std::string& key, std::vector<int> dflt) const {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    std::vector<int> out;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      if (!tok.empty()) out.push_back(std::stoi(tok));
    }
    return out;
  }

  std::vector<uint64_t> get_seeds(const std::string& key, std::vector<uint64_t> dflt) const {
    auto it = kv.find(key);
    if (it == kv.end()) return dflt;
    std::vector<uint64_t> out;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      if (!tok.empty()) out.push_back(std::stoull(tok));
    }
    if (out.empty()) throw ConfigError("key " + key + " lists no seeds");
    return out;
  }

  void set(const std::string& key, const std::string& value) { kv[key] = value; }

  // Canonical text form: sorted "key = value" lines (std::map is sorted).
  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
  }

  // Serialization of one section's keys, for content-addressed artifacts.
  std::string serialize_section(const std::string& section) const {
    std::string out;
    const std::string pre = section + ".";
    for (const auto& [k, v] : kv)
      if (k.rfind(pre, 0) == 0) out += k + " = " + v + "\n";
    return out;
  }
};

inline Config parse_config_text(const std::string& text) {
  Config cfg;
  std::stringstream ss(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("malformed section header at line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key = value at line " + std::to_string(lineno));
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("empty key at line " + std::to_string(lineno));
    cfg.kv[section.empty() ? key : section + "." + key] = val;
  }
  return cfg;
}

inline Config load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

inline std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Typed views over config sections.

inline EnvSpec env_spec_from_config(const Config& c, const std::string& sec = "env") {
  EnvSpec s;
  const std::string kind = c.get(sec + ".kind", "point-mass");
  if (kind == "point-mass")
    s.kind = EnvKind::PointMass;
  else if (kind == "pendulum")
    s.kind = EnvKind::Pendulum;
  else
    throw ConfigError("unknown env kind: " + kind);
  const std::string reward = c.get(sec + ".reward", "directional");
  if (reward == "directional")
    s.reward = RewardKind::Directional;
  else if (reward == "goal")
    s.reward = RewardKind::Goal;
  else
    throw ConfigError("unknown reward kind: " + reward);
  s.dt = c.get_d(sec + ".dt", s.dt);
  s.friction = c.get_d(sec + ".friction", s.friction);
  s.mass = c.get_d(sec + ".mass", s.mass);
  s.gravity = c.get_d(sec + ".gravity", s.gravity);
  s.slope_y = c.get_d(sec + ".slope_y", s.slope_y);
  s.track_halfwidth = c.get_d(sec + ".track_halfwidth", s.track_halfwidth);
  s.dir_x = c.get_d(sec + ".dir_x", s.dir_x);
  s.dir_y = c.get_d(sec + ".dir_y", s.dir_y);
  s.goal_x = c.get_d(sec + ".goal_x", s.goal_x);
  s.goal_y = c.get_d(sec + ".goal_y", s.goal_y);
  s.action_cost = c.get_d(sec + ".action_cost", s.action_cost);
  s.action_lo = c.get_d(sec + ".action_lo", s.action_lo);
  s.action_hi = c.get_d(sec + ".action_hi", s.action_hi);
  s.horizon = c.get_i(sec + ".horizon", s.horizon);
  s.init_pos_halfwidth = c.get_d(sec + ".init_pos_halfwidth", s.init_pos_halfwidth);
  s.init_vel_halfwidth = c.get_d(sec + ".init_vel_halfwidth", s.init_vel_halfwidth);
  s.validate();
  return s;
}

inline DynamicsCfg dynamics_cfg_from_config(const Config& c) {
  DynamicsCfg d;
  d.members = c.get_i("dynamics.members", d.members);
  d.elites = c.get_i("dynamics.elites", d.elites);
  d.hidden = c.get_ints("dynamics.hidden", d.hidden);
  d.lr = c.get_d("dynamics.lr", d.lr);
  d.batch = c.get_i("dynamics.batch", d.batch);
  d.max_epochs = c.get_i("dynamics.max_epochs", d.max_epochs);
  d.patience = c.get_i("dynamics.patience", d.patience);
  d.holdout_fraction = c.get_d("dynamics.holdout_fraction", d.holdout_fraction);
  d.bound_expand = c.get_d("dynamics.bound_expand", d.bound_expand);
  d.xi = c.get_d("dynamics.xi", d.xi);
  return d;
}

inline QCfg q_cfg_from_config(const Config& c) {
  QCfg q;
  q.hidden = c.get_ints("q.hidden", q.hidden);
  q.lr = c.get_d("q.lr", q.lr);
  q.batch = c.get_i("q.batch", q.batch);
  q.max_epochs = c.get_i("q.max_epochs", q.max_epochs);
  q.patience = c.get_i("q.patience", q.patience);
  q.polyak = c.get_d("q.polyak", q.polyak);
  q.plateau_tol = c.get_d("q.plateau_tol", q.plateau_tol);
  return q;
}

inline PriorCfg prior_cfg_from_config(const Config& c) {
  PriorCfg p;
  p.hidden = c.get_ints("prior.hidden", p.hidden);
  p.lr = c.get_d("prior.lr", p.lr);
  p.batch = c.get_i("prior.batch", p.batch);
  p.max_epochs = c.get_i("prior.max_epochs", p.max_epochs);
  p.patience = c.get_i("prior.patience", p.patience);
  p.val_fraction = c.get_d("prior.val_fraction", p.val_fraction);
  return p;
}

inline AgentCfg agent_cfg_from_config(const Config& c, const EnvSpec& env) {
  AgentCfg a;
  a.epochs = c.get_i("agent.epochs", a.epochs);
  a.branches = c.get_i("agent.branches", a.branches);
  a.rollout_h = c.get_i("agent.rollout_h", a.rollout_h);
  a.grad_steps = c.get_i("agent.grad_steps", a.grad_steps);
  a.batch = c.get_i("agent.batch", a.batch);
  a.real_fraction = c.get_d("agent.real_fraction", a.real_fraction);
  a.gamma = c.get_d("agent.gamma", a.gamma);
  a.delta = c.get_d("agent.delta", a.delta);
  a.xi = c.get_d("agent.xi", a.xi);
  a.beta0 = c.get_d("agent.beta0", a.beta0);
  a.lr_pi = c.get_d("agent.lr_pi", a.lr_pi);
  a.lr_q = c.get_d("agent.lr_q", a.lr_q);
  a.lr_beta = c.get_d("agent.lr_beta", a.lr_beta);
  a.polyak = c.get_d("agent.polyak", a.polyak);
  a.twin_q = c.get_b("agent.twin_q", a.twin_q);
  a.no_prior = c.get_b("agent.no_prior", a.no_prior);
  a.no_rl = c.get_b("agent.no_rl", a.no_rl);
  a.entropy_coef = c.get_d("agent.entropy_coef", a.entropy_coef);
  a.policy_hidden = c.get_ints("agent.policy_hidden", a.policy_hidden);
  a.critic_hidden = c.get_ints("agent.critic_hidden", a.critic_hidden);
  a.action_lo = env.action_lo;
  a.action_hi = env.action_hi;
  a.buffer_capacity = static_cast<size_t>(c.get_u64("agent.buffer_capacity", 0));
  a.eval_tail_epochs = c.get_i("agent.eval_tail_epochs", a.eval_tail_epochs);
  a.eval_every = c.get_i("agent.eval_every", a.eval_every);
  return a;
}

}  // namespace mabe
