#pragma once

// Offline transition storage, the on-disk MABD format, dataset-recipe
// generation, statistics, and the augmented replay buffer that mixes real
// and synthetic transitions during agent training.
//
// MABD layout (bit-exact, little-endian):
//   magic "MABD" | version u32=1 | obs_dim u32 | act_dim u32 | count u64
//   count records: obs f32*obs_dim, action f32*act_dim, reward f32,
//                  next_obs f32*obs_dim, done u8, traj_end u8
//   footer: line count u32, then per line u32 byte length + "key=value" UTF-8

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mabe/core.hpp"
#include "mabe/env.hpp"

namespace mabe {

struct Transition {
  Vec obs;
  Vec action;
  double reward = 0.0;
  Vec next_obs;
  bool done = false;
  bool traj_end = false;
};

struct Dataset {
  int obs_dim = 0;
  int act_dim = 0;
  std::vector<Transition> transitions;
  std::vector<size_t> traj_offsets;  // start index of each trajectory
  std::map<std::string, std::string> meta;

  size_t size() const { return transitions.size(); }
  size_t num_trajectories() const { return traj_offsets.size(); }

  size_t traj_length(size_t t) const {
    const size_t end = t + 1 < traj_offsets.size() ? traj_offsets[t + 1] : transitions.size();
    return end - traj_offsets[t];
  }

  void rebuild_traj_index() {
    traj_offsets.clear();
    bool open = false;
    for (size_t i = 0; i < transitions.size(); ++i) {
      if (!open) {
        traj_offsets.push_back(i);
        open = true;
      }
      if (transitions[i].traj_end) open = false;
    }
  }

  void validate() const {
    for (const auto& t : transitions) {
      if (static_cast<int>(t.obs.size()) != obs_dim ||
          static_cast<int>(t.next_obs.size()) != obs_dim)
        throw IoError("dataset transition obs width inconsistent");
      if (static_cast<int>(t.action.size()) != act_dim)
        throw IoError("dataset transition action width inconsistent");
    }
    if (!transitions.empty() && !transitions.back().traj_end)
      throw IoError("dataset does not end on a trajectory boundary");
  }
};

struct DatasetStats {
  double r_max = 0.0;
  Vec obs_mean, obs_std;  // std has constant columns substituted by 1
  Vec act_mean, act_std;
  Vec obs_min, obs_max;
  Vec traj_returns;  // undiscounted, one per trajectory
};

inline DatasetStats dataset_stats(const Dataset& d) {
  if (d.transitions.empty()) throw ConfigError("dataset_stats on empty dataset");
  DatasetStats st;
  const int od = d.obs_dim, ad = d.act_dim;
  st.obs_mean.assign(od, 0.0);
  st.obs_std.assign(od, 0.0);
  st.act_mean.assign(ad, 0.0);
  st.act_std.assign(ad, 0.0);
  st.obs_min.assign(od, 1e300);
  st.obs_max.assign(od, -1e300);
  st.r_max = -1e300;
  const double n = static_cast<double>(d.size());
  for (const auto& t : d.transitions) {
    st.r_max = std::max(st.r_max, t.reward);
    for (int i = 0; i < od; ++i) {
      st.obs_mean[i] += t.obs[i];
      st.obs_min[i] = std::min(st.obs_min[i], t.obs[i]);
      st.obs_max[i] = std::max(st.obs_max[i], t.obs[i]);
    }
    for (int i = 0; i < ad; ++i) st.act_mean[i] += t.action[i];
  }
  for (int i = 0; i < od; ++i) st.obs_mean[i] /= n;
  for (int i = 0; i < ad; ++i) st.act_mean[i] /= n;
  for (const auto& t : d.transitions) {
    for (int i = 0; i < od; ++i) {
      const double dv = t.obs[i] - st.obs_mean[i];
      st.obs_std[i] += dv * dv;
    }
    for (int i = 0; i < ad; ++i) {
      const double dv = t.action[i] - st.act_mean[i];
      st.act_std[i] += dv * dv;
    }
  }
  // constant columns get unit scale so normalization stays well defined
  for (int i = 0; i < od; ++i) {
    st.obs_std[i] = std::sqrt(st.obs_std[i] / n);
    if (st.obs_std[i] == 0.0) st.obs_std[i] = 1.0;
  }
  for (int i = 0; i < ad; ++i) {
    st.act_std[i] = std::sqrt(st.act_std[i] / n);
    if (st.act_std[i] == 0.0) st.act_std[i] = 1.0;
  }
  for (size_t t = 0; t < d.num_trajectories(); ++t) {
    double r = 0.0;
    const size_t beg = d.traj_offsets[t];
    const size_t end = beg + d.traj_length(t);
    for (size_t i = beg; i < end; ++i) r += d.transitions[i].reward;
    st.traj_returns.push_back(r);
  }
  return st;
}

// ---------------------------------------------------------------------------
// MABD binary I/O.

namespace mabd {

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f32(std::ostream& os, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

struct Reader {
  std::ifstream is;
  uint64_t offset = 0;
  std::string path;

  explicit Reader(const std::string& p) : is(p, std::ios::binary), path(p) {
    if (!is) throw IoError("cannot open: " + p);
  }

  void read_bytes(void* dst, size_t n, const char* what) {
    if (!is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n)))
      throw IoError("truncated file " + path + " at byte offset " + std::to_string(offset) +
                    " while reading " + what);
    offset += n;
  }

  uint32_t u32(const char* what) {
    unsigned char b[4];
    read_bytes(b, 4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }

  uint64_t u64(const char* what) {
    unsigned char b[8];
    read_bytes(b, 8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }

  float f32(const char* what) {
    uint32_t u = u32(what);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }

  uint8_t u8(const char* what) {
    unsigned char b;
    read_bytes(&b, 1, what);
    return b;
  }
};

}  // namespace mabd

inline void write_dataset(const std::string& path, const Dataset& d) {
  d.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write("MABD", 4);
  mabd::put_u32(os, 1);
  mabd::put_u32(os, static_cast<uint32_t>(d.obs_dim));
  mabd::put_u32(os, static_cast<uint32_t>(d.act_dim));
  mabd::put_u64(os, d.transitions.size());
  for (const auto& t : d.transitions) {
    for (double v : t.obs) mabd::put_f32(os, static_cast<float>(v));
    for (double v : t.action) mabd::put_f32(os, static_cast<float>(v));
    mabd::put_f32(os, static_cast<float>(t.reward));
    for (double v : t.next_obs) mabd::put_f32(os, static_cast<float>(v));
    os.put(t.done ? 1 : 0);
    os.put(t.traj_end ? 1 : 0);
  }
  mabd::put_u32(os, static_cast<uint32_t>(d.meta.size()));
  for (const auto& [k, v] : d.meta) {
    const std::string line = k + "=" + v;
    mabd::put_u32(os, static_cast<uint32_t>(line.size()));
    os.write(line.data(), static_cast<std::streamsize>(line.size()));
  }
  if (!os) throw IoError("write failed: " + path);
}

inline Dataset read_dataset(const std::string& path) {
  mabd::Reader r(path);
  char magic[4];
  r.read_bytes(magic, 4, "magic");
  if (std::memcmp(magic, "MABD", 4) != 0) throw IoError("bad magic in " + path);
  const uint32_t version = r.u32("version");
  if (version != 1)
    throw IoError("unsupported dataset version " + std::to_string(version) + " in " + path);
  Dataset d;
  d.obs_dim = static_cast<int>(r.u32("obs_dim"));
  d.act_dim = static_cast<int>(r.u32("act_dim"));
  if (d.obs_dim <= 0 || d.obs_dim > 1 << 20 || d.act_dim <= 0 || d.act_dim > 1 << 20)
    throw IoError("dimension inconsistency in header of " + path);
  const uint64_t count = r.u64("transition count");
  d.transitions.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    Transition t;
    t.obs.resize(d.obs_dim);
    for (int j = 0; j < d.obs_dim; ++j) t.obs[j] = r.f32("record obs");
    t.action.resize(d.act_dim);
    for (int j = 0; j < d.act_dim; ++j) t.action[j] = r.f32("record action");
    t.reward = r.f32("record reward");
    t.next_obs.resize(d.obs_dim);
    for (int j = 0; j < d.obs_dim; ++j) t.next_obs[j] = r.f32("record next_obs");
    t.done = r.u8("record done") != 0;
    t.traj_end = r.u8("record traj_end") != 0;
    d.transitions.push_back(std::move(t));
  }
  const uint32_t nlines = r.u32("footer line count");
  for (uint32_t i = 0; i < nlines; ++i) {
    const uint32_t len = r.u32("footer line length");
    std::string line(len, '\0');
    r.read_bytes(line.data(), len, "footer line");
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw IoError("malformed footer line in " + path);
    d.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  d.rebuild_traj_index();
  d.validate();
  return d;
}

inline void export_csv(const std::string& path, const Dataset& d) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path);
  for (int i = 0; i < d.obs_dim; ++i) os << "obs_" << i << ",";
  for (int i = 0; i < d.act_dim; ++i) os << "act_" << i << ",";
  os << "reward,";
  for (int i = 0; i < d.obs_dim; ++i) os << "next_obs_" << i << ",";
  os << "done,traj_end\n";
  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    os << buf << ",";
  };
  for (const auto& t : d.transitions) {
    for (double v : t.obs) put(v);
    for (double v : t.action) put(v);
    put(t.reward);
    for (double v : t.next_obs) put(v);
    os << (t.done ? 1 : 0) << "," << (t.traj_end ? 1 : 0) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Recipe generation: graded-quality data collection emulating partially
// trained agents. medium = one imperfect policy; mixed = a blend that walks
// from random through medium to expert across trajectories; medium-expert =
// half-and-half; expert = the tuned controller only.

enum class Recipe { Medium, Mixed, MediumExpert, Expert };

inline const char* recipe_name(Recipe r) {
  switch (r) {
    case Recipe::Medium: return "medium";
    case Recipe::Mixed: return "mixed";
    case Recipe::MediumExpert: return "medium-expert";
    case Recipe::Expert: return "expert";
  }
  return "?";
}

inline Recipe recipe_from_name(const std::string& s) {
  if (s == "medium") return Recipe::Medium;
  if (s == "mixed") return Recipe::Mixed;
  if (s == "medium-expert") return Recipe::MediumExpert;
  if (s == "expert") return Recipe::Expert;
  throw ConfigError("unknown dataset recipe: " + s);
}

struct GenCfg {
  double expert_noise = 0.1;
  double medium_noise = 0.3;
};

inline Dataset generate_dataset(const EnvSpec& spec, Recipe recipe, size_t size, uint64_t seed,
                                const GenCfg& gen = {}) {
  spec.validate();
  if (size < 1) throw ConfigError("generate_dataset needs size >= 1");
  const size_t episodes = std::max<size_t>(1, (size + spec.horizon - 1) / spec.horizon);
  Dataset d;
  d.obs_dim = spec.obs_dim();
  d.act_dim = spec.action_dim();
  Rng root(seed);

  for (size_t ep = 0; ep < episodes; ++ep) {
    Rng ep_rng = root.derive(ep);
    const uint64_t reset_seed = ep_rng.next_u64();
    Rng ctrl_rng = ep_rng.derive("controller");

    StatePolicy policy;
    if (recipe == Recipe::Medium) {
      policy = [&](const EnvState& st) {
        return scripted_action(ControllerKind::Medium, spec, st, gen.medium_noise, ctrl_rng);
      };
    } else if (recipe == Recipe::Expert) {
      policy = [&](const EnvState& st) {
        return scripted_action(ControllerKind::Expert, spec, st, gen.expert_noise, ctrl_rng);
      };
    } else if (recipe == Recipe::MediumExpert) {
      const bool expert = ep % 2 == 1;
      policy = [&, expert](const EnvState& st) {
        return expert
                   ? scripted_action(ControllerKind::Expert, spec, st, gen.expert_noise, ctrl_rng)
                   : scripted_action(ControllerKind::Medium, spec, st, gen.medium_noise, ctrl_rng);
      };
    } else {  // Mixed: two-segment blend random -> medium -> expert
      const double u = episodes > 1 ? static_cast<double>(ep) / (episodes - 1) : 1.0;
      policy = [&, u](const EnvState& st) {
        Vec lo, hi;
        double w;
        if (u < 0.5) {
          w = 2.0 * u;
          lo = scripted_action(ControllerKind::Random, spec, st, 0.0, ctrl_rng);
          hi = scripted_action(ControllerKind::Medium, spec, st, gen.medium_noise, ctrl_rng);
        } else {
          w = 2.0 * u - 1.0;
          lo = scripted_action(ControllerKind::Medium, spec, st, gen.medium_noise, ctrl_rng);
          hi = scripted_action(ControllerKind::Expert, spec, st, gen.expert_noise, ctrl_rng);
        }
        Vec a(lo.size());
        for (size_t i = 0; i < a.size(); ++i) a[i] = (1.0 - w) * lo[i] + w * hi[i];
        return clip_action(spec, std::move(a));
      };
    }

    Trajectory traj = rollout_episode(spec, policy, spec.horizon, reset_seed);
    for (size_t i = 0; i < traj.steps.size(); ++i) {
      auto& s = traj.steps[i];
      Transition t;
      t.obs = std::move(s.obs);
      t.action = std::move(s.action);
      t.reward = s.reward;
      t.next_obs = std::move(s.next_obs);
      t.done = s.done;
      t.traj_end = i + 1 == traj.steps.size();
      d.transitions.push_back(std::move(t));
    }
  }
  d.rebuild_traj_index();
  d.meta["env"] = spec.kind_name();
  d.meta["recipe"] = recipe_name(recipe);
  d.meta["seed"] = std::to_string(seed);
  d.meta["obs_dim"] = std::to_string(d.obs_dim);
  d.meta["act_dim"] = std::to_string(d.act_dim);
  return d;
}

// ---------------------------------------------------------------------------
// Augmented buffer: the real dataset plus a FIFO ring of synthetic
// transitions. Real data is never evicted.

struct AugmentedBuffer {
  const Dataset* real = nullptr;
  std::vector<Transition> synthetic;
  size_t capacity = 0;
  size_t write_pos = 0;
  bool warned_empty_synth = false;

  explicit AugmentedBuffer(const Dataset& d, size_t cap = 0)
      : real(&d), capacity(cap ? cap : 100 * d.size()) {}

  size_t synthetic_count() const { return synthetic.size(); }

  void push_synthetic(Transition t) {
    if (synthetic.size() < capacity) {
      synthetic.push_back(std::move(t));
    } else {
      synthetic[write_pos] = std::move(t);
      write_pos = (write_pos + 1) % capacity;
    }
  }
};

// round(f*n) real transitions, the rest synthetic; falls back to all-real
// while the synthetic ring is still empty.
inline std::vector<Transition> sample_batch(AugmentedBuffer& buf, int n, double real_fraction,
                                            Rng& rng) {
  if (n <= 0) throw ConfigError("sample_batch needs n > 0");
  if (buf.real->size() == 0) throw ConfigError("sample_batch on empty buffer");
  size_t n_real = static_cast<size_t>(std::lround(real_fraction * n));
  n_real = std::min<size_t>(n_real, static_cast<size_t>(n));
  if (buf.synthetic.empty()) {
    if (!buf.warned_empty_synth) {
      log_info("sample_batch: synthetic buffer empty, sampling real data only");
      buf.warned_empty_synth = true;
    }
    n_real = static_cast<size_t>(n);
  }
  std::vector<Transition> out;
  out.reserve(n);
  for (size_t i = 0; i < n_real; ++i)
    out.push_back(buf.real->transitions[rng.index(buf.real->size())]);
  for (size_t i = n_real; i < static_cast<size_t>(n); ++i)
    out.push_back(buf.synthetic[rng.index(buf.synthetic.size())]);
  return out;
}

}  // namespace mabe
