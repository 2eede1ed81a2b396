#pragma once

// "MABM" checkpoint container: little-endian f64 named arrays plus string
// metadata. Dynamics ensembles, priors, dataset Q-functions, and policies
// all serialize through this one format.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mabe/core.hpp"
#include "mabe/mlp.hpp"

namespace mabe {

struct Checkpoint {
  std::string kind;
  std::map<std::string, std::string> meta;
  std::map<std::string, Vec> arrays;

  void put(const std::string& name, const Vec& v) { arrays[name] = v; }

  const Vec& get(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw IoError("checkpoint array missing: " + name);
    return it->second;
  }

  std::string meta_or(const std::string& key, const std::string& dflt) const {
    auto it = meta.find(key);
    return it == meta.end() ? dflt : it->second;
  }
};

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64(std::ostream& os, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  write_u64(os, u);
}

inline void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw IoError(std::string("truncated file while reading ") + what);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

inline uint64_t read_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw IoError(std::string("truncated file while reading ") + what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double read_f64(std::istream& is, const char* what) {
  uint64_t u = read_u64(is, what);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

inline std::string read_str(std::istream& is, const char* what) {
  uint32_t n = read_u32(is, what);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n))
    throw IoError(std::string("truncated file while reading ") + what);
  return s;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write("MABM", 4);
  detail::write_u32(os, 1);  // version
  detail::write_str(os, ck.kind);
  detail::write_u32(os, static_cast<uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    detail::write_str(os, k);
    detail::write_str(os, v);
  }
  detail::write_u32(os, static_cast<uint32_t>(ck.arrays.size()));
  for (const auto& [name, data] : ck.arrays) {
    detail::write_str(os, name);
    detail::write_u64(os, data.size());
    for (double v : data) detail::write_f64(os, v);
  }
  if (!os) throw IoError("write failed: " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4)) throw IoError("truncated file while reading magic: " + path);
  if (std::memcmp(magic, "MABM", 4) != 0) throw IoError("bad magic in " + path);
  uint32_t version = detail::read_u32(is, "version");
  if (version != 1) throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.kind = detail::read_str(is, "kind");
  uint32_t nmeta = detail::read_u32(is, "meta count");
  for (uint32_t i = 0; i < nmeta; ++i) {
    std::string k = detail::read_str(is, "meta key");
    ck.meta[k] = detail::read_str(is, "meta value");
  }
  uint32_t narr = detail::read_u32(is, "array count");
  for (uint32_t i = 0; i < narr; ++i) {
    std::string name = detail::read_str(is, "array name");
    uint64_t n = detail::read_u64(is, "array length");
    Vec data(n);
    for (uint64_t j = 0; j < n; ++j) data[j] = detail::read_f64(is, "array data");
    ck.arrays[name] = std::move(data);
  }
  return ck;
}

// --- MLP <-> checkpoint array glue ---

inline void pack_mlp(Checkpoint& ck, const std::string& prefix, const MlpParams& p) {
  ck.meta[prefix + ".layers"] = std::to_string(p.layers.size());
  ck.meta[prefix + ".head"] = p.head == Head::Gaussian ? "gaussian" : "linear";
  for (size_t i = 0; i < p.layers.size(); ++i) {
    const auto& l = p.layers[i];
    ck.meta[prefix + ".w" + std::to_string(i) + ".rows"] = std::to_string(l.w.rows);
    ck.meta[prefix + ".w" + std::to_string(i) + ".cols"] = std::to_string(l.w.cols);
    ck.put(prefix + ".w" + std::to_string(i), l.w.a);
    ck.put(prefix + ".b" + std::to_string(i), l.b);
  }
}

inline MlpParams unpack_mlp(const Checkpoint& ck, const std::string& prefix) {
  MlpParams p;
  const int n = std::stoi(ck.meta_or(prefix + ".layers", "0"));
  if (n <= 0) throw IoError("checkpoint has no layers under " + prefix);
  p.head = ck.meta_or(prefix + ".head", "linear") == "gaussian" ? Head::Gaussian : Head::Linear;
  for (int i = 0; i < n; ++i) {
    MlpParams::Layer l;
    l.w.rows = std::stoi(ck.meta_or(prefix + ".w" + std::to_string(i) + ".rows", "0"));
    l.w.cols = std::stoi(ck.meta_or(prefix + ".w" + std::to_string(i) + ".cols", "0"));
    l.w.a = ck.get(prefix + ".w" + std::to_string(i));
    l.b = ck.get(prefix + ".b" + std::to_string(i));
    if (static_cast<size_t>(l.w.rows) * l.w.cols != l.w.a.size())
      throw IoError("checkpoint weight shape mismatch under " + prefix);
    p.layers.push_back(std::move(l));
  }
  check_shape(p);
  return p;
}

}  // namespace mabe
