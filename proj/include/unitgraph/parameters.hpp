#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "unitgraph/error.hpp"
#include "unitgraph/tensor.hpp"

namespace unitgraph {

struct Parameter {
  std::string name;
  Tensor tensor;
};

// Named learnable tensors in registration order. Names are unique.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Matrix init) {
    if (index_.count(name)) fail(errc::invalid_config, "duplicate parameter name " + name);
    index_[name] = params_.size();
    params_.push_back({name, Tensor(std::move(init), true)});
    return params_.back().tensor;
  }

  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(errc::invalid_config, "no parameter named " + name);
    return params_[it->second].tensor;
  }
  Tensor& at(const std::string& name) { return const_cast<Tensor&>(std::as_const(*this).at(name)); }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.tensor.value().size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& p : params_) out.push_back(p.tensor);
    return out;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& p : params_) out.push_back(p.name);
    return out;
  }

  // Deep copy of the current values (gradients are not copied).
  ParameterStore clone() const {
    ParameterStore out;
    for (const auto& p : params_) out.add(p.name, p.tensor.value());
    return out;
  }

  // Overwrites values from `other`; names and shapes must match exactly.
  void assign(const ParameterStore& other) {
    if (other.size() != size()) fail(errc::schema_violation, "parameter count mismatch");
    for (const auto& p : other.params_) {
      Tensor& mine = at(p.name);
      if (mine.rows() != p.tensor.rows() || mine.cols() != p.tensor.cols())
        fail(errc::schema_violation, "shape mismatch for " + p.name);
      mine.mutable_value() = p.tensor.value();
    }
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
template <typename Rng>
Matrix uniform_init(Index rows, Index cols, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoint: little-endian binary.
//
//   magic "UGCKPT\0\0", u32 version (1), u32 #params, then per parameter:
//   u32 name length, name bytes, u64 rows, u64 cols, rows*cols IEEE-754
//   doubles in row-major order.

inline constexpr std::uint32_t checkpoint_version = 1;

inline void save_parameters(const ParameterStore& store, std::ostream& out) {
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  auto put64 = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  out.write("UGCKPT\0\0", 8);
  put32(checkpoint_version);
  put32(static_cast<std::uint32_t>(store.size()));
  for (const auto& p : store.all()) {
    put32(static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put64(static_cast<std::uint64_t>(p.tensor.rows()));
    put64(static_cast<std::uint64_t>(p.tensor.cols()));
    const Matrix& v = p.tensor.value();
    for (Index i = 0; i < v.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, v.data() + i, sizeof bits);
      put64(bits);
    }
  }
}

inline ParameterStore load_parameters(std::istream& in) {
  auto get = [&](int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      const int c = in.get();
      if (c == EOF) fail(errc::truncated, "checkpoint ends early");
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
  };
  char magic[8] = {};
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "UGCKPT\0\0", 8) != 0) fail(errc::bad_magic, "not a checkpoint");
  if (get(4) != checkpoint_version) fail(errc::schema_violation, "unknown checkpoint version");
  const auto count = get(4);
  ParameterStore store;
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name(get(4), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rows = static_cast<Index>(get(8));
    const auto cols = static_cast<Index>(get(8));
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
      const std::uint64_t bits = get(8);
      std::memcpy(m.data() + i, &bits, sizeof bits);
    }
    store.add(name, std::move(m));
  }
  return store;
}

inline void save_parameters(const ParameterStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(errc::io_error, "cannot write " + path.string());
  save_parameters(store, out);
}

inline ParameterStore load_parameters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::io_error, "cannot open " + path.string());
  return load_parameters(in);
}

}  // namespace unitgraph
