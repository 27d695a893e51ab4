#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pargan/autograd.hpp"

namespace pargan {

using Rng = std::mt19937_64;

/// Ordered collection of named trainable tensors.
template <typename T>
class ParameterStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw Error(ErrorCode::config, "duplicate parameter name '" + name + "'");
    index_[name] = entries_.size();
    entries_.push_back({name, Var<T>::leaf(std::move(value), true)});
    return entries_.back().var;
  }

  /// Gaussian weights, std 0.02.
  Var<T> add_normal(const std::string& name, Shape shape, Rng& rng, double stddev = 0.02) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    return add(name, std::move(t));
  }

  /// Uniform in [-bound, bound].
  Var<T> add_uniform(const std::string& name, Shape shape, Rng& rng, double bound) {
    Tensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    return add(name, std::move(t));
  }

  Var<T> add_constant(const std::string& name, Shape shape, T value) { return add(name, Tensor<T>(std::move(shape), value)); }

  struct Entry {
    std::string name;
    Var<T> var;
  };

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Var<T> get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(ErrorCode::config, "no parameter named '" + name + "'");
    return entries_[it->second].var;
  }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::int64_t>(e.var.value().size());
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  void set_requires_grad(bool flag) {
    for (auto& e : entries_) e.var.set_requires_grad(flag);
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// FNV-1a over the raw bytes of every parameter value.
template <typename T>
std::uint64_t parameter_hash(const ParameterStore<T>& store) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& e : store.entries()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(e.var.value().data());
    for (std::size_t i = 0; i < e.var.value().size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace pargan
