#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "capellm/core/autograd.hpp"

namespace capellm {

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  bool trainable = true;

  const Tensor<T>& value() const { return var.value(); }
  Tensor<T>& mutable_value() { return var.mutable_value(); }
  std::size_t numel() const { return var.value().size(); }
};

// Named, insertion-ordered parameter collection. Names are unique.
template <typename T>
class ParameterSet {
 public:
  Var<T> add(const std::string& name, Tensor<T> init, bool trainable = true) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_[name] = params_.size();
    params_.push_back({name, Var<T>::leaf(std::move(init), trainable), trainable});
    return params_.back().var;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Parameter<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return params_[it->second];
  }
  const Parameter<T>& get(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->get(name);
  }

  void set_trainable(Parameter<T>& p, bool trainable) {
    p.trainable = trainable;
    p.var.set_requires_grad(trainable);
  }
  void set_all_trainable(bool trainable) {
    for (auto& p : params_) set_trainable(p, trainable);
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.trainable ? p.numel() : 0;
    return n;
  }
  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

// Normal(0, sigma) truncated to +-2 sigma by resampling.
template <typename T>
Tensor<T> truncated_normal(std::vector<int> shape, double sigma, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, sigma);
  for (auto& v : t.values()) {
    double s;
    do {
      s = dist(rng);
    } while (std::abs(s) > 2.0 * sigma);
    v = static_cast<T>(s);
  }
  return t;
}

}  // namespace capellm
