#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "vhcr/errors.hpp"
#include "vhcr/rng.hpp"
#include "vhcr/tensor.hpp"

namespace vhcr {

// Ordered, uniquely named parameter collection. Parameters are heap-allocated
// so their addresses stay stable while the store grows or moves; network blocks
// and tape leaves refer to them by address.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Parameter& add(const std::string& name, Array value) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    params_.push_back(std::make_unique<Parameter>(Parameter{name, std::move(value)}));
    index_.emplace(name, params_.size() - 1);
    slots_.emplace(params_.back().get(), params_.size() - 1);
    return *params_.back();
  }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Parameter& add_weight(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
    Array a(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : a.data) v = (2.0 * rng.uniform() - 1.0) * bound;
    return add(name, std::move(a));
  }

  Parameter& add_zeros(const std::string& name, Shape shape) { return add(name, Array(std::move(shape))); }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  const Parameter* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  Parameter* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  std::size_t slot(const Parameter& p) const {
    auto it = slots_.find(&p);
    if (it == slots_.end()) throw ContractError("parameter '" + p.name + "' is not in this store");
    return it->second;
  }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<const Parameter*, std::size_t> slots_;
};

// Per-parameter gradient accumulators aligned with a ParamStore's order.
struct Gradients {
  std::vector<Array> grads;

  explicit Gradients(const ParamStore& store) {
    grads.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) grads.emplace_back(store[i].value.shape);
  }

  // Adds every parameter adjoint found on the tape. Called once per tape, in a
  // fixed order, so the reduction is deterministic.
  void accumulate(const Tape& tape, const ParamStore& store) {
    tape.for_each_parameter([&](const Parameter& p, std::span<const double> g) {
      if (g.empty()) return;
      auto& dst = grads[store.slot(p)].data;
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    });
  }

  void zero() {
    for (auto& g : grads) std::fill(g.data.begin(), g.data.end(), 0.0);
  }

  double global_norm() const {
    double s = 0.0;
    for (const auto& g : grads)
      for (double v : g.data) s += v * v;
    return std::sqrt(s);
  }
};

}  // namespace vhcr
