#pragma once

// Reverse-mode differentiation tape over dense f64 arrays.
//
// A Tape owns every intermediate value produced during one forward pass.
// Tensor is a cheap handle (tape pointer + node index) into it. Records are
// appended in evaluation order, so the record list is already a topological
// order and backward() is a single reverse sweep.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vhcr/errors.hpp"

namespace vhcr {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Plain row-major array, the storage form for parameters, constants and results.
struct Array {
  Shape shape{0};
  std::vector<double> data;

  Array() = default;
  explicit Array(Shape s, double fill = 0.0) : shape(std::move(s)), data(numel(shape), fill) {}
  Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != data.size()) {
      throw DimensionError("array of shape " + shape_str(shape) + " given " +
                           std::to_string(data.size()) + " values");
    }
  }

  static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }
  static Array vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Array(Shape{n}, std::move(v));
  }
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Array(Shape{rows, cols}, std::move(v));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  friend bool operator==(const Array&, const Array&) = default;
};

// A named trainable array. Gradients live on the tape, not here.
struct Parameter {
  std::string name;
  Array value;
};

enum class OpKind : std::uint8_t {
  constant,
  variable,
  parameter,
  matmul,
  add,
  sub,
  mul,
  div,
  scale,
  sigmoid,
  tanh,
  softplus,
  exp,
  log,
  sum,
  concat,
  stack,
  row,
  tile_rows,
  reshape,
  embedding_lookup,
  log_softmax_nll,
  bag_of_words_nll,
};

class Tape;

class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  std::optional<std::size_t> node_id() const {
    return tape_ ? std::optional<std::size_t>(id_) : std::nullopt;
  }

  inline const Shape& shape() const;
  inline std::span<const double> values() const;
  inline bool requires_grad() const;
  std::size_t size() const { return values().size(); }
  double item() const { return values()[0]; }
  double operator[](std::size_t i) const { return values()[i]; }
  Array array() const { return Array(shape(), std::vector<double>(values().begin(), values().end())); }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Adds the adjoint contributions of record `self` into its inputs' gradients.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() { records_.reserve(512); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Array a) { return leaf(OpKind::constant, std::move(a), false, nullptr); }

  // Leaf whose gradient is read back with grad(); used for gradient checks.
  Tensor variable(Array a) { return leaf(OpKind::variable, std::move(a), true, nullptr); }

  // One leaf per parameter per tape; repeated uses share the node so adjoints accumulate.
  Tensor parameter(const Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Tensor(this, it->second);
    Tensor t = leaf(OpKind::parameter, p.value, true, &p);
    param_nodes_.emplace(&p, t.id());
    return t;
  }

  Tensor record(OpKind op, Shape shape, std::vector<double> value, std::vector<std::size_t> inputs,
                Backward fn) {
    if (backward_done_) throw ContractError("tape already consumed by backward()");
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || records_[in].requires_grad;
    Record r;
    r.op = op;
    r.shape = std::move(shape);
    r.value = std::move(value);
    r.requires_grad = needs;
    if (needs) {
      r.inputs = std::move(inputs);
      r.backward = std::move(fn);
    }
    records_.push_back(std::move(r));
    return Tensor(this, records_.size() - 1);
  }

  // Seeds d(root)/d(root) = 1 and sweeps the records once in reverse order.
  void backward(const Tensor& root) {
    if (root.tape_ != this) throw ContractError("backward: root is not on this tape");
    if (!records_[root.id_].shape.empty() && records_[root.id_].value.size() != 1) {
      throw ContractError("backward: root must be a scalar, got shape " +
                          shape_str(records_[root.id_].shape));
    }
    if (backward_done_) throw ContractError("backward: tape already consumed");
    backward_done_ = true;
    if (!records_[root.id_].requires_grad) return;
    grad_buffer(root.id_)[0] = 1.0;
    for (std::size_t i = root.id_ + 1; i-- > 0;) {
      Record& r = records_[i];
      if (!r.backward || r.grad.empty()) continue;
      r.backward(*this, i);
    }
  }

  const Shape& shape(std::size_t id) const { return records_[id].shape; }
  std::span<const double> value(std::size_t id) const { return records_[id].value; }
  bool requires_grad(std::size_t id) const { return records_[id].requires_grad; }
  OpKind op(std::size_t id) const { return records_[id].op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return records_[id].inputs; }
  std::size_t size() const { return records_.size(); }

  // Adjoint of a node; empty span when nothing reached it.
  std::span<const double> grad(std::size_t id) const { return records_[id].grad; }

  // Adjoint of a tensor materialized with the tensor's shape (zeros if unreached).
  Array grad(const Tensor& t) const {
    const Record& r = records_[t.id_];
    if (r.grad.empty()) return Array(r.shape);
    return Array(r.shape, r.grad);
  }

  // Writable adjoint for accumulation, zero-initialized on first touch.
  std::span<double> grad_buffer(std::size_t id) {
    Record& r = records_[id];
    if (r.grad.empty()) r.grad.assign(r.value.size(), 0.0);
    return r.grad;
  }

  // Visits every parameter leaf in creation order with its adjoint (possibly empty).
  template <class F>
  void for_each_parameter(F&& f) const {
    for (const Record& r : records_) {
      if (r.op == OpKind::parameter) f(*r.param, std::span<const double>(r.grad));
    }
  }

 private:
  struct Record {
    OpKind op = OpKind::constant;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
    const Parameter* param = nullptr;
  };

  Tensor leaf(OpKind op, Array a, bool requires_grad, const Parameter* p) {
    if (backward_done_) throw ContractError("tape already consumed by backward()");
    Record r;
    r.op = op;
    r.shape = std::move(a.shape);
    r.value = std::move(a.data);
    r.requires_grad = requires_grad;
    r.param = p;
    records_.push_back(std::move(r));
    return Tensor(this, records_.size() - 1);
  }

  std::vector<Record> records_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

inline const Shape& Tensor::shape() const { return tape_->shape(id_); }
inline std::span<const double> Tensor::values() const { return tape_->value(id_); }
inline bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }

}  // namespace vhcr
