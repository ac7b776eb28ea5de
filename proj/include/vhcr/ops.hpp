#pragma once

// Differentiable primitives. Every op computes its value eagerly and, when any
// input requires a gradient, records a closure applying the adjoint rule.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "vhcr/tensor.hpp"

namespace vhcr {

using TokenId = std::uint32_t;

namespace detail {

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

// Only trailing-dimension broadcast: one operand's shape must be a suffix of the other's.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b || is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
}

inline void same_tape(const Tensor& a, const Tensor& b, const char* op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
}

// f(x, y) with partials dx(x, y, out) and dy(x, y, out).
template <class F, class Dx, class Dy>
Tensor binary(OpKind kind, const char* name, const Tensor& a, const Tensor& b, F f, Dx dx, Dy dy) {
  same_tape(a, b, name);
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  auto av = a.values();
  auto bv = b.values();
  const std::size_t n = numel(out_shape);
  const std::size_t na = av.size();
  const std::size_t nb = bv.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % na], bv[i % nb]);
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(kind, std::move(out_shape), std::move(out), {ia, ib},
                         [ia, ib, dx, dy](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           auto y = t.value(self);
                           auto x0 = t.value(ia);
                           auto x1 = t.value(ib);
                           const std::size_t n0 = x0.size();
                           const std::size_t n1 = x1.size();
                           if (t.requires_grad(ia)) {
                             auto ga = t.grad_buffer(ia);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               ga[i % n0] += g[i] * dx(x0[i % n0], x1[i % n1], y[i]);
                           }
                           if (t.requires_grad(ib)) {
                             auto gb = t.grad_buffer(ib);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               gb[i % n1] += g[i] * dy(x0[i % n0], x1[i % n1], y[i]);
                           }
                         });
}

// f(x) with derivative d(x, out).
template <class F, class D>
Tensor unary(OpKind kind, const Tensor& a, F f, D d) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  const std::size_t ia = a.id();
  return a.tape().record(kind, a.shape(), std::move(out), {ia}, [ia, d](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto y = t.value(self);
    auto x = t.value(ia);
    auto ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * d(x[i], y[i]);
  });
}

inline double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// (m x k) . (k x n) -> (m x n); a rank-1 left operand is treated as a single row.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::same_tape(a, b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.empty() || as.size() > 2 || bs.size() != 2 || as.back() != bs[0]) {
    throw DimensionError("matmul: cannot multiply " + shape_str(as) + " by " + shape_str(bs));
  }
  const std::size_t m = as.size() == 2 ? as[0] : 1;
  const std::size_t k = bs[0];
  const std::size_t n = bs[1];
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += x * brow[j];
    }
  }
  Shape out_shape = as.size() == 2 ? Shape{m, n} : Shape{n};
  const std::size_t ia = a.id();
  const std::size_t ib = b.id();
  return a.tape().record(OpKind::matmul, std::move(out_shape), std::move(out), {ia, ib},
                         [ia, ib, m, k, n](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           auto av = t.value(ia);
                           auto bv = t.value(ib);
                           if (t.requires_grad(ia)) {
                             auto ga = t.grad_buffer(ia);  // g . b^T
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 double s = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
                                 ga[i * k + p] += s;
                               }
                           }
                           if (t.requires_grad(ib)) {
                             auto gb = t.grad_buffer(ib);  // a^T . g
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 const double x = av[i * k + p];
                                 for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += x * g[i * n + j];
                               }
                           }
                         });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      OpKind::add, "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      OpKind::sub, "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      OpKind::mul, "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  for (double y : b.values()) {
    if (y == 0.0) throw DomainError("div: division by zero");
  }
  return detail::binary(
      OpKind::div, "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary(
      OpKind::scale, a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(OpKind::sigmoid, a, detail::stable_sigmoid,
                       [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      OpKind::tanh, a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

// max(x, 0) + ln(1 + e^-|x|): no overflow for large |x|.
inline Tensor softplus(const Tensor& a) {
  return detail::unary(OpKind::softplus, a, detail::stable_softplus,
                       [](double x, double) { return detail::stable_sigmoid(x); });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      OpKind::exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  auto v = a.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0)) {
      throw DomainError("log: non-positive argument " + std::to_string(v[i]) + " at index " +
                        std::to_string(i));
    }
  }
  return detail::unary(
      OpKind::log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::sum, Shape{}, {s}, {ia}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& x : t.grad_buffer(ia)) x += g;
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  auto v = a.values();
  const std::size_t ia = a.id();
  return a.tape().record(OpKind::reshape, std::move(shape), std::vector<double>(v.begin(), v.end()),
                         {ia}, [ia](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           auto ga = t.grad_buffer(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                         });
}

// Concatenation along `axis`; all other dimensions must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis = 0) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    detail::same_tape(parts[0], p, "concat");
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " does not match " + shape_str(first));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<std::size_t> ids;
  std::vector<std::size_t> blocks;
  for (const Tensor& p : parts) {
    ids.push_back(p.id());
    blocks.push_back(p.shape()[axis] * inner);
  }
  const std::size_t row = out_shape[axis] * inner;
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data() + o * blocks[k], blocks[k], out.data() + o * row + offset);
    offset += blocks[k];
  }
  return parts[0].tape().record(OpKind::concat, std::move(out_shape), std::move(out), ids,
                                [ids, blocks, outer, row](Tape& t, std::size_t self) {
                                  auto g = t.grad(self);
                                  std::size_t offset = 0;
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    if (t.requires_grad(ids[k])) {
                                      auto gk = t.grad_buffer(ids[k]);
                                      for (std::size_t o = 0; o < outer; ++o)
                                        for (std::size_t i = 0; i < blocks[k]; ++i)
                                          gk[o * blocks[k] + i] += g[o * row + offset + i];
                                    }
                                    offset += blocks[k];
                                  }
                                });
}

// Stacks equally shaped tensors along a new leading axis.
inline Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("stack: no inputs");
  const Shape& first = parts[0].shape();
  const std::size_t block = numel(first);
  std::vector<std::size_t> ids;
  std::vector<double> out;
  out.reserve(block * parts.size());
  for (const Tensor& p : parts) {
    detail::same_tape(parts[0], p, "stack");
    if (p.shape() != first) throw DimensionError("stack: " + shape_str(p.shape()) + " vs " + shape_str(first));
    ids.push_back(p.id());
    auto v = p.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  Shape out_shape{parts.size()};
  out_shape.insert(out_shape.end(), first.begin(), first.end());
  return parts[0].tape().record(OpKind::stack, std::move(out_shape), std::move(out), ids,
                                [ids, block](Tape& t, std::size_t self) {
                                  auto g = t.grad(self);
                                  for (std::size_t k = 0; k < ids.size(); ++k) {
                                    if (!t.requires_grad(ids[k])) continue;
                                    auto gk = t.grad_buffer(ids[k]);
                                    for (std::size_t i = 0; i < block; ++i) gk[i] += g[k * block + i];
                                  }
                                });
}

// Leading-axis slice a[index].
inline Tensor row(const Tensor& a, std::size_t index) {
  const Shape& s = a.shape();
  if (s.empty() || index >= s[0]) {
    throw DimensionError("row: index " + std::to_string(index) + " out of range for " + shape_str(s));
  }
  Shape out_shape(s.begin() + 1, s.end());
  const std::size_t block = numel(out_shape);
  auto v = a.values();
  const std::size_t ia = a.id();
  return a.tape().record(
      OpKind::row, std::move(out_shape),
      std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(index * block),
                          v.begin() + static_cast<std::ptrdiff_t>((index + 1) * block)),
      {ia}, [ia, index, block](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        auto ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < block; ++i) ga[index * block + i] += g[i];
      });
}

// (d) -> (n x d), every row a copy of v.
inline Tensor tile_rows(const Tensor& v, std::size_t n) {
  if (v.shape().size() != 1) throw DimensionError("tile_rows: expected a vector, got " + shape_str(v.shape()));
  const std::size_t d = v.size();
  auto vals = v.values();
  std::vector<double> out;
  out.reserve(n * d);
  for (std::size_t r = 0; r < n; ++r) out.insert(out.end(), vals.begin(), vals.end());
  const std::size_t iv = v.id();
  return v.tape().record(OpKind::tile_rows, Shape{n, d}, std::move(out), {iv},
                         [iv, n, d](Tape& t, std::size_t self) {
                           auto g = t.grad(self);
                           auto gv = t.grad_buffer(iv);
                           for (std::size_t r = 0; r < n; ++r)
                             for (std::size_t j = 0; j < d; ++j) gv[j] += g[r * d + j];
                         });
}

// Row gather from a (V x d) table; the adjoint scatter-adds back into the table.
inline Tensor embedding_lookup(const Tensor& table, std::span<const TokenId> ids) {
  const Shape& s = table.shape();
  if (s.size() != 2) throw DimensionError("embedding_lookup: table must be 2-D, got " + shape_str(s));
  const std::size_t vocab = s[0];
  const std::size_t d = s[1];
  auto tv = table.values();
  std::vector<double> out;
  out.reserve(ids.size() * d);
  for (TokenId id : ids) {
    if (id >= vocab) {
      throw RangeError("embedding_lookup: id " + std::to_string(id) + " >= vocabulary size " +
                       std::to_string(vocab));
    }
    out.insert(out.end(), tv.begin() + static_cast<std::ptrdiff_t>(id * d),
               tv.begin() + static_cast<std::ptrdiff_t>((id + 1) * d));
  }
  const std::size_t it = table.id();
  return table.tape().record(OpKind::embedding_lookup, Shape{ids.size(), d}, std::move(out), {it},
                             [it, d, idv = std::vector<TokenId>(ids.begin(), ids.end())](
                                 Tape& t, std::size_t self) {
                               auto g = t.grad(self);
                               auto gt = t.grad_buffer(it);
                               for (std::size_t r = 0; r < idv.size(); ++r)
                                 for (std::size_t j = 0; j < d; ++j) gt[idv[r] * d + j] += g[r * d + j];
                             });
}

// -sum_t mask_t * log softmax(logits_t)[target_t] over a (T x V) logit matrix
// (a rank-1 input is one row). Rows are max-shifted before exponentiation.
inline Tensor log_softmax_nll(const Tensor& logits, std::span<const TokenId> targets,
                              std::span<const std::uint8_t> mask) {
  const Shape& s = logits.shape();
  if (s.empty() || s.size() > 2) throw DimensionError("log_softmax_nll: logits must be 1-D or 2-D");
  const std::size_t rows = s.size() == 2 ? s[0] : 1;
  const std::size_t vocab = s.back();
  if (targets.size() != rows || mask.size() != rows) {
    throw DimensionError("log_softmax_nll: " + std::to_string(rows) + " logit rows but " +
                         std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) +
                         " mask entries");
  }
  auto x = logits.values();
  std::vector<double> probs(x.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] >= vocab) {
      throw RangeError("log_softmax_nll: target " + std::to_string(targets[r]) + " >= " +
                       std::to_string(vocab) + " classes");
    }
    const double* xr = x.data() + r * vocab;
    const double mx = *std::max_element(xr, xr + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(xr[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < vocab; ++j) probs[r * vocab + j] = std::exp(xr[j] - lse);
    if (mask[r]) loss += lse - xr[targets[r]];
  }
  const std::size_t il = logits.id();
  return logits.tape().record(
      OpKind::log_softmax_nll, Shape{}, {loss}, {il},
      [il, rows, vocab, probs = std::move(probs), tg = std::vector<TokenId>(targets.begin(), targets.end()),
       mk = std::vector<std::uint8_t>(mask.begin(), mask.end())](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        auto gl = t.grad_buffer(il);
        for (std::size_t r = 0; r < rows; ++r) {
          if (!mk[r]) continue;
          for (std::size_t j = 0; j < vocab; ++j) gl[r * vocab + j] += g * probs[r * vocab + j];
          gl[r * vocab + tg[r]] -= g;
        }
      });
}

// -sum_t log softmax(logits)[w_t] for one logit vector scored against a bag of targets.
inline Tensor bag_of_words_nll(const Tensor& logits, std::span<const TokenId> targets) {
  if (logits.shape().size() != 1) throw DimensionError("bag_of_words_nll: logits must be a vector");
  const std::size_t vocab = logits.size();
  auto x = logits.values();
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  std::vector<double> counts(vocab, 0.0);
  double loss = 0.0;
  for (TokenId w : targets) {
    if (w >= vocab) throw RangeError("bag_of_words_nll: target " + std::to_string(w) + " out of range");
    loss += lse - x[w];
    counts[w] += 1.0;
  }
  std::vector<double> probs(vocab);
  for (std::size_t j = 0; j < vocab; ++j) probs[j] = std::exp(x[j] - lse);
  const double total = static_cast<double>(targets.size());
  const std::size_t il = logits.id();
  return logits.tape().record(OpKind::bag_of_words_nll, Shape{}, {loss}, {il},
                              [il, total, probs = std::move(probs), counts = std::move(counts)](
                                  Tape& t, std::size_t self) {
                                const double g = t.grad(self)[0];
                                auto gl = t.grad_buffer(il);
                                for (std::size_t j = 0; j < probs.size(); ++j)
                                  gl[j] += g * (total * probs[j] - counts[j]);
                              });
}

// Convenience: a constant scalar on the same tape as `like`.
inline Tensor scalar_like(const Tensor& like, double v) { return like.tape().constant(Array::scalar(v)); }

}  // namespace vhcr
