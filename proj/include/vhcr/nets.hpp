#pragma once

// GRU cell and runners, bidirectional GRU, affine layers and two-layer MLPs.
// Blocks hold non-owning pointers into a ParamStore and build graph fragments
// on whatever tape they are handed.

#include <string>
#include <utility>
#include <vector>

#include "vhcr/ops.hpp"
#include "vhcr/params.hpp"

namespace vhcr {

namespace detail {

inline void expect_vector(const Tensor& t, std::size_t dim, const std::string& what) {
  if (t.shape().size() != 1 || t.shape()[0] != dim) {
    throw DimensionError(what + ": expected [" + std::to_string(dim) + "], got " + shape_str(t.shape()));
  }
}

}  // namespace detail

// x . W + b
struct Linear {
  const Parameter* weight = nullptr;  // in x out
  const Parameter* bias = nullptr;    // out
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;

  static Linear create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                       Rng& rng) {
    Linear l;
    l.weight = &store.add_weight(prefix + ".weight", {in, out}, in, rng);
    l.bias = &store.add_zeros(prefix + ".bias", {out});
    l.in_dim = in;
    l.out_dim = out;
    return l;
  }

  Tensor operator()(Tape& tape, const Tensor& x) const {
    if (x.shape().empty() || x.shape().back() != in_dim) {
      throw DimensionError(weight->name + ": input " + shape_str(x.shape()) + " does not match in_dim " +
                           std::to_string(in_dim));
    }
    return add(matmul(x, tape.parameter(*weight)), tape.parameter(*bias));
  }
};

// affine -> tanh -> affine
struct Mlp {
  Linear hidden;
  Linear output;

  static Mlp create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden_dim,
                    std::size_t out, Rng& rng) {
    return Mlp{Linear::create(store, prefix + ".0", in, hidden_dim, rng),
               Linear::create(store, prefix + ".1", hidden_dim, out, rng)};
  }

  std::size_t in_dim() const { return hidden.in_dim; }
  std::size_t out_dim() const { return output.out_dim; }
};

inline Tensor mlp_forward(Tape& tape, const Mlp& net, const Tensor& x) {
  return net.output(tape, tanh(net.hidden(tape, x)));
}

// Update/reset-gate GRU:
//   z = sigmoid(x Wz + h Uz + bz)
//   r = sigmoid(x Wr + h Ur + br)
//   c = tanh(x Wh + (r * h) Uh + bh)
//   h' = (1 - z) * h + z * c
struct GruCell {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  const Parameter *w_z = nullptr, *w_r = nullptr, *w_h = nullptr;
  const Parameter *u_z = nullptr, *u_r = nullptr, *u_h = nullptr;
  const Parameter *b_z = nullptr, *b_r = nullptr, *b_h = nullptr;

  static GruCell create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                        Rng& rng) {
    GruCell c;
    c.input_dim = in;
    c.hidden_dim = hidden;
    c.w_z = &store.add_weight(prefix + ".w_z", {in, hidden}, in, rng);
    c.w_r = &store.add_weight(prefix + ".w_r", {in, hidden}, in, rng);
    c.w_h = &store.add_weight(prefix + ".w_h", {in, hidden}, in, rng);
    c.u_z = &store.add_weight(prefix + ".u_z", {hidden, hidden}, hidden, rng);
    c.u_r = &store.add_weight(prefix + ".u_r", {hidden, hidden}, hidden, rng);
    c.u_h = &store.add_weight(prefix + ".u_h", {hidden, hidden}, hidden, rng);
    c.b_z = &store.add_zeros(prefix + ".b_z", {hidden});
    c.b_r = &store.add_zeros(prefix + ".b_r", {hidden});
    c.b_h = &store.add_zeros(prefix + ".b_h", {hidden});
    return c;
  }
};

// Input-side projections x.W for one step (or one row of a precomputed X.W).
struct GruInputProjection {
  Tensor z;
  Tensor r;
  Tensor h;
};

namespace detail {

inline Tensor gru_recurrence(Tape& tape, const GruCell& cell, const GruInputProjection& xw, const Tensor& h) {
  Tensor z = sigmoid(add(add(xw.z, matmul(h, tape.parameter(*cell.u_z))), tape.parameter(*cell.b_z)));
  Tensor r = sigmoid(add(add(xw.r, matmul(h, tape.parameter(*cell.u_r))), tape.parameter(*cell.b_r)));
  Tensor c = tanh(add(add(xw.h, matmul(mul(r, h), tape.parameter(*cell.u_h))), tape.parameter(*cell.b_h)));
  Tensor keep = sub(scalar_like(z, 1.0), z);
  return add(mul(keep, h), mul(z, c));
}

}  // namespace detail

inline Tensor gru_step(Tape& tape, const GruCell& cell, const Tensor& x, const Tensor& h) {
  if (x.shape().size() != 1 || x.shape()[0] != cell.input_dim) {
    throw DimensionError(cell.w_z->name + ": input " + shape_str(x.shape()) + " does not match input_dim " +
                         std::to_string(cell.input_dim));
  }
  if (h.shape().size() != 1 || h.shape()[0] != cell.hidden_dim) {
    throw DimensionError(cell.u_z->name + ": state " + shape_str(h.shape()) + " does not match hidden_dim " +
                         std::to_string(cell.hidden_dim));
  }
  GruInputProjection xw{matmul(x, tape.parameter(*cell.w_z)), matmul(x, tape.parameter(*cell.w_r)),
                        matmul(x, tape.parameter(*cell.w_h))};
  return detail::gru_recurrence(tape, cell, xw, h);
}

struct GruRun {
  Tensor states;  // T x hidden (invalid when T = 0)
  Tensor last;    // hidden
  std::vector<Tensor> steps;
};

// Runs the cell over the rows of `inputs` (T x input_dim). Input projections
// for all steps are computed as one matrix product; each row is bit-identical
// to the per-step product, so this equals T chained gru_step calls exactly.
inline GruRun gru_unroll(Tape& tape, const GruCell& cell, const Tensor& inputs, const Tensor& h0) {
  const Shape& s = inputs.shape();
  if (s.size() != 2 || s[1] != cell.input_dim) {
    throw DimensionError(cell.w_z->name + ": inputs " + shape_str(s) + " do not match input_dim " +
                         std::to_string(cell.input_dim));
  }
  detail::expect_vector(h0, cell.hidden_dim, cell.u_z->name + " initial state");
  GruRun run;
  run.last = h0;
  const std::size_t steps = s[0];
  if (steps == 0) return run;
  Tensor xz = matmul(inputs, tape.parameter(*cell.w_z));
  Tensor xr = matmul(inputs, tape.parameter(*cell.w_r));
  Tensor xh = matmul(inputs, tape.parameter(*cell.w_h));
  run.steps.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    GruInputProjection xw{row(xz, t), row(xr, t), row(xh, t)};
    run.last = detail::gru_recurrence(tape, cell, xw, run.last);
    run.steps.push_back(run.last);
  }
  run.states = stack(run.steps);
  return run;
}

// f^conv: forward and backward GRUs over a sequence of vectors, final states
// concatenated (forward first) and projected.
struct BiGru {
  GruCell forward;
  GruCell backward;
  Linear projection;  // 2*hidden -> out

  static BiGru create(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
                      std::size_t out, Rng& rng) {
    BiGru b;
    b.forward = GruCell::create(store, prefix + ".fwd", in, hidden, rng);
    b.backward = GruCell::create(store, prefix + ".bwd", in, hidden, rng);
    b.projection = Linear::create(store, prefix + ".proj", 2 * hidden, out, rng);
    return b;
  }
};

// Concatenated final states before projection.
inline Tensor bigru_states(Tape& tape, const BiGru& net, const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw ContractError("bigru_encode: empty conversation");
  const std::size_t hidden = net.forward.hidden_dim;
  Tensor zero = tape.constant(Array(Shape{hidden}));
  std::vector<Tensor> reversed(inputs.rbegin(), inputs.rend());
  Tensor fwd = gru_unroll(tape, net.forward, stack(inputs), zero).last;
  Tensor bwd = gru_unroll(tape, net.backward, stack(reversed), zero).last;
  return concat({fwd, bwd});
}

inline Tensor bigru_encode(Tape& tape, const BiGru& net, const std::vector<Tensor>& inputs) {
  return net.projection(tape, bigru_states(tape, net, inputs));
}

}  // namespace vhcr
