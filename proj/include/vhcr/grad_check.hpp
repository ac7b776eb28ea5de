#pragma once

// Central-difference verification of tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "vhcr/ops.hpp"
#include "vhcr/params.hpp"

namespace vhcr {

using TensorFunction = std::function<Tensor(Tape&, const Tensor&)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_coordinate = 0;
  Array analytic;
  Array numeric;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace detail {

inline double scalar_value(const Tensor& t, std::size_t coordinate) {
  if (t.size() != 1) throw ContractError("grad_check: function must be scalar-valued");
  const double v = t.item();
  if (!std::isfinite(v)) {
    throw NumericError("grad_check: non-finite function value perturbing coordinate " +
                           std::to_string(coordinate),
                       coordinate);
  }
  return v;
}

}  // namespace detail

// max_i |analytic_i - numeric_i| / max(1e-8, |analytic_i| + |numeric_i|).
inline GradCheckReport grad_check_report(const TensorFunction& f, const Array& point, double epsilon = 1e-4) {
  GradCheckReport report;
  {
    Tape tape;
    Tensor x = tape.variable(point);
    Tensor y = f(tape, x);
    detail::scalar_value(y, NumericError::npos);
    tape.backward(y);
    report.analytic = tape.grad(x);
  }
  report.numeric = Array(point.shape);
  for (std::size_t i = 0; i < point.size(); ++i) {
    if (!std::isfinite(report.analytic[i])) {
      throw NumericError("grad_check: non-finite analytic gradient at coordinate " + std::to_string(i), i);
    }
    auto eval = [&](double delta) {
      Array p = point;
      p[i] += delta;
      Tape tape;
      return detail::scalar_value(f(tape, tape.constant(std::move(p))), i);
    };
    report.numeric[i] = (eval(epsilon) - eval(-epsilon)) / (2.0 * epsilon);
    const double err = relative_error(report.analytic[i], report.numeric[i]);
    if (err > report.max_relative_error || i == 0) {
      report.max_relative_error = err;
      report.worst_coordinate = i;
    }
  }
  return report;
}

inline double grad_check(const TensorFunction& f, const Array& point, double epsilon = 1e-4) {
  return grad_check_report(f, point, epsilon).max_relative_error;
}

// Same check over every coordinate of every parameter in a store. The loss
// closure builds its graph from the store's current values.
struct ParamCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

inline ParamCheckReport grad_check_parameters(ParamStore& store, const std::function<Tensor(Tape&)>& loss,
                                              double epsilon = 1e-4) {
  Gradients analytic(store);
  {
    Tape tape;
    Tensor y = loss(tape);
    detail::scalar_value(y, NumericError::npos);
    tape.backward(y);
    analytic.accumulate(tape, store);
  }
  ParamCheckReport report;
  for (std::size_t k = 0; k < store.size(); ++k) {
    Parameter& p = store[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      auto eval = [&](double delta) {
        p.value[i] = saved + delta;
        Tape tape;
        return detail::scalar_value(loss(tape), report.coordinates);
      };
      const double plus = eval(epsilon);
      const double minus = eval(-epsilon);
      p.value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double err = relative_error(analytic.grads[k][i], numeric);
      if (err > report.max_relative_error || report.coordinates == 0) {
        report.max_relative_error = err;
        report.worst_parameter = p.name;
        report.worst_index = i;
      }
      ++report.coordinates;
    }
  }
  return report;
}

}  // namespace vhcr
