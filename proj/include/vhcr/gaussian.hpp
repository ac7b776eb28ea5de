#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "vhcr/ops.hpp"
#include "vhcr/rng.hpp"

namespace vhcr {

// N(mean, diag(std^2)) with both parameters living on a tape.
struct DiagonalGaussian {
  Tensor mean;
  Tensor std;

  std::size_t dim() const { return mean.size(); }
};

// Detached copy of a DiagonalGaussian's values.
struct GaussianValues {
  std::vector<double> mean;
  std::vector<double> std;

  static GaussianValues of(const DiagonalGaussian& g) {
    auto m = g.mean.values();
    auto s = g.std.values();
    return {{m.begin(), m.end()}, {s.begin(), s.end()}};
  }
  std::size_t dim() const { return mean.size(); }
};

inline DiagonalGaussian standard_normal(Tape& tape, std::size_t dim) {
  return {tape.constant(Array(Shape{dim}, 0.0)), tape.constant(Array(Shape{dim}, 1.0))};
}

// Source of standard-normal noise for the reparameterization trick: either a
// seeded stream or all zeros (which makes every sample the distribution mean).
class NoiseSource {
 public:
  static NoiseSource zero() { return NoiseSource(); }
  static NoiseSource gaussian(std::uint64_t seed) {
    NoiseSource n;
    n.rng_.emplace(seed);
    return n;
  }

  bool is_zero() const { return !rng_.has_value(); }

  std::vector<double> draw(std::size_t n) {
    if (!rng_) return std::vector<double>(n, 0.0);
    return rng_->normals(n);
  }

 private:
  NoiseSource() = default;
  std::optional<Rng> rng_;
};

// z = mean + std * noise
inline Tensor reparameterize(const DiagonalGaussian& g, std::span<const double> noise) {
  if (noise.size() != g.dim()) {
    throw DimensionError("reparameterize: noise has " + std::to_string(noise.size()) +
                         " coordinates, distribution has " + std::to_string(g.dim()));
  }
  Tensor eps = g.mean.tape().constant(Array(Shape{noise.size()}, std::vector<double>(noise.begin(), noise.end())));
  return add(g.mean, mul(g.std, eps));
}

namespace detail {

inline void check_kl_args(std::span<const double> qm, std::span<const double> qs, std::span<const double> pm,
                          std::span<const double> ps) {
  if (qm.size() != pm.size() || qs.size() != ps.size() || qm.size() != qs.size()) {
    throw DimensionError("gaussian_kl: dimension mismatch (" + std::to_string(qm.size()) + " vs " +
                         std::to_string(pm.size()) + ")");
  }
  for (std::size_t i = 0; i < qs.size(); ++i) {
    if (!(qs[i] > 0.0) || !(ps[i] > 0.0)) {
      throw DomainError("gaussian_kl: non-positive std at coordinate " + std::to_string(i));
    }
  }
}

}  // namespace detail

// KL(q || p) = sum_i ln(p.std/q.std) + (q.std^2 + (q.mean - p.mean)^2) / (2 p.std^2) - 1/2
inline Tensor gaussian_kl(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  detail::check_kl_args(q.mean.values(), q.std.values(), p.mean.values(), p.std.values());
  Tensor diff = sub(q.mean, p.mean);
  Tensor num = add(mul(q.std, q.std), mul(diff, diff));
  Tensor den = scale(mul(p.std, p.std), 2.0);
  Tensor terms = add(sub(log(p.std), log(q.std)), div(num, den));
  return sub(sum(terms), scalar_like(terms, 0.5 * static_cast<double>(q.dim())));
}

inline double gaussian_kl(const GaussianValues& q, const GaussianValues& p) {
  detail::check_kl_args(q.mean, q.std, p.mean, p.std);
  double kl = 0.0;
  for (std::size_t i = 0; i < q.dim(); ++i) {
    const double d = q.mean[i] - p.mean[i];
    kl += std::log(p.std[i] / q.std[i]) + (q.std[i] * q.std[i] + d * d) / (2.0 * p.std[i] * p.std[i]) - 0.5;
  }
  return kl;
}

inline double log_density(const GaussianValues& g, std::span<const double> z) {
  double lp = 0.0;
  for (std::size_t i = 0; i < g.dim(); ++i) {
    const double u = (z[i] - g.mean[i]) / g.std[i];
    lp += -0.5 * u * u - std::log(g.std[i]) - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return lp;
}

}  // namespace vhcr
