#pragma once

// Degeneracy diagnostics and likelihood estimates.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "vhcr/objective.hpp"

namespace vhcr {

inline constexpr double kVarianceRatioEpsilon = 1e-12;

struct PriorStats {
  double within_variance = 0.0;   // mean of sigma^2 over priors and dimensions
  double between_variance = 0.0;  // population variance of mu across priors, averaged over dimensions
  double ratio = 0.0;             // within / (between + 1e-12)
  bool degenerate_between = false;
};

// E[sigma^2] / Var(mu) over a population of conditional priors.
inline PriorStats prior_variance_ratio(std::span<const GaussianValues> priors) {
  if (priors.size() < 2) throw ContractError("prior_variance_ratio: need at least 2 priors");
  const std::size_t dim = priors[0].dim();
  for (const auto& p : priors) {
    if (p.dim() != dim) throw DimensionError("prior_variance_ratio: priors differ in dimension");
  }
  const double n = static_cast<double>(priors.size());
  double within = 0.0;
  double between = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    double mean = 0.0;
    for (const auto& p : priors) {
      mean += p.mean[d];
      within += p.std[d] * p.std[d];
    }
    mean /= n;
    double var = 0.0;
    for (const auto& p : priors) var += (p.mean[d] - mean) * (p.mean[d] - mean);
    between += var / n;
  }
  PriorStats s;
  s.within_variance = within / (n * static_cast<double>(dim));
  s.between_variance = between / static_cast<double>(dim);
  s.ratio = s.within_variance / (s.between_variance + kVarianceRatioEpsilon);
  s.degenerate_between = s.between_variance <= kVarianceRatioEpsilon;
  return s;
}

// Every conditional prior produced over one drop-free pass of a split.
inline std::vector<GaussianValues> collect_priors(const Model& m, const std::vector<Conversation>& split,
                                                  std::uint64_t seed) {
  if (!m.config().has_latent()) throw UnsupportedKindError("collect_priors: HRED has no priors");
  std::vector<GaussianValues> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    Tape tape;
    NoiseSource noise = NoiseSource::gaussian(evaluation_noise_seed(seed, i));
    ForwardTrace trace = forward_conversation(tape, m, split[i], DropPlan{}, noise);
    for (const auto& s : trace.steps) out.push_back(GaussianValues::of(*s.prior));
  }
  return out;
}

struct KlDecomposition {
  double total = 0.0;
  double conv = 0.0;
  double utt = 0.0;
};

// Per-word split of the KL term into its z^conv and z^utt parts.
inline KlDecomposition kl_decomposition(const LossTotals& totals, ModelKind kind) {
  if (kind == ModelKind::hred) throw UnsupportedKindError("kl_decomposition: HRED has no KL term");
  const LossBreakdown b = totals.breakdown(1.0);
  return {b.kl_conv_per_word + b.kl_utt_per_word, b.kl_conv_per_word, b.kl_utt_per_word};
}

inline KlDecomposition kl_decomposition(const Model& m, const std::vector<Conversation>& split, std::uint64_t seed) {
  if (m.kind() == ModelKind::hred) throw UnsupportedKindError("kl_decomposition: HRED has no KL term");
  return kl_decomposition(evaluate_bound(m, split, seed), m.kind());
}

struct NllEstimate {
  double nll_per_word = 0.0;     // importance-weighted estimate
  double standard_error = 0.0;   // delta-method standard error, per word
  double bound_per_word = 0.0;   // lambda = 1 variational bound averaged over the same samples
  std::size_t words = 0;
  std::size_t samples = 0;
};

namespace detail {

struct ImportanceSamples {
  std::vector<double> log_weights;  // log p(x, z) - log q(z | x)
  std::vector<double> bounds;       // recon + analytic KL per sample
};

inline ImportanceSamples importance_samples(const Model& m, const Conversation& conv, std::size_t k,
                                            std::uint64_t seed) {
  ImportanceSamples out;
  const bool latent = m.config().has_latent();
  const std::size_t draws = latent ? k : 1;
  for (std::size_t s = 0; s < draws; ++s) {
    Tape tape;
    NoiseSource noise = NoiseSource::gaussian(mix_seed(seed, s));
    ForwardTrace trace = forward_conversation(tape, m, conv, DropPlan{}, noise);
    LossTotals totals = step_loss(tape, m, trace, 1.0, 0).totals;
    double lw = -totals.recon;
    for (const auto& st : trace.steps) {
      if (!st.z_utt) continue;
      const auto z = st.z_utt->values();
      lw += log_density(GaussianValues::of(*st.prior), z) - log_density(GaussianValues::of(*st.posterior), z);
    }
    if (trace.z_conv) {
      const auto z = trace.z_conv->values();
      lw += log_density(GaussianValues::of(*trace.conv_prior), z) -
            log_density(GaussianValues::of(*trace.conv_posterior), z);
    }
    out.log_weights.push_back(lw);
    out.bounds.push_back(totals.recon + totals.kl_conv + totals.kl_utt);
  }
  return out;
}

}  // namespace detail

// -log (1/K sum_k p(x, z_k) / q(z_k | x)) per word, z_k drawn from the
// posterior; exact teacher-forced NLL for HRED.
inline NllEstimate estimate_nll(const Model& m, const Conversation& conv, std::size_t num_samples,
                                std::uint64_t seed) {
  if (num_samples == 0) throw ContractError("estimate_nll: need at least one importance sample");
  const auto is = detail::importance_samples(m, conv, num_samples, seed);
  const std::size_t k = is.log_weights.size();
  const double mx = *std::max_element(is.log_weights.begin(), is.log_weights.end());
  double mean_w = 0.0;
  for (double lw : is.log_weights) mean_w += std::exp(lw - mx);
  mean_w /= static_cast<double>(k);
  double var_w = 0.0;
  for (double lw : is.log_weights) var_w += (std::exp(lw - mx) - mean_w) * (std::exp(lw - mx) - mean_w);
  var_w = k > 1 ? var_w / static_cast<double>(k - 1) : 0.0;

  NllEstimate e;
  e.words = target_word_count(m.config(), conv);
  e.samples = k;
  const double w = static_cast<double>(e.words);
  e.nll_per_word = -(mx + std::log(mean_w)) / w;
  e.standard_error = std::sqrt(var_w / static_cast<double>(k)) / mean_w / w;
  double bound = 0.0;
  for (double b : is.bounds) bound += b;
  e.bound_per_word = bound / static_cast<double>(k) / w;
  return e;
}

// Word-weighted corpus aggregate; standard errors combine in quadrature.
inline NllEstimate estimate_nll(const Model& m, const std::vector<Conversation>& split, std::size_t num_samples,
                                std::uint64_t seed) {
  NllEstimate total;
  double nll = 0.0;
  double bound = 0.0;
  double var = 0.0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    NllEstimate e = estimate_nll(m, split[i], num_samples, mix_seed(seed, i));
    const double w = static_cast<double>(e.words);
    nll += e.nll_per_word * w;
    bound += e.bound_per_word * w;
    var += (e.standard_error * w) * (e.standard_error * w);
    total.words += e.words;
    total.samples = e.samples;
  }
  if (total.words == 0) throw ContractError("estimate_nll: empty split");
  const double w = static_cast<double>(total.words);
  total.nll_per_word = nll / w;
  total.bound_per_word = bound / w;
  total.standard_error = std::sqrt(var) / w;
  return total;
}

// Summary of a KL trajectory (one column of the training metric log).
struct TrajectorySummary {
  double first = 0.0;
  double last = 0.0;
  double min = 0.0;
  double last_quartile_slope = 0.0;  // least-squares slope over the final quarter of points
  std::size_t points = 0;
};

inline TrajectorySummary summarize_trajectory(std::span<const double> steps, std::span<const double> values) {
  if (steps.size() != values.size() || values.empty()) {
    throw ContractError("summarize_trajectory: need equally sized, non-empty step/value columns");
  }
  TrajectorySummary s;
  s.points = values.size();
  s.first = values.front();
  s.last = values.back();
  s.min = *std::min_element(values.begin(), values.end());
  if (values.size() < 2) return s;
  const std::size_t start = values.size() - std::max<std::size_t>(2, values.size() / 4);
  double mx = 0.0, my = 0.0;
  const double n = static_cast<double>(values.size() - start);
  for (std::size_t i = start; i < values.size(); ++i) {
    mx += steps[i];
    my += values[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = start; i < values.size(); ++i) {
    sxy += (steps[i] - mx) * (values[i] - my);
    sxx += (steps[i] - mx) * (steps[i] - mx);
  }
  s.last_quartile_slope = sxx > 0 ? sxy / sxx : 0.0;
  return s;
}

}  // namespace vhcr
