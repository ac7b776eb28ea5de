#pragma once

// Adam with global-norm clipping and the seeded step/epoch loop.

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vhcr/diagnostics.hpp"
#include "vhcr/objective.hpp"
#include "vhcr/params.hpp"

namespace vhcr {

struct TrainConfig {
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
  std::size_t kl_anneal_steps = 2000;
  double word_drop_p = 0.0;
  double utterance_drop_p = 0.0;
  int bow_weight = 0;
  std::size_t batch_size = 16;
  std::size_t max_steps = 1000;
  std::uint64_t seed = 1;
  std::size_t early_stop_patience = 3;  // epochs; 0 disables
  std::size_t diag_every = 0;           // steps between prior-ratio rows; 0 disables

  void validate() const {
    auto prob = [](double p, const char* what) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1]");
    };
    prob(word_drop_p, "word_drop_p");
    prob(utterance_drop_p, "utterance_drop_p");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
    if (kl_anneal_steps == 0) throw ConfigError("kl_anneal_steps must be positive");
    if (bow_weight != 0 && bow_weight != 1) throw ConfigError("bow_weight must be 0 or 1");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

struct AdamState {
  std::vector<Array> m;
  std::vector<Array> v;
  std::size_t step = 0;

  static AdamState for_store(const ParamStore& store) {
    AdamState s;
    for (std::size_t i = 0; i < store.size(); ++i) {
      s.m.emplace_back(store[i].value.shape);
      s.v.emplace_back(store[i].value.shape);
    }
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Rescales so the global norm is at most clip_norm; returns the norm before clipping.
inline double clip_gradients(Gradients& grads, double clip_norm) {
  const double norm = grads.global_norm();
  if (norm > clip_norm) {
    const double s = clip_norm / norm;
    for (auto& g : grads.grads)
      for (double& x : g.data) x *= s;
  }
  return norm;
}

// Clip, then one bias-corrected Adam update. Returns the pre-clip norm.
inline double adam_step(ParamStore& store, Gradients& grads, AdamState& state, double lr, double clip_norm) {
  if (grads.grads.size() != store.size() || state.m.size() != store.size()) {
    throw DimensionError("adam_step: gradient/optimizer state does not match the parameter set");
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (grads.grads[i].shape != store[i].value.shape) {
      throw DimensionError("adam_step: gradient shape mismatch for '" + store[i].name + "'");
    }
    for (std::size_t j = 0; j < grads.grads[i].data.size(); ++j) {
      if (!std::isfinite(grads.grads[i].data[j])) {
        throw NumericError("adam_step: non-finite gradient in '" + store[i].name + "'", j);
      }
    }
  }
  const double norm = clip_gradients(grads, clip_norm);
  ++state.step;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& w = store[i].value.data;
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    const auto& g = grads.grads[i].data;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g[j];
      v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + kAdamEpsilon);
    }
  }
  return norm;
}

struct MetricRow {
  std::size_t step = 0;  // optimizer steps completed, this one included
  double lambda = 0.0;
  double recon_per_word = 0.0;
  double kl_conv_per_word = 0.0;
  double kl_utt_per_word = 0.0;
  std::optional<double> val_bound;
};

struct DiagnosticRow {
  std::size_t step = 0;
  PriorStats stats;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kMetricCsvHeader = "step,lambda,recon_per_word,kl_conv_per_word,kl_utt_per_word,val_bound";
inline constexpr const char* kDiagnosticCsvHeader = "step,within_variance,between_variance,ratio";

inline void write_metric_row(std::ostream& out, const MetricRow& r) {
  out << r.step << ',' << format_double(r.lambda) << ',' << format_double(r.recon_per_word) << ','
      << format_double(r.kl_conv_per_word) << ',' << format_double(r.kl_utt_per_word) << ',';
  if (r.val_bound) out << format_double(*r.val_bound);
  out << '\n';
}

inline void write_diagnostic_row(std::ostream& out, const DiagnosticRow& r) {
  out << r.step << ',' << format_double(r.stats.within_variance) << ',' << format_double(r.stats.between_variance)
      << ',' << format_double(r.stats.ratio) << '\n';
}

// Everything besides the parameters that a resumed run needs.
struct TrainState {
  std::size_t step = 0;
  Rng master;
  AdamState adam;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
  bool stopped = false;
};

inline TrainState initial_train_state(const ParamStore& store, std::uint64_t seed) {
  TrainState s;
  s.master = Rng(mix_seed(seed, 0x7A1A));
  s.adam = AdamState::for_store(store);
  return s;
}

class Trainer {
 public:
  Trainer(Model& model, std::vector<Conversation> train, std::vector<Conversation> valid, TrainConfig cfg)
      : model_(model), train_(std::move(train)), valid_(std::move(valid)), cfg_(std::move(cfg)),
        state_(initial_train_state(model.params(), cfg_.seed)) {
    cfg_.validate();
    if (train_.empty()) throw ContractError("Trainer: empty training split");
  }

  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  std::size_t steps_per_epoch() const { return (train_.size() + cfg_.batch_size - 1) / cfg_.batch_size; }

  // Called after a validation pass improves the best bound.
  std::function<void(const TrainState&)> on_best;

  // One optimizer step; validation (and early stopping) runs when it closes an epoch.
  MetricRow step() {
    const std::size_t spe = steps_per_epoch();
    const std::size_t epoch = state_.step / spe;
    if (epoch != cached_epoch_) {
      batches_ = make_batches(train_, cfg_.batch_size, mix_seed(cfg_.seed, epoch));
      cached_epoch_ = epoch;
    }
    const Batch& batch = batches_[state_.step % spe];
    const double lambda = kl_anneal(state_.step, cfg_.kl_anneal_steps);
    const std::uint64_t step_seed = state_.master.next_u64();
    const ModelConfig& mc = model_.config();

    std::size_t batch_words = 0;
    for (std::size_t idx : batch.conversations) batch_words += target_word_count(mc, train_[idx]);
    if (batch_words == 0) throw ContractError("Trainer: batch has no target words");

    Gradients grads(model_.params());
    LossTotals totals;
    for (std::size_t i = 0; i < batch.conversations.size(); ++i) {
      const Conversation& conv = train_[batch.conversations[i]];
      Rng plan_rng(mix_seed(step_seed, 2 * i));
      NoiseSource noise = NoiseSource::gaussian(mix_seed(step_seed, 2 * i + 1));
      DropPlan plan = plan_drops(mc, conv, cfg_.word_drop_p, cfg_.utterance_drop_p, plan_rng);
      Tape tape;
      ForwardTrace trace = forward_conversation(tape, model_, conv, plan, noise);
      StepLoss loss = step_loss(tape, model_, trace, lambda, cfg_.bow_weight);
      if (!std::isfinite(loss.objective.item())) {
        throw NumericError("training: non-finite loss at step " + std::to_string(state_.step + 1));
      }
      check_posterior_scale(trace);
      totals += loss.totals;
      tape.backward(scale(loss.objective, 1.0 / static_cast<double>(batch_words)));
      grads.accumulate(tape, model_.params());
    }
    adam_step(model_.params(), grads, state_.adam, cfg_.learning_rate, cfg_.clip_norm);
    ++state_.step;

    const LossBreakdown b = totals.breakdown(lambda);
    MetricRow row{state_.step, lambda, b.recon_per_word, b.kl_conv_per_word, b.kl_utt_per_word, std::nullopt};
    if (state_.step % spe == 0 && !valid_.empty()) {
      row.val_bound = evaluate_bound(model_, valid_, cfg_.seed).breakdown(1.0).bound_per_word();
      end_epoch(*row.val_bound);
    }
    return row;
  }

  std::optional<DiagnosticRow> diagnostic_row() const {
    if (!model_.config().has_latent() || valid_.empty()) return std::nullopt;
    auto priors = collect_priors(model_, valid_, cfg_.seed);
    if (priors.size() < 2) return std::nullopt;
    return DiagnosticRow{state_.step, prior_variance_ratio(priors)};
  }

  bool done() const { return state_.stopped || state_.step >= cfg_.max_steps; }

  // Runs until max_steps or early stop, reporting each row to the sinks.
  void run(const std::function<void(const MetricRow&)>& on_row,
           const std::function<void(const DiagnosticRow&)>& on_diag = {}) {
    while (!done()) {
      MetricRow row = step();
      if (on_row) on_row(row);
      if (on_diag && cfg_.diag_every > 0 && state_.step % cfg_.diag_every == 0) {
        if (auto d = diagnostic_row()) on_diag(*d);
      }
    }
  }

 private:
  void end_epoch(double val) {
    if (val < state_.best_val) {
      state_.best_val = val;
      state_.bad_epochs = 0;
      if (on_best) on_best(state_);
    } else {
      ++state_.bad_epochs;
      if (cfg_.early_stop_patience > 0 && state_.bad_epochs >= cfg_.early_stop_patience) state_.stopped = true;
    }
  }

  void check_posterior_scale(const ForwardTrace& trace) {
    if (warned_small_std_) return;
    for (const auto& s : trace.steps) {
      if (!s.posterior) continue;
      for (double v : s.posterior->std.values()) {
        if (v < 1e-5) {
          warnings_.push_back("posterior std below 1e-5 at step " + std::to_string(state_.step + 1));
          warned_small_std_ = true;
          return;
        }
      }
    }
  }

  Model& model_;
  std::vector<Conversation> train_;
  std::vector<Conversation> valid_;
  TrainConfig cfg_;
  TrainState state_;
  std::vector<Batch> batches_;
  std::size_t cached_epoch_ = std::numeric_limits<std::size_t>::max();
  std::vector<std::string> warnings_;
  bool warned_small_std_ = false;
};

}  // namespace vhcr
