#pragma once

// Annealed ELBO objective and the regularizers that perturb it.

#include <algorithm>
#include <cmath>
#include <vector>

#include "vhcr/model.hpp"

namespace vhcr {

// Linear KL multiplier: min(1, step / total).
inline double kl_anneal(std::size_t step, std::size_t total) {
  if (total == 0) throw ConfigError("kl_anneal: total steps must be positive");
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
}

// i.i.d. Bernoulli(p) over decoder input positions 1..length-1; position 0
// (SOS) is never dropped. 1 means "replace with UNK".
inline std::vector<std::uint8_t> plan_word_drop(std::size_t length, double p, Rng& rng) {
  std::vector<std::uint8_t> mask(length, 0);
  for (std::size_t t = 1; t < length; ++t) mask[t] = rng.bernoulli(p) ? 1 : 0;
  return mask;
}

// i.i.d. Bernoulli(p) per utterance; 1 means "replace h_enc with h_unk".
inline std::vector<std::uint8_t> plan_utterance_drop(std::size_t n, double p, Rng& rng) {
  std::vector<std::uint8_t> mask(n, 0);
  for (auto& m : mask) m = rng.bernoulli(p) ? 1 : 0;
  return mask;
}

inline DropPlan plan_drops(const ModelConfig& cfg, const Conversation& conv, double word_drop_p,
                           double utterance_drop_p, Rng& rng) {
  DropPlan plan;
  plan.utterances = plan_utterance_drop(conv.size(), utterance_drop_p, rng);
  plan.words.resize(conv.size());
  for (std::size_t t = cfg.first_target(); t < conv.size(); ++t) {
    plan.words[t] = plan_word_drop(conv.utterances[t].size(), word_drop_p, rng);
  }
  return plan;
}

// -sum_t log softmax(MLP(z))[w_t] over the target's words (EOS excluded).
inline Tensor bow_loss(Tape& tape, const Model& m, const Tensor& z, std::span<const TokenId> targets) {
  std::vector<TokenId> words;
  for (TokenId w : targets)
    if (w != kEos) words.push_back(w);
  if (words.empty()) throw ContractError("bow_loss: empty target");
  return bag_of_words_nll(mlp_forward(tape, m.bow_head, z), words);
}

struct LossBreakdown {
  double recon_per_word = 0.0;
  double kl_conv_per_word = 0.0;
  double kl_utt_per_word = 0.0;
  double lambda = 0.0;
  std::size_t word_count = 0;

  double kl_per_word() const { return kl_conv_per_word + kl_utt_per_word; }
  // Negative ELBO per word at lambda = 1.
  double bound_per_word() const { return recon_per_word + kl_conv_per_word + kl_utt_per_word; }
};

// Loss totals for one or more traces; per-word values divide by word_count.
struct LossTotals {
  double recon = 0.0;
  double kl_conv = 0.0;
  double kl_utt = 0.0;
  double bow = 0.0;
  std::size_t words = 0;

  LossTotals& operator+=(const LossTotals& o) {
    recon += o.recon;
    kl_conv += o.kl_conv;
    kl_utt += o.kl_utt;
    bow += o.bow;
    words += o.words;
    return *this;
  }

  LossBreakdown breakdown(double lambda) const {
    if (words == 0) throw ContractError("loss breakdown: word count is zero");
    const double w = static_cast<double>(words);
    return {recon / w, kl_conv / w, kl_utt / w, lambda, words};
  }
};

struct StepLoss {
  Tensor objective;  // recon + lambda * (kl_conv + kl_utt) + bow_weight * bow
  LossTotals totals;
  LossBreakdown breakdown;
};

inline StepLoss step_loss(Tape& tape, const Model& m, const ForwardTrace& trace, double lambda, int bow_weight) {
  StepLoss out;
  out.totals.words = trace.word_count();
  if (out.totals.words == 0) throw ContractError("step_loss: trace has no target words");

  std::vector<Tensor> recon_terms;
  std::vector<Tensor> kl_utt_terms;
  std::vector<Tensor> bow_terms;
  for (const auto& s : trace.steps) {
    std::vector<std::uint8_t> mask(s.targets.size(), 1);
    recon_terms.push_back(log_softmax_nll(s.logits, s.targets, mask));
    if (s.posterior) kl_utt_terms.push_back(gaussian_kl(*s.posterior, *s.prior));
    if (bow_weight != 0 && s.z_utt) {
      const bool has_words = std::any_of(s.targets.begin(), s.targets.end(), [](TokenId w) { return w != kEos; });
      if (has_words) bow_terms.push_back(bow_loss(tape, m, *s.z_utt, s.targets));
    }
  }
  auto total = [](const std::vector<Tensor>& terms) { return terms.size() == 1 ? terms[0] : sum(stack(terms)); };

  Tensor recon = total(recon_terms);
  Tensor objective = recon;
  out.totals.recon = recon.item();
  std::vector<Tensor> kl_parts;
  if (trace.conv_posterior) {
    Tensor kl_conv = gaussian_kl(*trace.conv_posterior, *trace.conv_prior);
    out.totals.kl_conv = kl_conv.item();
    kl_parts.push_back(kl_conv);
  }
  if (!kl_utt_terms.empty()) {
    Tensor kl_utt = total(kl_utt_terms);
    out.totals.kl_utt = kl_utt.item();
    kl_parts.push_back(kl_utt);
  }
  if (!kl_parts.empty()) {
    Tensor kl = kl_parts.size() == 1 ? kl_parts[0] : add(kl_parts[0], kl_parts[1]);
    objective = add(objective, scale(kl, lambda));
  }
  if (!bow_terms.empty()) {
    Tensor bow = total(bow_terms);
    out.totals.bow = bow.item();
    objective = add(objective, scale(bow, static_cast<double>(bow_weight)));
  }
  out.objective = objective;
  out.breakdown = out.totals.breakdown(lambda);
  return out;
}

// Fixed evaluation noise for conversation `index` of a split.
inline std::uint64_t evaluation_noise_seed(std::uint64_t seed, std::size_t index) {
  return mix_seed(seed ^ 0x5EEDE7A1ULL, index);
}

// Drop-free per-word variational bound (lambda = 1) over a split, one
// posterior sample per conversation from a fixed noise stream.
inline LossTotals evaluate_bound(const Model& m, const std::vector<Conversation>& split, std::uint64_t seed) {
  LossTotals totals;
  for (std::size_t i = 0; i < split.size(); ++i) {
    Tape tape;
    NoiseSource noise = NoiseSource::gaussian(evaluation_noise_seed(seed, i));
    ForwardTrace trace = forward_conversation(tape, m, split[i], DropPlan{}, noise);
    totals += step_loss(tape, m, trace, 1.0, 0).totals;
  }
  return totals;
}

}  // namespace vhcr
