#pragma once

// Greedy/sampled decoding, multi-turn rollout and z^conv control.

#include <cmath>
#include <optional>
#include <vector>

#include "vhcr/model.hpp"

namespace vhcr {

enum class DecodeMode { greedy, sample };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::greedy;
  std::size_t max_len = kDefaultMaxUtteranceLen;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  bool allow_unk = false;

  void validate() const {
    if (max_len == 0) throw ConfigError("decode: max_len must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("decode: temperature must be positive");
  }
};

namespace detail {

inline bool emittable(TokenId id, bool allow_unk) {
  return id != kPad && id != kSos && (allow_unk || id != kUnk);
}

inline TokenId pick_token(std::span<const double> logits, const DecodeConfig& cfg, Rng& rng) {
  if (cfg.mode == DecodeMode::greedy) {
    TokenId best = 0;
    bool found = false;
    for (TokenId i = 0; i < logits.size(); ++i) {
      if (!emittable(i, cfg.allow_unk)) continue;
      if (!found || logits[i] > logits[best]) {
        best = i;
        found = true;
      }
    }
    return best;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (TokenId i = 0; i < logits.size(); ++i)
    if (emittable(i, cfg.allow_unk)) mx = std::max(mx, logits[i] / cfg.temperature);
  std::vector<double> w(logits.size(), 0.0);
  double total = 0.0;
  for (TokenId i = 0; i < logits.size(); ++i) {
    if (!emittable(i, cfg.allow_unk)) continue;
    w[i] = std::exp(logits[i] / cfg.temperature - mx);
    total += w[i];
  }
  double u = rng.uniform() * total;
  TokenId last = 0;
  for (TokenId i = 0; i < logits.size(); ++i) {
    if (w[i] == 0.0) continue;
    last = i;
    u -= w[i];
    if (u < 0.0) return i;
  }
  return last;
}

}  // namespace detail

// Autoregressive decode from SOS under a fixed conditioning vector. The
// result ends with EOS unless max_len tokens were produced first.
inline std::vector<TokenId> decode(Tape& tape, const Model& m, const Conditioning& cond, const DecodeConfig& cfg) {
  cfg.validate();
  Tensor c = conditioning_vector(m, cond);
  Tensor h = m.decoder_init(tape, c);
  Tensor table = tape.parameter(*m.embedding);
  Rng rng(cfg.seed);
  std::vector<TokenId> out;
  TokenId prev = kSos;
  while (out.size() < cfg.max_len) {
    const TokenId ids[1] = {prev};
    Tensor x = concat({reshape(embedding_lookup(table, ids), {m.config().embed_dim}), c});
    h = gru_step(tape, m.decoder, x, h);
    Tensor logits = m.output(tape, h);
    prev = detail::pick_token(logits.values(), cfg, rng);
    out.push_back(prev);
    if (prev == kEos) break;
  }
  return out;
}

// Generation-time conversation state: h^cxt (and z^conv for VHCR) as plain
// values, advanced by observing utterances and by responding.
class DialogueState {
 public:
  DialogueState(const Model& m, std::optional<std::vector<double>> z_conv) : m_(m), z_conv_(std::move(z_conv)) {
    if (m.config().has_conv() != z_conv_.has_value()) {
      throw ContractError("DialogueState: z_conv must be supplied iff the model is VHCR");
    }
    if (z_conv_ && z_conv_->size() != m.config().latent_dim) {
      throw DimensionError("DialogueState: z_conv has " + std::to_string(z_conv_->size()) + " coordinates, expected " +
                           std::to_string(m.config().latent_dim));
    }
    Tape tape;
    h_cxt_ = initial_context(tape, m_, zconv(tape)).array();
  }

  const std::vector<double>& h_cxt() const { return h_cxt_.data; }
  const std::optional<std::vector<double>>& z_conv() const { return z_conv_; }
  std::size_t turns() const { return turns_; }

  // Feeds an utterance (EOS-terminated ids) through f^enc and f^cxt.
  void observe(std::span<const TokenId> utterance) {
    Tape tape;
    Tensor enc = encode_utterance(tape, m_, utterance);
    h_cxt_ = update_context(tape, m_, tape.constant(h_cxt_), enc, zconv(tape)).array();
  }

  // Draws z^utt from the conditional prior, decodes a response, then observes
  // it. The decode seed is derived from cfg.seed and the turn index.
  std::vector<TokenId> respond(const DecodeConfig& cfg, NoiseSource& noise) {
    Tape tape;
    Conditioning cond;
    Tensor h = tape.constant(h_cxt_);
    auto zc = zconv(tape);
    if (m_.kind() != ModelKind::vhred_zonly) cond.h_cxt = h;
    if (m_.config().has_latent()) {
      DiagonalGaussian prior = prior_utt(tape, m_, h, zc);
      cond.z_utt = reparameterize(prior, noise.draw(m_.config().latent_dim));
    }
    cond.z_conv = zc;
    DecodeConfig turn_cfg = cfg;
    turn_cfg.seed = mix_seed(cfg.seed, turns_);
    std::vector<TokenId> response = decode(tape, m_, cond, turn_cfg);
    ++turns_;
    // A response cut at max_len still needs its EOS to be re-encoded like a corpus utterance.
    std::vector<TokenId> observed = response;
    if (observed.empty() || observed.back() != kEos) observed.push_back(kEos);
    observe(observed);
    return response;
  }

 private:
  std::optional<Tensor> zconv(Tape& tape) const {
    if (!z_conv_) return std::nullopt;
    return tape.constant(Array(Shape{z_conv_->size()}, *z_conv_));
  }

  const Model& m_;
  std::optional<std::vector<double>> z_conv_;
  Array h_cxt_;
  std::size_t turns_ = 0;
};

// z^conv ~ q(z^conv | context) for a non-empty context, N(0, I) otherwise.
inline std::vector<double> sample_zconv(const Model& m, const std::vector<std::vector<TokenId>>& context,
                                        NoiseSource& noise) {
  if (!m.config().has_conv()) throw UnsupportedKindError("sample_zconv: only VHCR has z_conv");
  Tape tape;
  DiagonalGaussian q = prior_conv(tape, m);
  if (!context.empty()) {
    std::vector<Tensor> enc;
    for (const auto& u : context) enc.push_back(encode_utterance(tape, m, u));
    q = posterior_conv(tape, m, enc);
  }
  auto z = reparameterize(q, noise.draw(m.config().latent_dim)).values();
  return {z.begin(), z.end()};
}

struct Rollout {
  std::vector<std::vector<TokenId>> responses;
  std::optional<std::vector<double>> z_conv;
};

// Observes the context, then generates `turns` responses, each fed back
// through the encoder. For VHCR z^conv is taken from `z_conv` when given,
// otherwise drawn from the noise stream first.
inline Rollout rollout(const Model& m, const std::vector<std::vector<TokenId>>& context, std::size_t turns,
                       const DecodeConfig& cfg, NoiseSource& noise,
                       std::optional<std::vector<double>> z_conv = std::nullopt) {
  if (turns == 0) throw ContractError("rollout: turns must be >= 1");
  if (z_conv && !m.config().has_conv()) throw UnsupportedKindError("rollout: only VHCR accepts z_conv");
  if (m.config().has_conv() && !z_conv) z_conv = sample_zconv(m, context, noise);
  DialogueState state(m, z_conv);
  for (const auto& u : context) state.observe(u);
  Rollout r;
  r.z_conv = z_conv;
  for (std::size_t t = 0; t < turns; ++t) r.responses.push_back(state.respond(cfg, noise));
  return r;
}

inline NoiseSource make_noise(std::optional<std::uint64_t> seed) {
  return seed ? NoiseSource::gaussian(*seed) : NoiseSource::zero();
}

// From-scratch VHCR rollout conditioned directly on z^conv.
inline Rollout rollout_from_zconv(const Model& m, const std::vector<double>& z_conv, std::size_t turns,
                                  const DecodeConfig& cfg, std::optional<std::uint64_t> noise_seed) {
  if (!m.config().has_conv()) throw UnsupportedKindError("rollout_from_zconv: only VHCR has z_conv");
  NoiseSource noise = make_noise(noise_seed);
  return rollout(m, {}, turns, cfg, noise, z_conv);
}

// z_k between z_a and z_b at alpha; alpha 0 and 1 return the endpoints exactly.
inline std::vector<double> interpolate_latent(const std::vector<double>& a, const std::vector<double>& b, double alpha,
                                              bool spherical) {
  if (a.size() != b.size()) throw DimensionError("interpolate_latent: endpoint dimensions differ");
  if (alpha == 0.0) return a;
  if (alpha == 1.0) return b;
  std::vector<double> z(a.size());
  double wa = 1.0 - alpha;
  double wb = alpha;
  if (spherical) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      dot += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    const double cosv = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
    const double omega = std::acos(cosv);
    // Nearly parallel endpoints: slerp degenerates to lerp.
    if (na > 0 && nb > 0 && std::sin(omega) > 1e-9) {
      wa = std::sin((1.0 - alpha) * omega) / std::sin(omega);
      wb = std::sin(alpha * omega) / std::sin(omega);
    }
  }
  for (std::size_t i = 0; i < a.size(); ++i) z[i] = wa * a[i] + wb * b[i];
  return z;
}

// num_points rollouts at alpha_k = k / (num_points - 1), each from a fresh
// copy of the same z^utt noise stream.
inline std::vector<Rollout> interpolate_zconv(const Model& m, const std::vector<double>& z_a,
                                              const std::vector<double>& z_b, std::size_t num_points,
                                              std::size_t turns, const DecodeConfig& cfg,
                                              std::optional<std::uint64_t> noise_seed, bool spherical = false) {
  if (!m.config().has_conv()) throw UnsupportedKindError("interpolate_zconv: only VHCR has z_conv");
  if (num_points < 2) throw ContractError("interpolate_zconv: num_points must be >= 2");
  std::vector<Rollout> out;
  for (std::size_t k = 0; k < num_points; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(num_points - 1);
    out.push_back(rollout_from_zconv(m, interpolate_latent(z_a, z_b, alpha, spherical), turns, cfg, noise_seed));
  }
  return out;
}

// Rollouts sharing one z^conv; sample s draws z^utt noise from mix_seed(seed, s),
// or uses zero noise when no seed is given.
inline std::vector<Rollout> generate_fixed_zconv(const Model& m, const std::vector<double>& z_conv,
                                                 std::size_t num_samples, std::size_t turns, const DecodeConfig& cfg,
                                                 std::optional<std::uint64_t> noise_seed) {
  if (!m.config().has_conv()) throw UnsupportedKindError("generate_fixed_zconv: only VHCR has z_conv");
  std::vector<Rollout> out;
  for (std::size_t s = 0; s < num_samples; ++s) {
    std::optional<std::uint64_t> seed;
    if (noise_seed) seed = mix_seed(*noise_seed, s);
    out.push_back(rollout_from_zconv(m, z_conv, turns, cfg, seed));
  }
  return out;
}

}  // namespace vhcr
