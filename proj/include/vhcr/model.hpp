#pragma once

// HRED, VHRED, the z^utt-only decoder variant and VHCR as functions from
// (parameters, conversation, drop plan, noise) to distributions and logits.

#include <optional>
#include <string>
#include <vector>

#include "vhcr/corpus.hpp"
#include "vhcr/gaussian.hpp"
#include "vhcr/nets.hpp"

namespace vhcr {

enum class ModelKind { hred, vhred, vhred_zonly, vhcr };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::hred: return "hred";
    case ModelKind::vhred: return "vhred";
    case ModelKind::vhred_zonly: return "vhred_zonly";
    case ModelKind::vhcr: return "vhcr";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "hred") return ModelKind::hred;
  if (s == "vhred") return ModelKind::vhred;
  if (s == "vhred_zonly") return ModelKind::vhred_zonly;
  if (s == "vhcr") return ModelKind::vhcr;
  throw ConfigError("unknown model kind '" + s + "' (expected hred, vhred, vhred_zonly or vhcr)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::vhred;
  std::size_t embed_dim = 32;
  std::size_t enc_hidden = 64;
  std::size_t cxt_hidden = 64;
  std::size_t dec_hidden = 64;
  std::size_t latent_dim = 16;  // z^utt and z^conv
  std::size_t vocab_size = 0;

  bool has_latent() const { return kind != ModelKind::hred; }
  bool has_conv() const { return kind == ModelKind::vhcr; }
  std::size_t mlp_hidden() const { return cxt_hidden; }

  // Width of the decoder conditioning vector (h_cxt, z_utt, z_conv as present).
  std::size_t conditioning_dim() const {
    switch (kind) {
      case ModelKind::hred: return cxt_hidden;
      case ModelKind::vhred: return cxt_hidden + latent_dim;
      case ModelKind::vhred_zonly: return latent_dim;
      case ModelKind::vhcr: return cxt_hidden + 2 * latent_dim;
    }
    return 0;
  }

  // First utterance index that is a decoding target. VHCR also decodes the
  // opening utterance from h_cxt_0 = MLP(z_conv).
  std::size_t first_target() const { return kind == ModelKind::vhcr ? 0 : 1; }

  void validate() const {
    if (embed_dim == 0 || enc_hidden == 0 || cxt_hidden == 0 || dec_hidden == 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (vocab_size <= kNumSpecials) throw ConfigError("vocab_size must exceed the 4 special tokens");
    if (has_latent() && latent_dim == 0) throw ConfigError("latent_dim must be positive for " + to_string(kind));
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Full parameter set (generative and recognition) for one model variant.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t lat = cfg_.latent_dim;
    const std::size_t conv_in = cfg_.has_conv() ? lat : 0;
    const std::size_t mlp = cfg_.mlp_hidden();

    embedding = &store_.add_weight("embedding", {cfg_.vocab_size, cfg_.embed_dim}, cfg_.embed_dim, rng);
    encoder = GruCell::create(store_, "encoder", cfg_.embed_dim, cfg_.enc_hidden, rng);
    context = GruCell::create(store_, "context", cfg_.enc_hidden + conv_in, cfg_.cxt_hidden, rng);
    unk_vector = &store_.add_zeros("unk_vector", {cfg_.enc_hidden});
    const std::size_t cond = cfg_.conditioning_dim();
    decoder_init = Linear::create(store_, "decoder_init", cond, cfg_.dec_hidden, rng);
    decoder = GruCell::create(store_, "decoder", cfg_.embed_dim + cond, cfg_.dec_hidden, rng);
    output = Linear::create(store_, "output", cfg_.dec_hidden, cfg_.vocab_size, rng);
    if (cfg_.has_latent()) {
      const std::size_t prior_in = cfg_.cxt_hidden + conv_in;
      const std::size_t post_in = cfg_.enc_hidden + cfg_.cxt_hidden + conv_in;
      prior_mean = Mlp::create(store_, "prior.mean", prior_in, mlp, lat, rng);
      prior_std = Mlp::create(store_, "prior.std", prior_in, mlp, lat, rng);
      posterior_mean = Mlp::create(store_, "posterior.mean", post_in, mlp, lat, rng);
      posterior_std = Mlp::create(store_, "posterior.std", post_in, mlp, lat, rng);
      bow_head = Mlp::create(store_, "bow", lat, mlp, cfg_.vocab_size, rng);
    }
    if (cfg_.has_conv()) {
      conv_encoder = BiGru::create(store_, "conv.encoder", cfg_.enc_hidden, cfg_.enc_hidden, cfg_.cxt_hidden, rng);
      conv_mean = Mlp::create(store_, "conv.mean", cfg_.cxt_hidden, mlp, lat, rng);
      conv_std = Mlp::create(store_, "conv.std", cfg_.cxt_hidden, mlp, lat, rng);
      context_init = Mlp::create(store_, "context_init", lat, mlp, cfg_.cxt_hidden, rng);
    }
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ModelKind kind() const { return cfg_.kind; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Copies every parameter value from a model with the same manifest.
  void copy_values_from(const Model& other) {
    if (other.cfg_ != cfg_) throw ContractError("copy_values_from: model configurations differ");
    for (std::size_t i = 0; i < store_.size(); ++i) store_[i].value = other.store_[i].value;
  }

  const Parameter* embedding = nullptr;
  const Parameter* unk_vector = nullptr;
  GruCell encoder;
  GruCell context;
  Linear decoder_init;
  GruCell decoder;
  Linear output;
  Mlp prior_mean, prior_std;
  Mlp posterior_mean, posterior_std;
  Mlp bow_head;
  BiGru conv_encoder;
  Mlp conv_mean, conv_std;
  Mlp context_init;

 private:
  ModelConfig cfg_;
  ParamStore store_;
};

// ---- generative path --------------------------------------------------------

// Last f^enc state over the embedded tokens, from a zero initial state.
inline Tensor encode_utterance(Tape& tape, const Model& m, std::span<const TokenId> utterance) {
  if (utterance.empty()) throw ContractError("encode_utterance: empty utterance");
  Tensor emb = embedding_lookup(tape.parameter(*m.embedding), utterance);
  Tensor h0 = tape.constant(Array(Shape{m.config().enc_hidden}));
  return gru_unroll(tape, m.encoder, emb, h0).last;
}

namespace detail {

inline void check_zconv(const Model& m, const std::optional<Tensor>& z_conv, const char* op) {
  if (m.config().has_conv() != z_conv.has_value()) {
    throw ContractError(std::string(op) + ": z_conv must be supplied iff the model is VHCR (kind " +
                        to_string(m.kind()) + ")");
  }
}

inline void check_latent(const Model& m, const char* op) {
  if (!m.config().has_latent()) throw UnsupportedKindError(std::string(op) + ": HRED has no latent variables");
}

}  // namespace detail

// h^cxt_0: MLP(z_conv) for VHCR, zeros otherwise.
inline Tensor initial_context(Tape& tape, const Model& m, const std::optional<Tensor>& z_conv) {
  detail::check_zconv(m, z_conv, "initial_context");
  if (z_conv) return mlp_forward(tape, m.context_init, *z_conv);
  return tape.constant(Array(Shape{m.config().cxt_hidden}));
}

// One f^cxt step consuming the previous utterance vector (and z_conv for VHCR).
inline Tensor update_context(Tape& tape, const Model& m, const Tensor& h_cxt_prev, const Tensor& h_enc_prev,
                             const std::optional<Tensor>& z_conv) {
  detail::check_zconv(m, z_conv, "update_context");
  Tensor x = z_conv ? concat({h_enc_prev, *z_conv}) : h_enc_prev;
  return gru_step(tape, m.context, x, h_cxt_prev);
}

// Conditional prior p(z^utt_t | x_<t [, z_conv]).
inline DiagonalGaussian prior_utt(Tape& tape, const Model& m, const Tensor& h_cxt, const std::optional<Tensor>& z_conv) {
  detail::check_latent(m, "prior_utt");
  detail::check_zconv(m, z_conv, "prior_utt");
  Tensor in = z_conv ? concat({h_cxt, *z_conv}) : h_cxt;
  return {mlp_forward(tape, m.prior_mean, in), softplus(mlp_forward(tape, m.prior_std, in))};
}

// q(z^utt_t | x_t, h_cxt_t [, z_conv]); inputs concatenated in that order.
inline DiagonalGaussian posterior_utt(Tape& tape, const Model& m, const Tensor& target_enc, const Tensor& h_cxt,
                                      const std::optional<Tensor>& z_conv) {
  detail::check_latent(m, "posterior_utt");
  detail::check_zconv(m, z_conv, "posterior_utt");
  Tensor in = z_conv ? concat({target_enc, h_cxt, *z_conv}) : concat({target_enc, h_cxt});
  return {mlp_forward(tape, m.posterior_mean, in), softplus(mlp_forward(tape, m.posterior_std, in))};
}

// q(z^conv | x_1..x_n) from the bidirectional GRU over utterance vectors.
inline DiagonalGaussian posterior_conv(Tape& tape, const Model& m, const std::vector<Tensor>& encodings) {
  if (!m.config().has_conv()) throw UnsupportedKindError("posterior_conv: only VHCR has z_conv");
  if (encodings.empty()) throw ContractError("posterior_conv: empty conversation");
  Tensor h = bigru_encode(tape, m.conv_encoder, encodings);
  return {mlp_forward(tape, m.conv_mean, h), softplus(mlp_forward(tape, m.conv_std, h))};
}

inline DiagonalGaussian prior_conv(Tape& tape, const Model& m) { return standard_normal(tape, m.config().latent_dim); }

// What the decoder is conditioned on; which members must be present depends on the kind.
struct Conditioning {
  std::optional<Tensor> h_cxt;
  std::optional<Tensor> z_utt;
  std::optional<Tensor> z_conv;
};

inline Tensor conditioning_vector(const Model& m, const Conditioning& c) {
  const ModelKind k = m.kind();
  const bool want_h = k != ModelKind::vhred_zonly;
  const bool want_z = k != ModelKind::hred;
  const bool want_c = k == ModelKind::vhcr;
  if (c.h_cxt.has_value() != want_h || c.z_utt.has_value() != want_z || c.z_conv.has_value() != want_c) {
    throw ContractError("decoder conditioning does not match model kind " + to_string(k));
  }
  std::vector<Tensor> parts;
  if (c.h_cxt) parts.push_back(*c.h_cxt);
  if (c.z_utt) parts.push_back(*c.z_utt);
  if (c.z_conv) parts.push_back(*c.z_conv);
  return parts.size() == 1 ? parts[0] : concat(parts);
}

// Teacher-forced decoder logits (T x V) for `targets`. The conditioning vector
// sets the initial state through an affine projection and is appended to every
// step's input embedding. Inputs are SOS followed by targets[0..T-2]; a 1 in
// word_drop at position t > 0 replaces that input with UNK.
inline Tensor decode_utterance(Tape& tape, const Model& m, const Conditioning& cond, std::span<const TokenId> targets,
                               std::span<const std::uint8_t> word_drop = {}) {
  const std::size_t steps = targets.size();
  if (steps == 0) throw ContractError("decode_utterance: empty target");
  if (!word_drop.empty() && word_drop.size() != steps) {
    throw DimensionError("decode_utterance: word-drop mask has " + std::to_string(word_drop.size()) +
                         " entries for " + std::to_string(steps) + " positions");
  }
  Tensor c = conditioning_vector(m, cond);
  Tensor h0 = m.decoder_init(tape, c);
  std::vector<TokenId> inputs(steps);
  inputs[0] = kSos;
  for (std::size_t t = 1; t < steps; ++t) {
    inputs[t] = (!word_drop.empty() && word_drop[t]) ? kUnk : targets[t - 1];
  }
  Tensor emb = embedding_lookup(tape.parameter(*m.embedding), inputs);
  Tensor x = concat({emb, tile_rows(c, steps)}, 1);
  GruRun run = gru_unroll(tape, m.decoder, x, h0);
  return m.output(tape, run.states);
}

// ---- whole-conversation pass -----------------------------------------------

// Per-conversation regularizer decisions. Empty vectors mean "no drop".
struct DropPlan {
  std::vector<std::uint8_t> utterances;               // 1: replace h_enc with h_unk
  std::vector<std::vector<std::uint8_t>> words;       // per utterance, per decoder input position
};

struct UtteranceTrace {
  std::size_t index = 0;  // position of the target utterance in the conversation
  Tensor h_cxt;
  std::optional<DiagonalGaussian> prior;
  std::optional<DiagonalGaussian> posterior;
  std::optional<Tensor> z_utt;
  Tensor logits;
  std::vector<TokenId> targets;
};

struct ForwardTrace {
  ModelKind kind = ModelKind::hred;
  std::vector<UtteranceTrace> steps;
  std::optional<DiagonalGaussian> conv_prior;
  std::optional<DiagonalGaussian> conv_posterior;
  std::optional<Tensor> z_conv;
  std::vector<Tensor> contexts;  // h_cxt_t, t = 0..n-1

  std::size_t word_count() const {
    std::size_t n = 0;
    for (const auto& s : steps) n += s.targets.size();
    return n;
  }
};

// Number of target tokens (EOS included) a conversation contributes.
inline std::size_t target_word_count(const ModelConfig& cfg, const Conversation& c) {
  std::size_t n = 0;
  for (std::size_t t = cfg.first_target(); t < c.utterances.size(); ++t) n += c.utterances[t].size();
  return n;
}

// Inference (posterior_conv once for VHCR, posterior_utt per target) and the
// generative context/decoder chain in one pass. Noise is consumed in the order
// z_conv, then z_utt for each target. The generative context consumes the
// utterance-drop-perturbed encoder vectors; posteriors over z_conv and the
// target encodings use clean ones.
inline ForwardTrace forward_conversation(Tape& tape, const Model& m, const Conversation& conv, const DropPlan& plan,
                                         NoiseSource& noise) {
  const ModelConfig& cfg = m.config();
  const std::size_t n = conv.size();
  if (n < 2) throw ContractError("forward_conversation: conversation '" + conv.id + "' has fewer than 2 utterances");
  if (!plan.utterances.empty() && plan.utterances.size() != n) {
    throw DimensionError("forward_conversation: utterance-drop plan size mismatch");
  }
  if (!plan.words.empty() && plan.words.size() != n) {
    throw DimensionError("forward_conversation: word-drop plan size mismatch");
  }
  ForwardTrace trace;
  trace.kind = cfg.kind;

  std::vector<Tensor> encodings;
  encodings.reserve(n);
  for (const auto& u : conv.utterances) encodings.push_back(encode_utterance(tape, m, u));

  std::optional<Tensor> z_conv;
  if (cfg.has_conv()) {
    trace.conv_posterior = posterior_conv(tape, m, encodings);
    trace.conv_prior = prior_conv(tape, m);
    z_conv = reparameterize(*trace.conv_posterior, noise.draw(cfg.latent_dim));
    trace.z_conv = z_conv;
  }

  Tensor h = initial_context(tape, m, z_conv);
  trace.contexts.push_back(h);
  for (std::size_t t = 0; t < n; ++t) {
    if (t > 0) {
      const bool dropped = !plan.utterances.empty() && plan.utterances[t - 1];
      Tensor prev = dropped ? tape.parameter(*m.unk_vector) : encodings[t - 1];
      h = update_context(tape, m, h, prev, z_conv);
      trace.contexts.push_back(h);
    }
    if (t < cfg.first_target()) continue;

    UtteranceTrace step;
    step.index = t;
    step.h_cxt = h;
    step.targets = conv.utterances[t];
    Conditioning cond;
    if (cfg.kind != ModelKind::vhred_zonly) cond.h_cxt = h;
    if (cfg.has_latent()) {
      step.prior = prior_utt(tape, m, h, z_conv);
      step.posterior = posterior_utt(tape, m, encodings[t], h, z_conv);
      step.z_utt = reparameterize(*step.posterior, noise.draw(cfg.latent_dim));
      cond.z_utt = step.z_utt;
    }
    cond.z_conv = z_conv;
    std::span<const std::uint8_t> wd;
    if (!plan.words.empty()) wd = plan.words[t];
    step.logits = decode_utterance(tape, m, cond, step.targets, wd);
    trace.steps.push_back(std::move(step));
  }
  return trace;
}

}  // namespace vhcr
