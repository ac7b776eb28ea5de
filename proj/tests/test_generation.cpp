#include <gtest/gtest.h>

#include <set>

#include "test_support.hpp"

using namespace vhcr;
using vhcr::testing::all_kinds;
using vhcr::testing::tiny_config;

namespace {

constexpr std::size_t kVocab = 12;

Model random_model(ModelKind kind, std::uint64_t seed) {
  Model m(tiny_config(kind, kVocab), seed);
  Rng rng(seed + 100);
  vhcr::testing::randomize_params(m.params(), rng);
  return m;
}

Conditioning conditioning_for(Tape& tape, const Model& m, Rng& rng) {
  const auto& c = m.config();
  Conditioning cond;
  if (m.kind() != ModelKind::vhred_zonly) cond.h_cxt = tape.constant(vhcr::testing::random_array({c.cxt_hidden}, rng));
  if (c.has_latent()) cond.z_utt = tape.constant(vhcr::testing::random_array({c.latent_dim}, rng));
  if (c.has_conv()) cond.z_conv = tape.constant(vhcr::testing::random_array({c.latent_dim}, rng));
  return cond;
}

void set_output_bias(Model& m, TokenId id, double value) { m.params().find("output.bias")->value.data[id] = value; }

void zero_output(Model& m) {
  for (double& v : m.params().find("output.weight")->value.data) v = 0.0;
  for (double& v : m.params().find("output.bias")->value.data) v = 0.0;
}

void expect_well_formed(const std::vector<TokenId>& seq, std::size_t max_len, bool allow_unk = false) {
  ASSERT_FALSE(seq.empty());
  ASSERT_LE(seq.size(), max_len);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    EXPECT_NE(seq[i], kPad);
    EXPECT_NE(seq[i], kSos);
    if (!allow_unk) {
      EXPECT_NE(seq[i], kUnk);
    }
    if (seq[i] == kEos) {
      EXPECT_EQ(i + 1, seq.size()) << "EOS before the end";
    }
  }
}

const std::vector<std::vector<TokenId>> kContext = {{5, 6, 7, kEos}, {8, 4, kEos}};

}  // namespace

TEST(Decode, EosFavoringLogitsStopImmediately) {
  for (ModelKind kind : all_kinds()) {
    Model m = random_model(kind, 1);
    zero_output(m);
    set_output_bias(m, kEos, 5.0);
    Tape tape;
    Rng rng(2);
    EXPECT_EQ(decode(tape, m, conditioning_for(tape, m, rng), DecodeConfig{}), (std::vector<TokenId>{kEos}));
  }
}

TEST(Decode, TruncatesAtMaxLenWithoutEos) {
  Model m = random_model(ModelKind::vhcr, 3);
  zero_output(m);
  set_output_bias(m, 7, 5.0);
  DecodeConfig cfg;
  cfg.max_len = 6;
  Tape tape;
  Rng rng(4);
  EXPECT_EQ(decode(tape, m, conditioning_for(tape, m, rng), cfg), std::vector<TokenId>(6, 7));
}

TEST(Decode, SpecialTokensAreMasked) {
  Model m = random_model(ModelKind::vhred, 5);
  zero_output(m);
  for (TokenId id : {kPad, kUnk, kSos}) set_output_bias(m, id, 50.0);
  set_output_bias(m, 9, 40.0);
  DecodeConfig cfg;
  cfg.max_len = 3;
  Tape tape;
  Rng rng(6);
  Conditioning cond = conditioning_for(tape, m, rng);
  EXPECT_EQ(decode(tape, m, cond, cfg), std::vector<TokenId>(3, 9));
  cfg.allow_unk = true;
  EXPECT_EQ(decode(tape, m, cond, cfg), std::vector<TokenId>(3, kUnk));
  cfg.mode = DecodeMode::sample;
  cfg.allow_unk = false;
  for (TokenId t : decode(tape, m, cond, cfg)) EXPECT_EQ(t, 9u);
}

TEST(Decode, GreedyTiesGoToLowestId) {
  Model m = random_model(ModelKind::hred, 7);
  zero_output(m);
  DecodeConfig cfg;
  cfg.max_len = 2;
  Tape tape;
  Rng rng(8);
  Conditioning cond = conditioning_for(tape, m, rng);
  EXPECT_EQ(decode(tape, m, cond, cfg), (std::vector<TokenId>{kEos}));
  set_output_bias(m, kEos, -1.0);
  Tape t2;
  EXPECT_EQ(decode(t2, m, conditioning_for(t2, m, rng), cfg), (std::vector<TokenId>{4, 4}));
}

TEST(Decode, DeterministicAndWellFormed) {
  for (ModelKind kind : all_kinds()) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Model m = random_model(kind, 10 + seed);
      Rng rng(seed);
      Tape tape;
      Conditioning cond = conditioning_for(tape, m, rng);
      DecodeConfig cfg;
      cfg.max_len = 8;
      auto g = decode(tape, m, cond, cfg);
      EXPECT_EQ(g, decode(tape, m, cond, cfg));
      expect_well_formed(g, 8);
      cfg.mode = DecodeMode::sample;
      cfg.temperature = 2.0;
      cfg.seed = seed;
      auto s = decode(tape, m, cond, cfg);
      EXPECT_EQ(s, decode(tape, m, cond, cfg));
      expect_well_formed(s, 8);
    }
  }
}

TEST(Decode, SampleModeVariesWithSeed) {
  Model m = random_model(ModelKind::vhred, 20);
  Rng rng(1);
  Tape tape;
  Conditioning cond = conditioning_for(tape, m, rng);
  DecodeConfig cfg;
  cfg.mode = DecodeMode::sample;
  cfg.temperature = 3.0;
  cfg.max_len = 10;
  std::set<std::vector<TokenId>> seen;
  for (std::uint64_t s = 0; s < 10; ++s) {
    cfg.seed = s;
    seen.insert(decode(tape, m, cond, cfg));
  }
  EXPECT_GE(seen.size(), 2u);
}

TEST(Decode, ConfigValidation) {
  Model m = random_model(ModelKind::hred, 1);
  Tape tape;
  Rng rng(1);
  Conditioning cond = conditioning_for(tape, m, rng);
  DecodeConfig cfg;
  cfg.max_len = 0;
  EXPECT_THROW(decode(tape, m, cond, cfg), ConfigError);
  cfg.max_len = 3;
  cfg.temperature = 0.0;
  EXPECT_THROW(decode(tape, m, cond, cfg), ConfigError);
}

TEST(Rollout, SingleTurnIsDecodeOnContext) {
  for (ModelKind kind : {ModelKind::hred, ModelKind::vhred, ModelKind::vhred_zonly}) {
    Model m = random_model(kind, 30);
    DecodeConfig cfg;
    NoiseSource noise = NoiseSource::zero();
    Rollout r = rollout(m, kContext, 1, cfg, noise);
    ASSERT_EQ(r.responses.size(), 1u);
    EXPECT_FALSE(r.z_conv.has_value());

    // Context state by a teacher-forced pass over context + dummy target.
    Conversation conv;
    conv.utterances = kContext;
    conv.utterances.push_back({4, kEos});
    Tape tape;
    NoiseSource zero = NoiseSource::zero();
    ForwardTrace tr = forward_conversation(tape, m, conv, DropPlan{}, zero);
    const auto& step = tr.steps.back();
    Conditioning cond;
    if (kind != ModelKind::vhred_zonly) cond.h_cxt = step.h_cxt;
    if (kind != ModelKind::hred) cond.z_utt = step.prior->mean;
    EXPECT_EQ(r.responses[0], decode(tape, m, cond, cfg)) << to_string(kind);
  }
}

TEST(Rollout, CountsAndDeterminism) {
  for (ModelKind kind : all_kinds()) {
    Model m = random_model(kind, 31);
    DecodeConfig cfg;
    cfg.max_len = 6;
    NoiseSource a = NoiseSource::gaussian(4), b = NoiseSource::gaussian(4);
    Rollout ra = rollout(m, kContext, 3, cfg, a);
    Rollout rb = rollout(m, kContext, 3, cfg, b);
    ASSERT_EQ(ra.responses.size(), 3u);
    EXPECT_EQ(ra.responses, rb.responses);
    EXPECT_EQ(ra.z_conv, rb.z_conv);
    EXPECT_EQ(ra.z_conv.has_value(), kind == ModelKind::vhcr);
    for (const auto& u : ra.responses) expect_well_formed(u, 6);
    NoiseSource c = NoiseSource::gaussian(4);
    EXPECT_THROW(rollout(m, kContext, 0, cfg, c), ContractError);
  }
}

TEST(Rollout, Compositional) {
  for (ModelKind kind : all_kinds()) {
    Model m = random_model(kind, 32);
    DecodeConfig cfg;
    cfg.mode = DecodeMode::sample;
    cfg.seed = 77;
    cfg.max_len = 5;
    NoiseSource whole_noise = NoiseSource::gaussian(9);
    Rollout whole = rollout(m, kContext, 5, cfg, whole_noise);

    NoiseSource noise = NoiseSource::gaussian(9);
    std::optional<std::vector<double>> z;
    if (kind == ModelKind::vhcr) z = sample_zconv(m, kContext, noise);
    DialogueState state(m, z);
    for (const auto& u : kContext) state.observe(u);
    std::vector<std::vector<TokenId>> parts;
    for (int t = 0; t < 2; ++t) parts.push_back(state.respond(cfg, noise));
    for (int t = 0; t < 3; ++t) parts.push_back(state.respond(cfg, noise));
    EXPECT_EQ(parts, whole.responses) << to_string(kind);
    EXPECT_EQ(state.turns(), 5u);
  }
}

TEST(Rollout, ZconvOnlyForVhcr) {
  Model m = random_model(ModelKind::vhred, 33);
  NoiseSource noise = NoiseSource::zero();
  EXPECT_THROW(rollout(m, kContext, 1, DecodeConfig{}, noise, std::vector<double>(3, 0.0)), UnsupportedKindError);
  EXPECT_THROW(sample_zconv(m, kContext, noise), UnsupportedKindError);
  EXPECT_THROW(DialogueState(m, std::vector<double>(3, 0.0)), ContractError);
  Model v = random_model(ModelKind::vhcr, 33);
  EXPECT_THROW(DialogueState(v, std::nullopt), ContractError);
  EXPECT_THROW(DialogueState(v, std::vector<double>(2, 0.0)), DimensionError);
}

TEST(Interpolate, LatentArithmetic) {
  const std::vector<double> a = {1.0, -2.0, 0.5}, b = {-3.0, 4.0, 0.25};
  EXPECT_EQ(interpolate_latent(a, b, 0.0, false), a);
  EXPECT_EQ(interpolate_latent(a, b, 1.0, false), b);
  EXPECT_EQ(interpolate_latent(a, b, 0.5, false), (std::vector<double>{-1.0, 1.0, 0.375}));
  EXPECT_EQ(interpolate_latent(a, b, 0.0, true), a);
  EXPECT_EQ(interpolate_latent(a, b, 1.0, true), b);
  // Slerp between equal-norm vectors keeps the norm.
  const std::vector<double> u = {3, 0, 4}, v = {0, 5, 0};
  for (double t : {0.2, 0.5, 0.9}) {
    auto z = interpolate_latent(u, v, t, true);
    EXPECT_NEAR(std::hypot(z[0], z[1], z[2]), 5.0, 1e-12);
  }
  EXPECT_THROW(interpolate_latent(a, {1.0}, 0.5, false), DimensionError);
}

TEST(Interpolate, EndpointsMatchDirectConditioning) {
  Model m = random_model(ModelKind::vhcr, 40);
  const std::vector<double> za = {1.5, -0.5, 0.2}, zb = {-1.0, 2.0, -0.7};
  DecodeConfig cfg;
  cfg.max_len = 6;
  auto runs = interpolate_zconv(m, za, zb, 5, 3, cfg, 12);
  ASSERT_EQ(runs.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(*runs[k].z_conv, interpolate_latent(za, zb, 0.25 * static_cast<double>(k), false));
    EXPECT_EQ(runs[k].responses.size(), 3u);
  }
  EXPECT_EQ(runs.front().responses, rollout_from_zconv(m, za, 3, cfg, 12).responses);
  EXPECT_EQ(runs.back().responses, rollout_from_zconv(m, zb, 3, cfg, 12).responses);
  std::vector<double> mid(3);
  for (std::size_t i = 0; i < 3; ++i) mid[i] = (za[i] + zb[i]) / 2;
  EXPECT_EQ(*runs[2].z_conv, mid);
  EXPECT_THROW(interpolate_zconv(m, za, zb, 1, 3, cfg, 12), ContractError);
  Model h = random_model(ModelKind::hred, 40);
  EXPECT_THROW(interpolate_zconv(h, za, zb, 5, 3, cfg, 12), UnsupportedKindError);
}

TEST(FixedZconv, ZeroNoiseGivesIdenticalRollouts) {
  Model m = random_model(ModelKind::vhcr, 50);
  const std::vector<double> z = {0.3, -1.2, 0.8};
  DecodeConfig cfg;
  cfg.max_len = 6;
  auto runs = generate_fixed_zconv(m, z, 4, 2, cfg, std::nullopt);
  ASSERT_EQ(runs.size(), 4u);
  for (const auto& r : runs) {
    EXPECT_EQ(r.responses, runs[0].responses);
    EXPECT_EQ(*r.z_conv, z);
  }
}

TEST(FixedZconv, SeededSamplesAreReproducibleAndShareZconv) {
  Model m = random_model(ModelKind::vhcr, 51);
  const std::vector<double> z = {0.3, -1.2, 0.8};
  DecodeConfig cfg;
  cfg.max_len = 6;
  auto a = generate_fixed_zconv(m, z, 5, 2, cfg, 99);
  auto b = generate_fixed_zconv(m, z, 5, 2, cfg, 99);
  for (std::size_t s = 0; s < 5; ++s) {
    EXPECT_EQ(a[s].responses, b[s].responses);
    EXPECT_EQ(*a[s].z_conv, z);
  }
  Model v = random_model(ModelKind::vhred, 51);
  EXPECT_THROW(generate_fixed_zconv(v, z, 2, 1, cfg, 1), UnsupportedKindError);
}

TEST(SampleZconv, EmptyContextUsesStandardPrior) {
  Model m = random_model(ModelKind::vhcr, 60);
  NoiseSource a = NoiseSource::gaussian(3), b = NoiseSource::gaussian(3);
  EXPECT_EQ(sample_zconv(m, {}, a), b.draw(3));
  NoiseSource zero = NoiseSource::zero();
  Tape tape;
  std::vector<Tensor> enc;
  for (const auto& u : kContext) enc.push_back(encode_utterance(tape, m, u));
  auto mean = posterior_conv(tape, m, enc).mean.values();
  EXPECT_EQ(sample_zconv(m, kContext, zero), std::vector<double>(mean.begin(), mean.end()));
}
