#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "test_support.hpp"

using namespace vhcr;
using vhcr::testing::all_kinds;
using vhcr::testing::random_array;
using vhcr::testing::tiny_config;
using vhcr::testing::toy_data;

namespace {

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void zero_params(Model& m) {
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    auto& d = m.params()[i].value.data;
    std::fill(d.begin(), d.end(), 0.0);
  }
}

Model make_model(ModelKind kind, std::size_t vocab, std::uint64_t seed = 1) {
  return Model(tiny_config(kind, vocab), seed);
}

const std::vector<TokenId> kUtt{5, 9, 7, kEos};

void expect_standard_softplus(const DiagonalGaussian& g) {
  for (double v : g.mean.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.std.values()) EXPECT_NEAR(v, std::numbers::ln2, 1e-15);
}

}  // namespace

TEST(ModelConfig, ValidationAndKindNames) {
  for (ModelKind k : all_kinds()) EXPECT_EQ(parse_model_kind(to_string(k)), k);
  EXPECT_THROW(parse_model_kind("vae"), ConfigError);
  auto c = tiny_config(ModelKind::vhred, 4);
  EXPECT_THROW(c.validate(), ConfigError);
  c.vocab_size = 20;
  c.latent_dim = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.kind = ModelKind::hred;
  EXPECT_NO_THROW(c.validate());
}

TEST(ModelParams, DeterminedByKindAndDims) {
  std::vector<std::set<std::string>> names;
  for (ModelKind k : all_kinds()) {
    Model a = make_model(k, 30, 1), b = make_model(k, 30, 2);
    ASSERT_EQ(a.params().size(), b.params().size());
    std::set<std::string> s;
    for (std::size_t i = 0; i < a.params().size(); ++i) {
      EXPECT_EQ(a.params()[i].name, b.params()[i].name);
      EXPECT_EQ(a.params()[i].value.shape, b.params()[i].value.shape);
      s.insert(a.params()[i].name);
    }
    names.push_back(s);
  }
  EXPECT_FALSE(names[0].count("prior.mean.0.weight"));
  EXPECT_TRUE(names[1].count("prior.mean.0.weight"));
  EXPECT_FALSE(names[1].count("conv.mean.0.weight"));
  EXPECT_TRUE(names[3].count("conv.mean.0.weight"));
  EXPECT_TRUE(names[3].count("context_init.0.weight"));
  EXPECT_TRUE(names[0].count("unk_vector"));
}

TEST(EncodeUtterance, SingleTokenIsOneStep) {
  Model m = make_model(ModelKind::vhred, 20);
  Tape tape;
  const std::vector<TokenId> one{7};
  Tensor emb = embedding_lookup(tape.parameter(*m.embedding), std::vector<TokenId>{7});
  Tensor x = tape.constant(Array(Shape{m.config().embed_dim},
                                 std::vector<double>(emb.values().begin(), emb.values().end())));
  Tensor want = gru_step(tape, m.encoder, x, tape.constant(Array(Shape{m.config().enc_hidden})));
  EXPECT_EQ(to_vec(encode_utterance(tape, m, one)), to_vec(want));
}

TEST(EncodeUtterance, ZeroParametersAndUnrollOracle) {
  Model m = make_model(ModelKind::hred, 20);
  Tape tape;
  Tensor emb = embedding_lookup(tape.parameter(*m.embedding), kUtt);
  GruRun run = gru_unroll(tape, m.encoder, emb, tape.constant(Array(Shape{m.config().enc_hidden})));
  EXPECT_EQ(to_vec(encode_utterance(tape, m, kUtt)), to_vec(run.last));
  EXPECT_THROW(encode_utterance(tape, m, std::vector<TokenId>{}), ContractError);
  zero_params(m);
  Tape fresh;
  for (double v : to_vec(encode_utterance(fresh, m, kUtt))) EXPECT_EQ(v, 0.0);
}

TEST(UpdateContext, InitialStatePerKind) {
  Model h = make_model(ModelKind::vhred, 20);
  Model c = make_model(ModelKind::vhcr, 20);
  Tape tape;
  for (double v : to_vec(initial_context(tape, h, std::nullopt))) EXPECT_EQ(v, 0.0);
  Rng rng(4);
  Tensor z = tape.constant(random_array({3}, rng));
  EXPECT_EQ(to_vec(initial_context(tape, c, z)), to_vec(mlp_forward(tape, c.context_init, z)));
  EXPECT_THROW(initial_context(tape, c, std::nullopt), ContractError);
  EXPECT_THROW(initial_context(tape, h, z), ContractError);
}

TEST(UpdateContext, MatchesGruStepOnConcatenation) {
  Rng rng(5);
  Model c = make_model(ModelKind::vhcr, 20);
  Tape tape;
  Tensor hprev = tape.constant(random_array({6}, rng));
  Tensor enc = tape.constant(random_array({5}, rng));
  Tensor z = tape.constant(random_array({3}, rng));
  EXPECT_EQ(to_vec(update_context(tape, c, hprev, enc, z)), to_vec(gru_step(tape, c.context, concat({enc, z}), hprev)));
  EXPECT_THROW(update_context(tape, c, hprev, enc, std::nullopt), ContractError);

  Model v = make_model(ModelKind::vhred, 20);
  EXPECT_EQ(to_vec(update_context(tape, v, hprev, enc, std::nullopt)), to_vec(gru_step(tape, v.context, enc, hprev)));
  EXPECT_THROW(update_context(tape, v, hprev, enc, z), ContractError);
}

TEST(PriorUtt, ZeroParametersGiveSoftplusZero) {
  Model m = make_model(ModelKind::vhred, 20);
  zero_params(m);
  Tape tape;
  Rng rng(1);
  expect_standard_softplus(prior_utt(tape, m, tape.constant(random_array({6}, rng)), std::nullopt));
}

TEST(PriorUtt, StdPositiveAndCompositionOracle) {
  Rng rng(6);
  Model m = make_model(ModelKind::vhcr, 20);
  Tape tape;
  for (int i = 0; i < 1000; ++i) {
    Tensor h = tape.constant(random_array({6}, rng, -4, 4));
    Tensor z = tape.constant(random_array({3}, rng, -4, 4));
    DiagonalGaussian g = prior_utt(tape, m, h, z);
    for (double s : g.std.values()) ASSERT_GT(s, 0.0);
    if (i < 5) {
      Tensor in = concat({h, z});
      EXPECT_EQ(to_vec(g.mean), to_vec(mlp_forward(tape, m.prior_mean, in)));
      EXPECT_EQ(to_vec(g.std), to_vec(softplus(mlp_forward(tape, m.prior_std, in))));
    }
  }
  Model hred = make_model(ModelKind::hred, 20);
  EXPECT_THROW(prior_utt(tape, hred, tape.constant(Array(Shape{6})), std::nullopt), UnsupportedKindError);
}

TEST(PosteriorUtt, ZeroParametersAndHred) {
  Model m = make_model(ModelKind::vhred_zonly, 20);
  zero_params(m);
  Tape tape;
  Rng rng(7);
  expect_standard_softplus(
      posterior_utt(tape, m, tape.constant(random_array({5}, rng)), tape.constant(random_array({6}, rng)), std::nullopt));
  Model hred = make_model(ModelKind::hred, 20);
  EXPECT_THROW(posterior_utt(tape, hred, tape.constant(Array(Shape{5})), tape.constant(Array(Shape{6})), std::nullopt),
               UnsupportedKindError);
}

TEST(PosteriorUtt, InputOrderAndSensitivity) {
  Rng rng(8);
  Model m = make_model(ModelKind::vhcr, 20);
  Tape tape;
  Tensor target = tape.constant(random_array({5}, rng));
  Tensor h = tape.constant(random_array({6}, rng));
  Tensor z = tape.constant(random_array({3}, rng));
  DiagonalGaussian g = posterior_utt(tape, m, target, h, z);
  EXPECT_EQ(to_vec(g.mean), to_vec(mlp_forward(tape, m.posterior_mean, concat({target, h, z}))));

  Array shifted = Array::vector(to_vec(target));
  shifted.data[0] += 0.5;
  DiagonalGaussian g2 = posterior_utt(tape, m, tape.constant(shifted), h, z);
  EXPECT_NE(to_vec(g.mean), to_vec(g2.mean));
}

TEST(PosteriorConv, ZeroParametersFixedPriorAndErrors) {
  Model m = make_model(ModelKind::vhcr, 20);
  Tape tape;
  Rng rng(9);
  std::vector<Tensor> encs{tape.constant(random_array({5}, rng)), tape.constant(random_array({5}, rng))};
  auto a = GaussianValues::of(posterior_conv(tape, m, encs));
  auto b = GaussianValues::of(posterior_conv(tape, m, encs));
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std, b.std);
  EXPECT_THROW(posterior_conv(tape, m, {}), ContractError);

  DiagonalGaussian p = prior_conv(tape, m);
  EXPECT_EQ(to_vec(p.mean), std::vector<double>(3, 0.0));
  EXPECT_EQ(to_vec(p.std), std::vector<double>(3, 1.0));

  zero_params(m);
  Tape fresh;
  std::vector<Tensor> fresh_encs{fresh.constant(encs[0].array()), fresh.constant(encs[1].array())};
  expect_standard_softplus(posterior_conv(fresh, m, fresh_encs));

  Model v = make_model(ModelKind::vhred, 20);
  EXPECT_THROW(posterior_conv(tape, v, encs), UnsupportedKindError);
}

TEST(Reparameterize, ZeroNoiseAndZeroStd) {
  Tape tape;
  DiagonalGaussian g{tape.constant(Array::vector({0.5, -2.0})), tape.constant(Array::vector({1.5, 0.0}))};
  EXPECT_EQ(to_vec(reparameterize(g, std::vector<double>{0, 0})), (std::vector<double>{0.5, -2.0}));
  EXPECT_EQ(to_vec(reparameterize(g, std::vector<double>{0, 3.0}))[1], -2.0);
  EXPECT_THROW(reparameterize(g, std::vector<double>{0}), DimensionError);
}

TEST(Reparameterize, MonteCarloMoments) {
  const double mean = 0.7, sd = 1.3;
  const std::size_t n = 100000;
  Rng rng(10);
  Tape tape;
  DiagonalGaussian g{tape.constant(Array(Shape{n}, mean)), tape.constant(Array(Shape{n}, sd))};
  double s = 0, s2 = 0;
  for (double z : reparameterize(g, rng.normals(n)).values()) {
    s += z;
    s2 += z * z;
  }
  const double m = s / n, var = s2 / n - m * m;
  EXPECT_LE(std::abs(m - mean), 3 * sd / std::sqrt(n));
  // Standard error of the sample variance for a Gaussian is var * sqrt(2/(n-1)).
  EXPECT_LE(std::abs(var - sd * sd), 3 * sd * sd * std::sqrt(2.0 / (n - 1)));
}

TEST(Reparameterize, DifferentiableInMeanAndStd) {
  const std::vector<double> eps{0.3, -1.1};
  Rng rng(11);
  EXPECT_LE(grad_check(
                [&](Tape&, const Tensor& x) {
                  Tensor z = reparameterize({scale(x, 0.5), softplus(x)}, eps);
                  return sum(mul(z, z));
                },
                random_array({2}, rng)),
            1e-6);
}

TEST(GaussianKl, AnalyticCases) {
  Tape tape;
  auto g = [&](std::vector<double> m, std::vector<double> s) {
    return DiagonalGaussian{tape.constant(Array::vector(m)), tape.constant(Array::vector(s))};
  };
  EXPECT_EQ(gaussian_kl(g({0.3, -1}, {2, 0.5}), g({0.3, -1}, {2, 0.5})).item(), 0.0);
  EXPECT_NEAR(gaussian_kl(g({1, 0}, {1, 1}), g({0, 0}, {1, 1})).item(), 0.5, 1e-15);
  // ln 2 + 0.25 - 0.5 plus -ln 2 + 2.125 - 0.5; the logs cancel.
  EXPECT_NEAR(gaussian_kl(g({0.5, -0.5}, {0.5, 2}), g({0, 0}, {1, 1})).item(), 1.375, 1e-12);
  EXPECT_THROW(gaussian_kl(g({0}, {0}), g({0}, {1})), DomainError);
  EXPECT_THROW(gaussian_kl(g({0, 0}, {1, 1}), g({0}, {1})), DimensionError);
}

TEST(GaussianKl, MonteCarloOracle) {
  GaussianValues q{{0.5, -0.5}, {0.5, 2.0}}, p{{0, 0}, {1, 1}};
  const double kl = gaussian_kl(q, p);
  Rng rng(12);
  const int n = 1000000;
  double s = 0, s2 = 0;
  std::vector<double> z(2);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < 2; ++d) z[d] = q.mean[d] + q.std[d] * rng.normal();
    const double v = log_density(q, z) - log_density(p, z);
    s += v;
    s2 += v * v;
  }
  const double m = s / n, se = std::sqrt((s2 / n - m * m) / n);
  EXPECT_LE(std::abs(m - kl), 3 * se) << "analytic " << kl << " monte carlo " << m;
}

TEST(GaussianKl, NonNegativeAndZeroOnlyAtEquality) {
  Rng rng(13);
  for (int i = 0; i < 500; ++i) {
    GaussianValues q{rng.normals(4), {}}, p{rng.normals(4), {}};
    for (int d = 0; d < 4; ++d) {
      q.std.push_back(0.1 + 3 * rng.uniform());
      p.std.push_back(0.1 + 3 * rng.uniform());
    }
    EXPECT_GT(gaussian_kl(q, p), 0.0);
    EXPECT_LE(std::abs(gaussian_kl(q, q)), 1e-12);
  }
}

TEST(DecodeUtterance, ShapesAndConditioningContract) {
  Rng rng(14);
  for (ModelKind k : all_kinds()) {
    Model m = make_model(k, 20);
    Tape tape;
    Conditioning cond;
    if (k != ModelKind::vhred_zonly) cond.h_cxt = tape.constant(random_array({6}, rng));
    if (k != ModelKind::hred) cond.z_utt = tape.constant(random_array({3}, rng));
    if (k == ModelKind::vhcr) cond.z_conv = tape.constant(random_array({3}, rng));
    EXPECT_EQ(decode_utterance(tape, m, cond, kUtt).shape(), (Shape{4, 20}));
    Conditioning wrong = cond;
    wrong.z_utt = wrong.z_utt ? std::nullopt : std::optional<Tensor>(tape.constant(random_array({3}, rng)));
    EXPECT_THROW(decode_utterance(tape, m, wrong, kUtt), ContractError) << to_string(k);
    EXPECT_THROW(decode_utterance(tape, m, cond, std::vector<TokenId>{}), ContractError);
    EXPECT_THROW(decode_utterance(tape, m, cond, kUtt, std::vector<std::uint8_t>{0, 1}), DimensionError);
  }
}

TEST(DecodeUtterance, WordDropMasks) {
  Rng rng(15);
  Model m = make_model(ModelKind::vhred, 20);
  Tape tape;
  Conditioning cond{tape.constant(random_array({6}, rng)), tape.constant(random_array({3}, rng)), std::nullopt};
  const auto plain = to_vec(decode_utterance(tape, m, cond, kUtt));
  EXPECT_EQ(to_vec(decode_utterance(tape, m, cond, kUtt, std::vector<std::uint8_t>(4, 0))), plain);

  // Saturated mask: each conditioned-on token becomes UNK, SOS stays.
  const auto dropped = to_vec(decode_utterance(tape, m, cond, kUtt, std::vector<std::uint8_t>(4, 1)));
  const std::vector<TokenId> unk_targets{kUnk, kUnk, kUnk, kEos};
  const auto oracle = to_vec(decode_utterance(tape, m, cond, unk_targets));
  EXPECT_EQ(dropped, oracle);
  // The first row only sees SOS, so it is unaffected.
  for (std::size_t v = 0; v < 20; ++v) EXPECT_EQ(dropped[v], plain[v]);
  EXPECT_NE(dropped, plain);
}

TEST(DecodeUtterance, GradientWithRespectToLatent) {
  Rng rng(16);
  for (ModelKind k : {ModelKind::vhred, ModelKind::vhred_zonly, ModelKind::vhcr}) {
    Model m = make_model(k, 15);
    const Array h = random_array({6}, rng), zc = random_array({3}, rng);
    auto f = [&](Tape& t, const Tensor& z) {
      Conditioning cond;
      if (k != ModelKind::vhred_zonly) cond.h_cxt = t.constant(h);
      cond.z_utt = z;
      if (k == ModelKind::vhcr) cond.z_conv = t.constant(zc);
      return log_softmax_nll(decode_utterance(t, m, cond, kUtt), kUtt, std::vector<std::uint8_t>(4, 1));
    };
    EXPECT_LE(grad_check(f, random_array({3}, rng)), 1e-4) << to_string(k);
  }
}

TEST(ForwardConversation, TraceContentsPerKind) {
  auto d = toy_data(3, 5, 5);
  const Conversation& conv = d.convs[0];
  const std::size_t n = conv.size();
  for (ModelKind k : all_kinds()) {
    Model m = make_model(k, d.vocab.size());
    Tape tape;
    NoiseSource noise = NoiseSource::gaussian(3);
    ForwardTrace tr = forward_conversation(tape, m, conv, {}, noise);
    EXPECT_EQ(tr.contexts.size(), n);
    const std::size_t first = k == ModelKind::vhcr ? 0 : 1;
    ASSERT_EQ(tr.steps.size(), n - first) << to_string(k);
    for (std::size_t i = 0; i < tr.steps.size(); ++i) {
      const auto& s = tr.steps[i];
      EXPECT_EQ(s.index, first + i);
      EXPECT_EQ(s.targets, conv.utterances[first + i]);
      EXPECT_EQ(s.logits.shape(), (Shape{s.targets.size(), d.vocab.size()}));
      EXPECT_EQ(s.prior.has_value(), k != ModelKind::hred);
      EXPECT_EQ(s.posterior.has_value(), k != ModelKind::hred);
      EXPECT_EQ(s.z_utt.has_value(), k != ModelKind::hred);
      if (s.posterior) {
        for (double v : s.posterior->std.values()) EXPECT_GT(v, 0.0);
      }
    }
    EXPECT_EQ(tr.z_conv.has_value(), k == ModelKind::vhcr);
    EXPECT_EQ(tr.conv_posterior.has_value(), k == ModelKind::vhcr);
    EXPECT_EQ(tr.word_count(), target_word_count(m.config(), conv));
  }
}

TEST(ForwardConversation, VhcrDrawCount) {
  auto d = toy_data(2, 5, 4);
  Model m = make_model(ModelKind::vhcr, d.vocab.size());
  // Replaying the same stream by hand: z_conv first, then one z_utt per target.
  Tape tape;
  NoiseSource noise = NoiseSource::gaussian(77);
  ForwardTrace tr = forward_conversation(tape, m, d.convs[0], {}, noise);
  Rng replay(77);
  std::vector<double> expected_conv = replay.normals(3);
  const auto zc = to_vec(*tr.z_conv);
  const auto post = GaussianValues::of(*tr.conv_posterior);
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(zc[i], post.mean[i] + post.std[i] * expected_conv[i]);
  for (const auto& s : tr.steps) {
    auto eps = replay.normals(3);
    auto pg = GaussianValues::of(*s.posterior);
    auto z = to_vec(*s.z_utt);
    for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(z[i], pg.mean[i] + pg.std[i] * eps[i]);
  }
  EXPECT_EQ(noise.draw(1), replay.normals(1));
}

TEST(ForwardConversation, ZeroNoiseRepeatsBitExactly) {
  auto d = toy_data(2);
  for (ModelKind k : all_kinds()) {
    Model m = make_model(k, d.vocab.size());
    std::vector<std::vector<double>> runs[2];
    for (auto& run : runs) {
      Tape tape;
      NoiseSource noise = NoiseSource::zero();
      for (const auto& s : forward_conversation(tape, m, d.convs[1], {}, noise).steps) run.push_back(to_vec(s.logits));
    }
    EXPECT_EQ(runs[0], runs[1]) << to_string(k);
  }
}

TEST(ForwardConversation, NoTargetLeakage) {
  auto d = toy_data(2, 5, 5);
  for (ModelKind k : {ModelKind::hred, ModelKind::vhred, ModelKind::vhred_zonly}) {
    Model m = make_model(k, d.vocab.size());
    const Conversation& base = d.convs[0];
    for (std::size_t t = 1; t + 1 < base.size(); ++t) {
      Conversation perturbed = base;
      perturbed.utterances[t + 1] = {4, 4, 6, kEos};
      Tape tape;
      NoiseSource n1 = NoiseSource::zero(), n2 = NoiseSource::zero();
      auto a = forward_conversation(tape, m, base, {}, n1);
      auto b = forward_conversation(tape, m, perturbed, {}, n2);
      for (std::size_t s = 0; s < a.steps.size() && a.steps[s].index <= t; ++s)
        EXPECT_EQ(to_vec(a.steps[s].logits), to_vec(b.steps[s].logits)) << to_string(k) << " target " << t;
    }
  }
}

TEST(ForwardConversation, UtteranceDropUsesUnkVector) {
  auto d = toy_data(2, 5, 4);
  Model m = make_model(ModelKind::vhred, d.vocab.size());
  const Conversation& conv = d.convs[0];
  DropPlan all;
  all.utterances.assign(conv.size(), 1);
  // With every h_enc replaced, the context chain no longer depends on the text.
  Conversation other = conv;
  for (std::size_t t = 0; t + 1 < other.size(); ++t) other.utterances[t] = {4, kEos};
  Tape tape;
  NoiseSource n1 = NoiseSource::zero(), n2 = NoiseSource::zero();
  auto a = forward_conversation(tape, m, conv, all, n1);
  auto b = forward_conversation(tape, m, other, all, n2);
  for (std::size_t t = 0; t < conv.size(); ++t) EXPECT_EQ(to_vec(a.contexts[t]), to_vec(b.contexts[t]));

  EXPECT_THROW(
      {
        NoiseSource n = NoiseSource::zero();
        forward_conversation(tape, m, conv, DropPlan{{1}, {}}, n);
      },
      DimensionError);
  Conversation tiny{"tiny", {{4, kEos}}};
  NoiseSource n = NoiseSource::zero();
  EXPECT_THROW(forward_conversation(tape, m, tiny, {}, n), ContractError);
}

class ModelGradient : public ::testing::TestWithParam<ModelKind> {};

TEST_P(ModelGradient, ObjectivePassesGradientCheck) {
  for (std::uint64_t instance = 0; instance < 10; ++instance) {
    auto report = vhcr::testing::model_gradient_check(GetParam(), instance);
    EXPECT_LE(report.max_relative_error, 1e-4) << "instance " << instance << ": " << report.worst_parameter << "["
                                                << report.worst_index << "] over " << report.coordinates;
  }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, ModelGradient, ::testing::ValuesIn(all_kinds()),
                         [](const auto& info) { return to_string(info.param); });
