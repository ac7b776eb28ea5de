#include "vhcr/cli.hpp"

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

namespace vhcr {

PreparedData prepare_data(const RunConfig& cfg, const std::optional<Vocabulary>& vocab) {
  if (cfg.corpus.empty()) throw ConfigError("no corpus path configured");
  if (!std::filesystem::exists(cfg.corpus)) throw ConfigError("corpus file not found: " + cfg.corpus);
  auto raw = read_corpus_file(cfg.corpus);
  PreparedData d;
  std::vector<RawConversation> usable;
  for (auto& r : raw) {
    if (r.utterances.size() < 2) {
      ++d.skipped;
      continue;
    }
    usable.push_back(std::move(r));
  }
  auto split = split_dataset(usable, {1.0 - cfg.valid_ratio - cfg.test_ratio, cfg.valid_ratio, cfg.test_ratio},
                             cfg.split_seed);
  d.vocab = vocab ? *vocab
                  : build_vocab(token_streams(split.train, cfg.max_utterance_len), cfg.vocab_max_size,
                                cfg.vocab_min_freq);
  auto encode = [&](const std::vector<RawConversation>& in) {
    std::vector<Conversation> out;
    for (const auto& r : in) out.push_back(encode_conversation(r, d.vocab, cfg.max_utterance_len));
    return out;
  };
  d.splits = {encode(split.train), encode(split.valid), encode(split.test)};
  return d;
}

const std::vector<Conversation>& pick_split(const PreparedData& d, const std::string& name) {
  if (name == "train") return d.splits.train;
  if (name == "valid") return d.splits.valid;
  if (name == "test") return d.splits.test;
  throw ConfigError("unknown split '" + name + "' (expected train, valid or test)");
}

namespace {

// Maps library exceptions onto exit codes with a one-line message.
template <class F>
int run_command(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitBadInput;
  } catch (const UnsupportedKindError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUnsupportedKind;
  } catch (const IntegrityError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIntegrity;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

std::vector<std::string> decode_text(const Vocabulary& vocab, std::span<const TokenId> ids) {
  return response_tokens(ids, vocab);
}

std::string join(const std::vector<std::string>& tokens) {
  std::string s;
  for (const auto& t : tokens) {
    if (!s.empty()) s += ' ';
    s += t;
  }
  return s;
}

}  // namespace

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  return run_command(err, [&] {
    RunConfig cfg = read_config_file(opt.config_path);
    if (opt.seed) cfg.train.seed = *opt.seed;
    if (opt.out_dir) cfg.out_dir = *opt.out_dir;
    namespace fs = std::filesystem;
    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);

    std::optional<LoadedCheckpoint> resumed;
    if (opt.resume) {
      resumed.emplace(load_checkpoint((dir / "last").string()));
      if (!resumed->state) throw IntegrityError("checkpoint '" + (dir / "last").string() + "' has no optimizer state");
    }
    PreparedData data = prepare_data(cfg, resumed ? resumed->vocab : std::nullopt);
    cfg.model.vocab_size = data.vocab.size();
    if (data.skipped) err << "warning: skipped " << data.skipped << " conversations with fewer than 2 utterances\n";

    Model model = resumed ? std::move(resumed->model) : Model(cfg.model, cfg.train.seed);
    if (model.config() != cfg.model) throw IntegrityError("checkpoint model does not match the configuration");
    const nlohmann::json snapshot = config_snapshot(cfg);

    Trainer trainer(model, data.splits.train, data.splits.valid, cfg.train);
    if (resumed) trainer.state() = std::move(*resumed->state);
    trainer.on_best = [&](const TrainState& s) {
      save_checkpoint((dir / "best").string(), model, &s, snapshot, &data.vocab);
    };

    const auto mode = opt.resume ? std::ios::app : std::ios::trunc;
    std::ofstream metrics(dir / "metrics.csv", mode);
    std::ofstream diags(dir / "diagnostics.csv", mode);
    if (!metrics || !diags) throw ConfigError("cannot write logs in '" + dir.string() + "'");
    if (!opt.resume) {
      metrics << kMetricCsvHeader << '\n';
      diags << kDiagnosticCsvHeader << '\n';
      if (auto d = trainer.diagnostic_row(); d && cfg.train.diag_every > 0) write_diagnostic_row(diags, *d);
    }
    trainer.run([&](const MetricRow& r) { write_metric_row(metrics, r); },
                [&](const DiagnosticRow& d) { write_diagnostic_row(diags, d); });
    save_checkpoint((dir / "last").string(), model, &trainer.state(), snapshot, &data.vocab);
    if (!fs::exists(dir / "best")) save_checkpoint((dir / "best").string(), model, &trainer.state(), snapshot, &data.vocab);
    for (const auto& w : trainer.warnings()) err << "warning: " << w << '\n';
    out << "trained " << to_string(cfg.model.kind) << " for " << trainer.state().step << " steps"
        << (trainer.state().stopped ? " (early stop)" : "") << "; outputs in " << dir.string() << '\n';
    return kExitOk;
  });
}

ResponseGenerator model_response_generator(const Model& m, std::uint64_t seed) {
  auto counter = std::make_shared<std::size_t>(0);
  return [&m, seed, counter](const std::vector<std::vector<TokenId>>& context, std::size_t turns) {
    NoiseSource noise = NoiseSource::gaussian(mix_seed(seed, (*counter)++));
    DecodeConfig dc;
    dc.seed = seed;
    return rollout(m, context, turns, dc, noise).responses;
  };
}

int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
  return run_command(err, [&] {
    LoadedCheckpoint ck = load_checkpoint(opt.checkpoint);
    RunConfig cfg = config_from_snapshot(ck.config);
    if (opt.corpus) cfg.corpus = *opt.corpus;
    PreparedData data = prepare_data(cfg, ck.vocab);
    const auto& split = pick_split(data, opt.split);
    if (split.empty()) throw ConfigError("split '" + opt.split + "' is empty");
    const Model& m = ck.model;

    const LossBreakdown b = evaluate_bound(m, split, opt.seed).breakdown(1.0);
    out << "kind: " << to_string(m.kind()) << '\n';
    out << "split: " << opt.split << " (" << split.size() << " conversations, " << b.word_count << " words)\n";
    out << "recon_per_word: " << format_double(b.recon_per_word) << '\n';
    if (m.config().has_latent()) {
      out << "kl_total_per_word: " << format_double(b.kl_per_word()) << '\n';
      out << "kl_conv_per_word: " << format_double(b.kl_conv_per_word) << '\n';
      out << "kl_utt_per_word: " << format_double(b.kl_utt_per_word) << '\n';
    }
    out << "bound_per_word: " << format_double(b.bound_per_word()) << '\n';
    if (opt.iw_samples > 0) {
      NllEstimate e = estimate_nll(m, split, opt.iw_samples, opt.seed);
      out << "iw_nll_per_word: " << format_double(e.nll_per_word) << " (K=" << opt.iw_samples
          << ", se " << format_double(e.standard_error) << ")\n";
    }
    if (opt.embeddings) {
      EmbeddingTable table = read_embeddings_file(*opt.embeddings);
      for (std::size_t turns : {1u, 3u}) {
        std::vector<Conversation> usable;
        for (const auto& c : split)
          if (c.size() >= turns + 1) usable.push_back(c);
        if (usable.empty()) {
          out << "metrics_" << turns << "turn: no conversations with enough context\n";
          continue;
        }
        MetricReport r = evaluate_split(usable, turns, table, data.vocab, model_response_generator(m, opt.seed));
        out << "metrics_" << turns << "turn: average " << format_double(r.average) << " extrema "
            << format_double(r.extrema) << " greedy " << format_double(r.greedy) << " (used " << r.used
            << ", skipped " << r.skipped << ")\n";
      }
    }
    return kExitOk;
  });
}

GenerateMode parse_generate_mode(const std::string& s) {
  if (s == "respond") return GenerateMode::respond;
  if (s == "rollout3") return GenerateMode::rollout3;
  if (s == "interpolate") return GenerateMode::interpolate;
  if (s == "fixed-zconv") return GenerateMode::fixed_zconv;
  throw ConfigError("unknown generate mode '" + s + "' (expected respond, rollout3, interpolate or fixed-zconv)");
}

std::vector<std::vector<std::string>> read_contexts(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("context file not found: " + path);
  std::vector<std::vector<std::string>> out;
  if (std::filesystem::path(path).extension() == ".jsonl") {
    for (auto& r : read_corpus_file(path)) out.push_back(std::move(r.utterances));
    return out;
  }
  std::ifstream in(path);
  std::vector<std::string> ctx;
  for (std::string line; std::getline(in, line);)
    if (line.find_first_not_of(" \t\r") != std::string::npos) ctx.push_back(line);
  out.push_back(std::move(ctx));
  return out;
}

nlohmann::json rollout_record(const std::vector<std::string>& context, const Rollout& r,
                                     const Vocabulary& vocab, std::uint64_t seed) {
  nlohmann::json responses = nlohmann::json::array();
  for (const auto& ids : r.responses) responses.push_back(join(decode_text(vocab, ids)));
  return {{"context", context},
          {"responses", responses},
          {"z_conv", r.z_conv ? nlohmann::json(*r.z_conv) : nlohmann::json(nullptr)},
          {"seed", seed}};
}

std::vector<double> standard_normal_latent(std::size_t dim, std::uint64_t seed) {
  return Rng(seed).normals(dim);
}

int cmd_generate(const GenerateOptions& opt, std::ostream& out, std::ostream& err) {
  return run_command(err, [&] {
    LoadedCheckpoint ck = load_checkpoint(opt.checkpoint);
    if (!ck.vocab) throw IntegrityError("checkpoint '" + opt.checkpoint + "' has no vocabulary");
    const Model& m = ck.model;
    const Vocabulary& vocab = *ck.vocab;
    const RunConfig cfg = config_from_snapshot(ck.config);
    const bool needs_conv = opt.mode == GenerateMode::interpolate || opt.mode == GenerateMode::fixed_zconv;
    if (needs_conv && !m.config().has_conv()) {
      throw UnsupportedKindError("generate mode requires a VHCR checkpoint, got " + to_string(m.kind()));
    }

    std::ofstream file;
    if (opt.out_path) {
      file.open(*opt.out_path);
      if (!file) throw ConfigError("cannot write '" + *opt.out_path + "'");
    }
    std::ostream& sink = opt.out_path ? static_cast<std::ostream&>(file) : out;
    auto encode_context = [&](const std::vector<std::string>& ctx) {
      std::vector<std::vector<TokenId>> ids;
      for (const auto& u : ctx) ids.push_back(encode_utterance_text(u, vocab, cfg.max_utterance_len));
      return ids;
    };

    switch (opt.mode) {
      case GenerateMode::respond:
      case GenerateMode::rollout3: {
        if (!opt.context) throw ConfigError("--context is required for this mode");
        const std::size_t turns = opt.mode == GenerateMode::respond ? 1 : 3;
        auto contexts = read_contexts(*opt.context);
        for (std::size_t i = 0; i < contexts.size(); ++i) {
          const std::uint64_t seed = mix_seed(opt.seed, i);
          NoiseSource noise = NoiseSource::gaussian(seed);
          DecodeConfig dc = opt.decode;
          dc.seed = seed;
          Rollout r = rollout(m, encode_context(contexts[i]), turns, dc, noise);
          sink << rollout_record(contexts[i], r, vocab, seed).dump() << '\n';
        }
        break;
      }
      case GenerateMode::interpolate: {
        const std::size_t lat = m.config().latent_dim;
        auto za = standard_normal_latent(lat, opt.seed);
        auto zb = standard_normal_latent(lat, opt.seed_b);
        DecodeConfig dc = opt.decode;
        dc.seed = opt.seed;
        auto rolls = interpolate_zconv(m, za, zb, opt.points, opt.turns, dc, opt.seed, opt.spherical);
        for (const auto& r : rolls) sink << rollout_record({}, r, vocab, opt.seed).dump() << '\n';
        break;
      }
      case GenerateMode::fixed_zconv: {
        std::vector<std::string> ctx;
        std::vector<double> z;
        if (opt.context) {
          ctx = read_contexts(*opt.context).at(0);
          NoiseSource noise = NoiseSource::gaussian(opt.seed);
          z = sample_zconv(m, encode_context(ctx), noise);
        } else {
          z = standard_normal_latent(m.config().latent_dim, opt.seed);
        }
        DecodeConfig dc = opt.decode;
        dc.seed = opt.seed;
        auto rolls = generate_fixed_zconv(m, z, opt.samples, opt.turns, dc, opt.seed);
        for (std::size_t s = 0; s < rolls.size(); ++s) {
          sink << rollout_record(ctx, rolls[s], vocab, mix_seed(opt.seed, s)).dump() << '\n';
        }
        break;
      }
    }
    return kExitOk;
  });
}

MetricColumns read_metric_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("metric log not found: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMetricCsvHeader) {
    throw ConfigError(path + ": missing or unexpected header");
  }
  MetricColumns c;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() < 5) throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 6 columns");
    try {
      c.steps.push_back(std::stod(f[0]));
      c.recon.push_back(std::stod(f[2]));
      c.kl_total.push_back(std::stod(f[3]) + std::stod(f[4]));
    } catch (const std::exception&) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  return c;
}

int cmd_diagnose(const DiagnoseOptions& opt, std::ostream& out, std::ostream& err) {
  return run_command(err, [&] {
    if (!opt.checkpoint && !opt.metrics_csv) throw ConfigError("diagnose needs --checkpoint and/or --metrics");
    if (opt.checkpoint) {
      LoadedCheckpoint ck = load_checkpoint(*opt.checkpoint);
      RunConfig cfg = config_from_snapshot(ck.config);
      if (opt.corpus) cfg.corpus = *opt.corpus;
      PreparedData data = prepare_data(cfg, ck.vocab);
      const auto& split = pick_split(data, opt.split);
      out << "kind: " << to_string(ck.model.kind()) << '\n';
      if (ck.model.config().has_latent()) {
        PriorStats s = prior_variance_ratio(collect_priors(ck.model, split, opt.seed));
        out << "within_variance: " << format_double(s.within_variance) << '\n';
        out << "between_variance: " << format_double(s.between_variance) << '\n';
        out << "variance_ratio: " << format_double(s.ratio) << (s.degenerate_between ? " (degenerate-between)" : "")
            << '\n';
        KlDecomposition kl = kl_decomposition(ck.model, split, opt.seed);
        out << "kl_total_per_word: " << format_double(kl.total) << " = conv " << format_double(kl.conv) << " + utt "
            << format_double(kl.utt) << '\n';
      } else {
        out << "variance_ratio: n/a (no latent variables)\n";
      }
    }
    if (opt.metrics_csv) {
      MetricColumns c = read_metric_csv(*opt.metrics_csv);
      if (c.steps.empty()) throw ConfigError(*opt.metrics_csv + ": no metric rows");
      TrajectorySummary s = summarize_trajectory(c.steps, c.kl_total);
      out << "kl_first: " << format_double(s.first) << '\n';
      out << "kl_last: " << format_double(s.last) << '\n';
      out << "kl_min: " << format_double(s.min) << '\n';
      out << "kl_last_quartile_slope: " << format_double(s.last_quartile_slope) << '\n';
    }
    return kExitOk;
  });
}

int cmd_synth(const SyntheticConfig& sc, const std::string& out_path, std::ostream& out, std::ostream& err) {
  return run_command(err, [&] {
    auto convs = generate_synthetic_corpus(sc);
    std::ofstream file(out_path);
    if (!file) throw ConfigError("cannot write '" + out_path + "'");
    write_corpus(file, raw_conversations(convs));
    out << "wrote " << convs.size() << " conversations to " << out_path << '\n';
    return kExitOk;
  });
}

}  // namespace vhcr
