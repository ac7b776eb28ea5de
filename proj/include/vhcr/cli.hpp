#pragma once

// vhcr-lab commands: train, eval, generate, diagnose, synth. Each returns a
// process exit status and reports through the given streams.

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vhcr/checkpoint.hpp"
#include "vhcr/config.hpp"
#include "vhcr/diagnostics.hpp"
#include "vhcr/generation.hpp"
#include "vhcr/metrics.hpp"
#include "vhcr/synthetic.hpp"
#include "vhcr/training.hpp"

namespace vhcr {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitBadInput = 2,
  kExitUnsupportedKind = 3,
  kExitIntegrity = 4,
};

struct PreparedData {
  Vocabulary vocab;
  Splits<Conversation> splits;
  std::size_t skipped = 0;  // conversations with fewer than 2 utterances
};

// Reads the corpus, splits it and encodes it. The vocabulary is built from the
// training split unless one is supplied (e.g. from a checkpoint).
PreparedData prepare_data(const RunConfig& cfg, const std::optional<Vocabulary>& vocab = std::nullopt);

const std::vector<Conversation>& pick_split(const PreparedData& d, const std::string& name);

// ---- train -----------------------------------------------------------------

struct TrainOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  bool resume = false;
};

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err);

// ---- eval ------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint;
  std::string split = "test";
  std::optional<std::string> corpus;
  std::size_t iw_samples = 0;
  std::optional<std::string> embeddings;
  std::uint64_t seed = 1;
};

// Greedy responses with prior z^utt noise; conversation k uses mix_seed(seed, k).
ResponseGenerator model_response_generator(const Model& m, std::uint64_t seed);

int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err);

// ---- generate --------------------------------------------------------------

enum class GenerateMode { respond, rollout3, interpolate, fixed_zconv };

GenerateMode parse_generate_mode(const std::string& s);

struct GenerateOptions {
  std::string checkpoint;
  GenerateMode mode = GenerateMode::respond;
  std::optional<std::string> context;  // .jsonl corpus records, or plain text with one utterance per line
  std::uint64_t seed = 1;
  std::uint64_t seed_b = 2;  // second endpoint for interpolate
  std::size_t points = 5;
  std::size_t samples = 5;
  std::size_t turns = 1;
  DecodeConfig decode;
  bool spherical = false;
  std::optional<std::string> out_path;
};

// Contexts from a file: each JSONL record is one context; plain text is one
// context with one utterance per non-blank line.
std::vector<std::vector<std::string>> read_contexts(const std::string& path);

nlohmann::json rollout_record(const std::vector<std::string>& context, const Rollout& r,
                                     const Vocabulary& vocab, std::uint64_t seed);

std::vector<double> standard_normal_latent(std::size_t dim, std::uint64_t seed);

int cmd_generate(const GenerateOptions& opt, std::ostream& out, std::ostream& err);

// ---- diagnose --------------------------------------------------------------

struct DiagnoseOptions {
  std::optional<std::string> checkpoint;
  std::optional<std::string> metrics_csv;
  std::string split = "valid";
  std::optional<std::string> corpus;
  std::uint64_t seed = 1;
};

struct MetricColumns {
  std::vector<double> steps;
  std::vector<double> kl_total;
  std::vector<double> recon;
};

MetricColumns read_metric_csv(const std::string& path);

int cmd_diagnose(const DiagnoseOptions& opt, std::ostream& out, std::ostream& err);

// ---- synth -----------------------------------------------------------------

int cmd_synth(const SyntheticConfig& sc, const std::string& out_path, std::ostream& out, std::ostream& err);

}  // namespace vhcr
