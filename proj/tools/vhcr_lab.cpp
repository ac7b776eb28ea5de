// vhcr-lab: train, evaluate, sample from and diagnose hierarchical latent
// variable dialogue models.

#include <iostream>

#include "CLI11.hpp"
#include "vhcr/cli.hpp"

int main(int argc, char** argv) {
  using namespace vhcr;
  CLI::App app{"Hierarchical latent-variable dialogue models at desk scale"};
  app.require_subcommand(1);

  TrainOptions train;
  std::uint64_t train_seed = 0;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", train.config_path, "Run config (key = value)")->required();
  auto* train_seed_opt = train_cmd->add_option("--seed", train_seed, "Override the training seed");
  auto* train_out_opt = train_cmd->add_option("--out", train_out, "Override out_dir");
  train_cmd->add_flag("--resume", train.resume, "Continue from <out_dir>/last");

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Report the bound, KL split, IW-NLL and embedding metrics");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--split", eval.split, "train, valid or test")->capture_default_str();
  std::string eval_corpus;
  auto* eval_corpus_opt = eval_cmd->add_option("--corpus", eval_corpus, "Override the corpus path");
  eval_cmd->add_option("--iw-samples", eval.iw_samples, "Importance samples for the NLL estimate (0: skip)");
  std::string eval_emb;
  auto* eval_emb_opt = eval_cmd->add_option("--embeddings", eval_emb, "Embedding table for response metrics");
  eval_cmd->add_option("--seed", eval.seed, "Evaluation noise seed")->capture_default_str();

  GenerateOptions gen;
  std::string gen_mode = "respond";
  std::string gen_context, gen_out;
  bool gen_sample = false;
  auto* gen_cmd = app.add_subcommand("generate", "Write JSONL samples");
  gen_cmd->add_option("--checkpoint", gen.checkpoint, "Checkpoint directory")->required();
  gen_cmd->add_option("--mode", gen_mode, "respond, rollout3, interpolate or fixed-zconv")->capture_default_str();
  auto* gen_context_opt = gen_cmd->add_option("--context", gen_context, "Context file (.jsonl records or text lines)");
  gen_cmd->add_option("--seed", gen.seed, "Noise seed (first endpoint for interpolate)")->capture_default_str();
  gen_cmd->add_option("--seed-b", gen.seed_b, "Second endpoint seed for interpolate")->capture_default_str();
  gen_cmd->add_option("--points", gen.points, "Interpolation points")->capture_default_str();
  gen_cmd->add_option("--samples", gen.samples, "Samples for fixed-zconv")->capture_default_str();
  gen_cmd->add_option("--turns", gen.turns, "Turns per rollout for interpolate/fixed-zconv")->capture_default_str();
  gen_cmd->add_option("--max-len", gen.decode.max_len, "Maximum response length")->capture_default_str();
  gen_cmd->add_flag("--sample", gen_sample, "Sample tokens instead of greedy decoding");
  gen_cmd->add_option("--temperature", gen.decode.temperature, "Sampling temperature")->capture_default_str();
  gen_cmd->add_flag("--allow-unk", gen.decode.allow_unk, "Let the decoder emit <unk>");
  gen_cmd->add_flag("--spherical", gen.spherical, "Spherical instead of linear interpolation");
  auto* gen_out_opt = gen_cmd->add_option("--out", gen_out, "Output file (default stdout)");

  DiagnoseOptions diag;
  std::string diag_ckpt, diag_csv, diag_corpus;
  auto* diag_cmd = app.add_subcommand("diagnose", "Prior variance ratio, KL decomposition, KL trajectory");
  auto* diag_ckpt_opt = diag_cmd->add_option("--checkpoint", diag_ckpt, "Checkpoint directory");
  auto* diag_csv_opt = diag_cmd->add_option("--metrics", diag_csv, "Training metric CSV");
  diag_cmd->add_option("--split", diag.split, "train, valid or test")->capture_default_str();
  auto* diag_corpus_opt = diag_cmd->add_option("--corpus", diag_corpus, "Override the corpus path");
  diag_cmd->add_option("--seed", diag.seed, "Evaluation noise seed")->capture_default_str();

  SyntheticConfig synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic topic corpus as JSONL");
  synth_cmd->add_option("--out", synth_out, "Output JSONL path")->required();
  synth_cmd->add_option("--convs", synth.num_convs, "Conversations")->capture_default_str();
  synth_cmd->add_option("--topics", synth.num_topics, "Topics")->capture_default_str();
  synth_cmd->add_option("--utterances", synth.utterances_per_conv, "Utterances per conversation")
      ->capture_default_str();
  synth_cmd->add_option("--vocab", synth.vocab_size, "Word types")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitBadInput;
  }

  if (train_cmd->parsed()) {
    if (*train_seed_opt) train.seed = train_seed;
    if (*train_out_opt) train.out_dir = train_out;
    return cmd_train(train, std::cout, std::cerr);
  }
  if (eval_cmd->parsed()) {
    if (*eval_corpus_opt) eval.corpus = eval_corpus;
    if (*eval_emb_opt) eval.embeddings = eval_emb;
    return cmd_eval(eval, std::cout, std::cerr);
  }
  if (gen_cmd->parsed()) {
    try {
      gen.mode = parse_generate_mode(gen_mode);
    } catch (const ConfigError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitBadInput;
    }
    if (*gen_context_opt) gen.context = gen_context;
    if (*gen_out_opt) gen.out_path = gen_out;
    gen.decode.mode = gen_sample ? DecodeMode::sample : DecodeMode::greedy;
    return cmd_generate(gen, std::cout, std::cerr);
  }
  if (diag_cmd->parsed()) {
    if (*diag_ckpt_opt) diag.checkpoint = diag_ckpt;
    if (*diag_csv_opt) diag.metrics_csv = diag_csv;
    if (*diag_corpus_opt) diag.corpus = diag_corpus;
    return cmd_diagnose(diag, std::cout, std::cerr);
  }
  return cmd_synth(synth, synth_out, std::cout, std::cerr);
}
