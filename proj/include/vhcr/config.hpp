#pragma once

// Flat `key = value` run configuration with `#` comments.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <string>

#include "json.hpp"
#include "vhcr/training.hpp"

namespace vhcr {

struct RunConfig {
  std::string corpus;
  std::string out_dir = "runs/toy";
  ModelConfig model;  // vocab_size is filled in once the vocabulary is built
  std::size_t vocab_max_size = 20000;
  std::size_t vocab_min_freq = 1;
  std::size_t max_utterance_len = kDefaultMaxUtteranceLen;
  std::uint64_t split_seed = 1;
  double valid_ratio = 0.05;
  double test_ratio = 0.05;
  TrainConfig train;
};

namespace detail {

inline std::string trim(std::string s) {
  const char* ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  s.erase(s.find_last_not_of(ws) + 1);
  return s;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError("config key '" + key + "': bad value '" + text + "'");
  return v;
}

template <class T>
std::string number_text(T v) {
  if constexpr (std::is_floating_point_v<T>) {
    return format_double(v);
  } else {
    return std::to_string(v);
  }
}

struct ConfigKey {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
ConfigKey number_key(T RunConfig::*field) {
  return {[field](RunConfig& c, const std::string& v) { c.*field = parse_number<T>("", v); },
          [field](const RunConfig& c) { return number_text(c.*field); }};
}

template <class T>
ConfigKey model_key(T ModelConfig::*field) {
  return {[field](RunConfig& c, const std::string& v) { c.model.*field = parse_number<T>("", v); },
          [field](const RunConfig& c) { return number_text(c.model.*field); }};
}

template <class T>
ConfigKey train_key(T TrainConfig::*field) {
  return {[field](RunConfig& c, const std::string& v) { c.train.*field = parse_number<T>("", v); },
          [field](const RunConfig& c) { return number_text(c.train.*field); }};
}

inline const std::map<std::string, ConfigKey>& config_keys() {
  static const std::map<std::string, ConfigKey> keys = {
      {"corpus", {[](RunConfig& c, const std::string& v) { c.corpus = v; }, [](const RunConfig& c) { return c.corpus; }}},
      {"out_dir",
       {[](RunConfig& c, const std::string& v) { c.out_dir = v; }, [](const RunConfig& c) { return c.out_dir; }}},
      {"kind",
       {[](RunConfig& c, const std::string& v) { c.model.kind = parse_model_kind(v); },
        [](const RunConfig& c) { return to_string(c.model.kind); }}},
      {"embed_dim", model_key(&ModelConfig::embed_dim)},
      {"enc_hidden", model_key(&ModelConfig::enc_hidden)},
      {"cxt_hidden", model_key(&ModelConfig::cxt_hidden)},
      {"dec_hidden", model_key(&ModelConfig::dec_hidden)},
      {"latent_dim", model_key(&ModelConfig::latent_dim)},
      {"vocab_max_size", number_key(&RunConfig::vocab_max_size)},
      {"vocab_min_freq", number_key(&RunConfig::vocab_min_freq)},
      {"max_utterance_len", number_key(&RunConfig::max_utterance_len)},
      {"split_seed", number_key(&RunConfig::split_seed)},
      {"valid_ratio", number_key(&RunConfig::valid_ratio)},
      {"test_ratio", number_key(&RunConfig::test_ratio)},
      {"learning_rate", train_key(&TrainConfig::learning_rate)},
      {"clip_norm", train_key(&TrainConfig::clip_norm)},
      {"kl_anneal_steps", train_key(&TrainConfig::kl_anneal_steps)},
      {"word_drop_p", train_key(&TrainConfig::word_drop_p)},
      {"utterance_drop_p", train_key(&TrainConfig::utterance_drop_p)},
      {"bow_weight", train_key(&TrainConfig::bow_weight)},
      {"batch_size", train_key(&TrainConfig::batch_size)},
      {"max_steps", train_key(&TrainConfig::max_steps)},
      {"seed", train_key(&TrainConfig::seed)},
      {"early_stop_patience", train_key(&TrainConfig::early_stop_patience)},
      {"diag_every", train_key(&TrainConfig::diag_every)},
  };
  return keys;
}

}  // namespace detail

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& keys = detail::config_keys();
  auto it = keys.find(key);
  if (it == keys.end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second.set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError("config key '" + key + "': bad value '" + value + "'");
  }
}

inline void validate_run_config(const RunConfig& cfg) {
  if (cfg.max_utterance_len == 0) throw ConfigError("max_utterance_len must be >= 1");
  if (cfg.vocab_max_size <= kNumSpecials) throw ConfigError("vocab_max_size must exceed the 4 special tokens");
  if (cfg.valid_ratio < 0 || cfg.test_ratio < 0 || cfg.valid_ratio + cfg.test_ratio >= 1.0) {
    throw ConfigError("valid_ratio and test_ratio must be non-negative and sum to less than 1");
  }
  cfg.train.validate();
}

// Parses a config stream. A relative corpus path is resolved against base_dir.
inline RunConfig parse_config(std::istream& in, const std::string& source = "<stream>",
                              const std::filesystem::path& base_dir = {}) {
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!cfg.corpus.empty() && !base_dir.empty() && std::filesystem::path(cfg.corpus).is_relative()) {
    cfg.corpus = (base_dir / cfg.corpus).lexically_normal().string();
  }
  validate_run_config(cfg);
  return cfg;
}

inline RunConfig read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path, std::filesystem::path(path).parent_path());
}

// Every key with its effective value; enough to rebuild the run.
inline nlohmann::json config_snapshot(const RunConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, k] : detail::config_keys()) j[key] = k.get(cfg);
  return j;
}

inline RunConfig config_from_snapshot(const nlohmann::json& j) {
  RunConfig cfg;
  for (const auto& [key, value] : j.items()) set_config_value(cfg, key, value.get<std::string>());
  return cfg;
}

}  // namespace vhcr
