#pragma once

// Checkpoint directory: manifest.json + params.bin (little-endian f64) + vocab.txt.

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vhcr/corpus.hpp"
#include "vhcr/training.hpp"

namespace vhcr {

inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;  // bytes
  std::size_t length = 0;  // bytes
};

struct LoadedCheckpoint {
  Model model;
  std::optional<TrainState> state;
  nlohmann::json config;  // snapshot of the flat run configuration
  std::optional<Vocabulary> vocab;
};

namespace detail {

namespace fs = std::filesystem;

inline void put_f64(std::string& buf, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"kind", to_string(c.kind)},           {"embed_dim", c.embed_dim},   {"enc_hidden", c.enc_hidden},
          {"cxt_hidden", c.cxt_hidden},          {"dec_hidden", c.dec_hidden}, {"latent_dim", c.latent_dim},
          {"vocab_size", c.vocab_size}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = parse_model_kind(j.at("kind").get<std::string>());
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.enc_hidden = j.at("enc_hidden").get<std::size_t>();
  c.cxt_hidden = j.at("cxt_hidden").get<std::size_t>();
  c.dec_hidden = j.at("dec_hidden").get<std::size_t>();
  c.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  return c;
}

// Exclusive marker file so two writers never interleave in one directory.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw IntegrityError("checkpoint directory '" + dir.string() + "' is locked by another writer");
    std::fclose(f);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

inline void write_file_atomically(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IntegrityError("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IntegrityError("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot read '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

// Writes parameters, optional optimizer/loop state, config snapshot and vocabulary.
inline void save_checkpoint(const std::string& dir, const Model& model, const TrainState* state,
                            const nlohmann::json& config_snapshot, const Vocabulary* vocab = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  detail::DirectoryLock lock(dir);

  std::string data;
  nlohmann::json entries = nlohmann::json::array();
  auto append = [&](const std::string& name, const Array& a) {
    const std::size_t offset = data.size();
    for (double v : a.data) detail::put_f64(data, v);
    entries.push_back({{"name", name}, {"shape", a.shape}, {"offset", offset}, {"length", data.size() - offset}});
  };
  const ParamStore& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) append(ps[i].name, ps[i].value);
  if (state) {
    for (std::size_t i = 0; i < ps.size(); ++i) append("adam.m/" + ps[i].name, state->adam.m[i]);
    for (std::size_t i = 0; i < ps.size(); ++i) append("adam.v/" + ps[i].name, state->adam.v[i]);
  }

  nlohmann::json manifest = {{"format_version", kCheckpointFormatVersion},
                             {"model", detail::model_config_json(model.config())},
                             {"entries", entries},
                             {"data_bytes", data.size()},
                             {"optimizer", state != nullptr},
                             {"config", config_snapshot}};
  if (state) {
    manifest["adam_step"] = state->adam.step;
    manifest["rng_state"] = state->master.state();
    manifest["step"] = state->step;
    manifest["best_val"] = std::isfinite(state->best_val) ? nlohmann::json(state->best_val) : nlohmann::json(nullptr);
    manifest["bad_epochs"] = state->bad_epochs;
    manifest["stopped"] = state->stopped;
  }
  detail::write_file_atomically(fs::path(dir) / "params.bin", data);
  if (vocab) {
    std::ostringstream vs;
    write_vocab(vs, *vocab);
    detail::write_file_atomically(fs::path(dir) / "vocab.txt", vs.str());
  }
  detail::write_file_atomically(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n");
}

inline LoadedCheckpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(root / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("malformed manifest in '" + dir + "': " + e.what());
  }
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw IntegrityError("checkpoint format_version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kCheckpointFormatVersion) + ")");
    }
    Model model(detail::model_config_from_json(manifest.at("model")), 0);
    const std::string data = detail::read_file(root / "params.bin");
    const bool has_opt = manifest.at("optimizer").get<bool>();

    std::vector<CheckpointEntry> entries;
    for (const auto& e : manifest.at("entries")) {
      entries.push_back({e.at("name").get<std::string>(), e.at("shape").get<Shape>(), e.at("offset").get<std::size_t>(),
                         e.at("length").get<std::size_t>()});
    }

    // Expected parameter set, in manifest order.
    const ParamStore& ps = model.params();
    std::vector<std::string> expected;
    for (std::size_t i = 0; i < ps.size(); ++i) expected.push_back(ps[i].name);
    if (has_opt) {
      for (std::size_t i = 0; i < ps.size(); ++i) expected.push_back("adam.m/" + ps[i].name);
      for (std::size_t i = 0; i < ps.size(); ++i) expected.push_back("adam.v/" + ps[i].name);
    }
    std::vector<std::string> actual;
    for (const auto& e : entries) actual.push_back(e.name);
    if (actual != expected) {
      std::string diff;
      for (const auto& n : expected)
        if (std::find(actual.begin(), actual.end(), n) == actual.end()) diff += "\n  missing: " + n;
      for (const auto& n : actual)
        if (std::find(expected.begin(), expected.end(), n) == expected.end()) diff += "\n  unexpected: " + n;
      if (diff.empty()) diff = "\n  entries are out of order";
      throw IntegrityError("checkpoint parameter set does not match the model:" + diff);
    }

    std::size_t cursor = 0;
    std::vector<Array> arrays;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      const Shape& want = i < ps.size() ? ps[i].value.shape : ps[i % ps.size()].value.shape;
      if (e.shape != want) {
        throw IntegrityError("entry '" + e.name + "' has shape " + shape_str(e.shape) + ", model expects " +
                             shape_str(want));
      }
      if (e.offset != cursor || e.length != numel(e.shape) * 8) {
        throw IntegrityError("entry '" + e.name + "' does not tile the data file (offset " + std::to_string(e.offset) +
                             ", length " + std::to_string(e.length) + ")");
      }
      if (e.offset + e.length > data.size()) {
        throw IntegrityError("entry '" + e.name + "' extends past the end of params.bin (" +
                             std::to_string(data.size()) + " bytes)");
      }
      Array a(e.shape);
      const auto* p = reinterpret_cast<const unsigned char*>(data.data()) + e.offset;
      for (std::size_t k = 0; k < a.data.size(); ++k) a.data[k] = detail::get_f64(p + 8 * k);
      arrays.push_back(std::move(a));
      cursor += e.length;
    }
    if (cursor != data.size()) {
      throw IntegrityError("params.bin has " + std::to_string(data.size() - cursor) + " trailing bytes");
    }

    for (std::size_t i = 0; i < ps.size(); ++i) model.params()[i].value = std::move(arrays[i]);
    LoadedCheckpoint out{std::move(model), std::nullopt, manifest.value("config", nlohmann::json::object()),
                         std::nullopt};
    if (has_opt) {
      TrainState s;
      const std::size_t n = out.model.params().size();
      for (std::size_t i = 0; i < n; ++i) {
        s.adam.m.push_back(std::move(arrays[n + i]));
        s.adam.v.push_back(std::move(arrays[2 * n + i]));
      }
      s.adam.step = manifest.at("adam_step").get<std::size_t>();
      s.master.set_state(manifest.at("rng_state").get<std::string>());
      s.step = manifest.at("step").get<std::size_t>();
      const auto& bv = manifest.at("best_val");
      s.best_val = bv.is_null() ? std::numeric_limits<double>::infinity() : bv.get<double>();
      s.bad_epochs = manifest.at("bad_epochs").get<std::size_t>();
      s.stopped = manifest.at("stopped").get<bool>();
      out.state = std::move(s);
    }
    if (fs::exists(root / "vocab.txt")) {
      std::ifstream vin(root / "vocab.txt");
      out.vocab = read_vocab(vin);
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("malformed manifest in '" + dir + "': " + e.what());
  }
}

}  // namespace vhcr
