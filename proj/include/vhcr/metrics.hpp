#pragma once

// Embedding-based response metrics: average, extrema and greedy matching.

#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "vhcr/corpus.hpp"

namespace vhcr {

class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }

  void add(const std::string& token, std::vector<double> v) {
    if (dim_ == 0 && vectors_.empty()) dim_ = v.size();
    if (v.size() != dim_) {
      throw DimensionError("embedding for '" + token + "' has " + std::to_string(v.size()) +
                           " values, table dimension is " + std::to_string(dim_));
    }
    vectors_[token] = std::move(v);
  }

  const std::vector<double>* find(const std::string& token) const {
    auto it = vectors_.find(token);
    return it == vectors_.end() ? nullptr : &it->second;
  }

 private:
  std::size_t dim_;
  std::unordered_map<std::string, std::vector<double>> vectors_;
};

// "token v1 ... vd" per line, optionally preceded by a "count dim" header.
inline EmbeddingTable read_embeddings(std::istream& in, const std::string& source = "<stream>") {
  EmbeddingTable table;
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::size_t> declared_count;
  auto fail = [&](const std::string& msg) { throw ConfigError(source + ":" + std::to_string(lineno) + ": " + msg); };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::vector<std::string> fields;
    for (std::string f; ls >> f;) fields.push_back(f);
    if (fields.empty()) continue;
    if (lineno == 1 && fields.size() == 2) {
      std::size_t count = 0, dim = 0;
      std::size_t p1 = 0, p2 = 0;
      try {
        count = std::stoul(fields[0], &p1);
        dim = std::stoul(fields[1], &p2);
      } catch (const std::exception&) {
        p1 = 0;
      }
      if (p1 == fields[0].size() && p2 == fields[1].size() && dim > 0) {
        declared_count = count;
        table = EmbeddingTable(dim);
        continue;
      }
    }
    if (fields.size() < 2) fail("expected a token followed by its vector");
    std::vector<double> v;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      std::size_t pos = 0;
      double x = 0.0;
      try {
        x = std::stod(fields[i], &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != fields[i].size() || !std::isfinite(x)) fail("bad number '" + fields[i] + "'");
      v.push_back(x);
    }
    if (table.dim() != 0 && v.size() != table.dim()) {
      fail("expected " + std::to_string(table.dim()) + " values, found " + std::to_string(v.size()));
    }
    table.add(fields[0], std::move(v));
  }
  if (declared_count && *declared_count != table.size()) {
    throw ConfigError(source + ": header declares " + std::to_string(*declared_count) + " vectors, file has " +
                      std::to_string(table.size()));
  }
  return table;
}

inline EmbeddingTable read_embeddings_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open embedding file '" + path + "'");
  return read_embeddings(in, path);
}

// Cosine similarity; 0 when either vector is all zeros.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  // sqrt(na * na) == na exactly, so identical vectors score exactly 1.
  return dot / std::sqrt(na * nb);
}

namespace detail {

inline std::vector<const std::vector<double>*> lookup_all(const std::vector<std::string>& tokens,
                                                          const EmbeddingTable& table) {
  std::vector<const std::vector<double>*> out;
  for (const auto& t : tokens)
    if (const auto* v = table.find(t)) out.push_back(v);
  return out;
}

inline std::vector<double> mean_vector(const std::vector<const std::vector<double>*>& vs, std::size_t dim) {
  std::vector<double> m(dim, 0.0);
  for (const auto* v : vs)
    for (std::size_t d = 0; d < dim; ++d) m[d] += (*v)[d];
  for (double& x : m) x /= static_cast<double>(vs.size());
  return m;
}

// Per dimension, the value of largest magnitude; +x wins a tie with -x.
inline std::vector<double> extrema_vector(const std::vector<const std::vector<double>*>& vs, std::size_t dim) {
  std::vector<double> e(dim, 0.0);
  for (std::size_t d = 0; d < dim; ++d) {
    double best = (*vs[0])[d];
    for (const auto* v : vs) {
      const double x = (*v)[d];
      if (std::abs(x) > std::abs(best) || (std::abs(x) == std::abs(best) && x > best)) best = x;
    }
    e[d] = best;
  }
  return e;
}

inline double greedy_direction(const std::vector<const std::vector<double>*>& from,
                               const std::vector<const std::vector<double>*>& to) {
  double total = 0.0;
  for (const auto* a : from) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto* b : to) best = std::max(best, cosine(*a, *b));
    total += best;
  }
  return total / static_cast<double>(from.size());
}

}  // namespace detail

// Each metric is nullopt when either side has no in-table token.
inline std::optional<double> metric_average(const std::vector<std::string>& response,
                                            const std::vector<std::string>& reference, const EmbeddingTable& table) {
  auto r = detail::lookup_all(response, table);
  auto g = detail::lookup_all(reference, table);
  if (r.empty() || g.empty()) return std::nullopt;
  return cosine(detail::mean_vector(r, table.dim()), detail::mean_vector(g, table.dim()));
}

inline std::optional<double> metric_extrema(const std::vector<std::string>& response,
                                            const std::vector<std::string>& reference, const EmbeddingTable& table) {
  auto r = detail::lookup_all(response, table);
  auto g = detail::lookup_all(reference, table);
  if (r.empty() || g.empty()) return std::nullopt;
  return cosine(detail::extrema_vector(r, table.dim()), detail::extrema_vector(g, table.dim()));
}

// Mean of both alignment directions.
inline std::optional<double> metric_greedy(const std::vector<std::string>& response,
                                           const std::vector<std::string>& reference, const EmbeddingTable& table) {
  auto r = detail::lookup_all(response, table);
  auto g = detail::lookup_all(reference, table);
  if (r.empty() || g.empty()) return std::nullopt;
  return 0.5 * (detail::greedy_direction(r, g) + detail::greedy_direction(g, r));
}

struct MetricReport {
  double average = 0.0;
  double extrema = 0.0;
  double greedy = 0.0;
  std::size_t used = 0;     // (sample, turn) pairs with defined metrics
  std::size_t skipped = 0;  // pairs where a side had no in-table token
};

// Produces `turns` responses (token ids) for a context.
using ResponseGenerator =
    std::function<std::vector<std::vector<TokenId>>(const std::vector<std::vector<TokenId>>& context, std::size_t turns)>;

inline std::vector<std::string> response_tokens(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (TokenId id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kSos) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

// For each conversation, the last `turns` utterances are references and the
// rest is context. Each metric is averaged per turn over samples, then over turns.
inline MetricReport evaluate_split(const std::vector<Conversation>& split, std::size_t turns,
                                   const EmbeddingTable& table, const Vocabulary& vocab,
                                   const ResponseGenerator& generate) {
  if (turns != 1 && turns != 3) throw ConfigError("evaluate_split: turns must be 1 or 3");
  std::vector<double> avg(turns, 0.0), ext(turns, 0.0), grd(turns, 0.0);
  std::vector<std::size_t> count(turns, 0);
  MetricReport rep;
  for (const auto& conv : split) {
    if (conv.size() < turns + 1) throw ContractError("evaluate_split: conversation '" + conv.id + "' is too short");
    std::vector<std::vector<TokenId>> context(conv.utterances.begin(),
                                              conv.utterances.end() - static_cast<std::ptrdiff_t>(turns));
    auto responses = generate(context, turns);
    if (responses.size() != turns) throw ContractError("evaluate_split: generator returned the wrong number of turns");
    for (std::size_t j = 0; j < turns; ++j) {
      auto r = response_tokens(responses[j], vocab);
      auto g = response_tokens(conv.utterances[conv.size() - turns + j], vocab);
      auto a = metric_average(r, g, table);
      if (!a) {
        ++rep.skipped;
        continue;
      }
      avg[j] += *a;
      ext[j] += *metric_extrema(r, g, table);
      grd[j] += *metric_greedy(r, g, table);
      ++count[j];
      ++rep.used;
    }
  }
  std::size_t defined_turns = 0;
  for (std::size_t j = 0; j < turns; ++j) {
    if (count[j] == 0) continue;
    const double n = static_cast<double>(count[j]);
    rep.average += avg[j] / n;
    rep.extrema += ext[j] / n;
    rep.greedy += grd[j] / n;
    ++defined_turns;
  }
  if (defined_turns > 0) {
    rep.average /= static_cast<double>(defined_turns);
    rep.extrema /= static_cast<double>(defined_turns);
    rep.greedy /= static_cast<double>(defined_turns);
  }
  return rep;
}

}  // namespace vhcr
