#pragma once

// Conversation ingestion: tokenizer, vocabulary, encoding, splits and batches.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "vhcr/errors.hpp"
#include "vhcr/ops.hpp"
#include "vhcr/rng.hpp"

namespace vhcr {

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kSos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr std::size_t kNumSpecials = 4;
inline constexpr std::size_t kDefaultMaxUtteranceLen = 30;

inline bool is_split_punctuation(char c) {
  switch (c) {
    case '.': case ',': case '!': case '?': case ';': case ':': case '\'': case '"': case '(': case ')':
      return true;
    default:
      return false;
  }
}

// Lowercases ASCII, splits on whitespace and emits each of .,!?;:'"() as its own token.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      flush();
    } else if (is_split_punctuation(ch)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
    }
  }
  flush();
  return out;
}

inline std::vector<std::string> truncate_utterance(std::vector<std::string> tokens,
                                                   std::size_t max_len = kDefaultMaxUtteranceLen) {
  if (tokens.size() > max_len) tokens.resize(max_len);
  return tokens;
}

class Vocabulary {
 public:
  Vocabulary() {
    for (const char* s : {"<pad>", "<unk>", "<sos>", "<eos>"}) push(s);
  }

  // Appends the non-special tokens in id order (id 4 onward).
  explicit Vocabulary(const std::vector<std::string>& tokens) : Vocabulary() {
    for (const auto& t : tokens) {
      if (ids_.count(t)) throw ConfigError("vocabulary: duplicate token '" + t + "'");
      push(t);
    }
  }

  std::size_t size() const { return tokens_.size(); }

  TokenId id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return ids_.count(token) > 0; }

  const std::string& token(TokenId id) const {
    if (id >= tokens_.size()) throw RangeError("vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }

  std::vector<TokenId> encode(const std::vector<std::string>& tokens) const {
    std::vector<TokenId> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

  // Maps ids back to strings, dropping a trailing EOS.
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const {
    std::vector<std::string> out;
    for (TokenId i : ids) {
      if (i == kEos) break;
      out.push_back(token(i));
    }
    return out;
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void push(const std::string& t) {
    ids_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

inline bool is_special_token(const std::string& t) {
  return t == "<pad>" || t == "<unk>" || t == "<sos>" || t == "<eos>";
}

// Specials plus the (max_size - 4) most frequent tokens with count >= min_freq;
// equal counts are ordered lexicographically.
inline Vocabulary build_vocab_from_counts(const std::map<std::string, std::size_t>& counts, std::size_t max_size,
                                          std::size_t min_freq) {
  if (max_size <= kNumSpecials) {
    throw ConfigError("build_vocab: max_size must exceed " + std::to_string(kNumSpecials) + ", got " +
                      std::to_string(max_size));
  }
  std::vector<std::pair<std::string, std::size_t>> admitted;
  for (const auto& [tok, n] : counts) {
    if (n >= min_freq && !is_special_token(tok)) admitted.emplace_back(tok, n);
  }
  std::stable_sort(admitted.begin(), admitted.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (admitted.size() > max_size - kNumSpecials) admitted.resize(max_size - kNumSpecials);
  std::vector<std::string> tokens;
  tokens.reserve(admitted.size());
  for (auto& [tok, n] : admitted) tokens.push_back(tok);
  return Vocabulary(tokens);
}

inline Vocabulary build_vocab(const std::vector<std::vector<std::string>>& token_streams, std::size_t max_size,
                              std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  for (const auto& stream : token_streams)
    for (const auto& t : stream) ++counts[t];
  return build_vocab_from_counts(counts, max_size, min_freq);
}

// Text form, as stored in corpus files.
struct RawConversation {
  std::string id;
  std::vector<std::string> utterances;
};

// Encoded form: every utterance is token ids terminated by exactly one EOS.
struct Conversation {
  std::string id;
  std::vector<std::vector<TokenId>> utterances;

  std::size_t size() const { return utterances.size(); }
};

inline std::vector<TokenId> encode_utterance_text(const std::string& text, const Vocabulary& vocab,
                                                  std::size_t max_len = kDefaultMaxUtteranceLen) {
  auto ids = vocab.encode(truncate_utterance(tokenize(text), max_len));
  ids.push_back(kEos);
  return ids;
}

inline Conversation encode_conversation(const RawConversation& raw, const Vocabulary& vocab,
                                        std::size_t max_len = kDefaultMaxUtteranceLen) {
  if (raw.utterances.size() < 2) {
    throw ContractError("conversation '" + raw.id + "' has " + std::to_string(raw.utterances.size()) +
                        " utterances; at least 2 are required");
  }
  Conversation c;
  c.id = raw.id;
  for (const auto& u : raw.utterances) c.utterances.push_back(encode_utterance_text(u, vocab, max_len));
  return c;
}

// Tokenized (and truncated) utterances of a set of conversations, for vocabulary counting.
inline std::vector<std::vector<std::string>> token_streams(const std::vector<RawConversation>& convs,
                                                          std::size_t max_len = kDefaultMaxUtteranceLen) {
  std::vector<std::vector<std::string>> out;
  for (const auto& c : convs)
    for (const auto& u : c.utterances) out.push_back(truncate_utterance(tokenize(u), max_len));
  return out;
}

template <class T>
struct Splits {
  std::vector<T> train;
  std::vector<T> valid;
  std::vector<T> test;
};

// Seeded shuffle, then floor(n * ratio) items for valid and test and the remainder for train.
template <class T>
Splits<T> split_dataset(const std::vector<T>& items, std::array<double, 3> ratios, std::uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0) {
    throw ConfigError("split_dataset: ratios must be non-negative and sum to 1");
  }
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const double n = static_cast<double>(items.size());
  const auto n_valid = static_cast<std::size_t>(std::floor(n * ratios[1] + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(n * ratios[2] + 1e-9));
  const std::size_t n_train = items.size() - n_valid - n_test;
  Splits<T> s;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const T& item = items[order[i]];
    if (i < n_train) s.train.push_back(item);
    else if (i < n_train + n_valid) s.valid.push_back(item);
    else s.test.push_back(item);
  }
  return s;
}

// Padded view of a group of conversations. Rows are utterances, in
// conversation order; boundaries[b]..boundaries[b+1] are conversation b's rows.
struct Batch {
  std::vector<std::size_t> conversations;  // indices into the split
  std::size_t rows = 0;
  std::size_t max_len = 0;
  std::vector<TokenId> tokens;      // rows x max_len
  std::vector<std::uint8_t> mask;   // rows x max_len
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> boundaries;

  TokenId token(std::size_t r, std::size_t t) const { return tokens[r * max_len + t]; }
  std::uint8_t mask_at(std::size_t r, std::size_t t) const { return mask[r * max_len + t]; }
};

inline Batch make_batch(const std::vector<Conversation>& split, const std::vector<std::size_t>& indices) {
  Batch b;
  b.conversations = indices;
  b.boundaries.push_back(0);
  for (std::size_t i : indices) {
    for (const auto& u : split[i].utterances) {
      b.lengths.push_back(u.size());
      b.max_len = std::max(b.max_len, u.size());
    }
    b.boundaries.push_back(b.lengths.size());
  }
  b.rows = b.lengths.size();
  b.tokens.assign(b.rows * b.max_len, kPad);
  b.mask.assign(b.rows * b.max_len, 0);
  std::size_t r = 0;
  for (std::size_t i : indices) {
    for (const auto& u : split[i].utterances) {
      for (std::size_t t = 0; t < u.size(); ++t) {
        b.tokens[r * b.max_len + t] = u[t];
        b.mask[r * b.max_len + t] = 1;
      }
      ++r;
    }
  }
  return b;
}

// One epoch of batches in seeded-shuffle order; the last batch may be partial.
inline std::vector<Batch> make_batches(const std::vector<Conversation>& split, std::size_t batch_size,
                                       std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(split.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    out.push_back(make_batch(split, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                             order.begin() + static_cast<std::ptrdiff_t>(end))));
  }
  return out;
}

// ---- files ----------------------------------------------------------------

// JSON Lines: {"id": string, "utterances": [string, ...]} per line. Blank lines are skipped.
inline std::vector<RawConversation> read_corpus(std::istream& in, const std::string& source = "<stream>") {
  std::vector<RawConversation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      RawConversation c;
      c.id = j.at("id").get<std::string>();
      c.utterances = j.at("utterances").get<std::vector<std::string>>();
      out.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": malformed conversation record: " + e.what());
    }
  }
  return out;
}

inline std::vector<RawConversation> read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus file: " + path);
  return read_corpus(in, path);
}

inline void write_corpus(std::ostream& out, const std::vector<RawConversation>& convs) {
  for (const auto& c : convs) {
    nlohmann::json j{{"id", c.id}, {"utterances", c.utterances}};
    out << j.dump() << '\n';
  }
}

// One token per line; line k (0-based) holds id k + 4.
inline void write_vocab(std::ostream& out, const Vocabulary& vocab) {
  for (std::size_t i = kNumSpecials; i < vocab.size(); ++i) out << vocab.token(static_cast<TokenId>(i)) << '\n';
}

inline Vocabulary read_vocab(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(tokens);
}

}  // namespace vhcr
