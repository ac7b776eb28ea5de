#pragma once

// Synthetic topic corpus for desk-scale degeneracy experiments.
//
// Each conversation draws a topic and a preferred template. Every utterance
// follows the preferred template with probability 0.75 (otherwise a uniformly
// chosen one of the topic's templates) and fills its slots with either
// topic-block words (topic unigram, Zipf weights) or shared words (global
// unigram). Topic and template preference are conversation-level facts, so a
// global latent variable has something real to encode.

#include <string>
#include <vector>

#include "vhcr/corpus.hpp"
#include "vhcr/rng.hpp"

namespace vhcr {

struct SyntheticConfig {
  std::size_t num_convs = 200;
  std::size_t num_topics = 4;
  std::size_t utterances_per_conv = 4;
  std::size_t vocab_size = 60;
  std::uint64_t seed = 1;
  std::size_t templates_per_topic = 3;
  std::size_t min_words = 3;
  std::size_t max_words = 6;
  double template_stickiness = 0.75;
};

struct SyntheticConversation {
  RawConversation conversation;
  std::size_t topic = 0;
};

namespace detail {

inline std::size_t sample_zipf(Rng& rng, std::size_t n) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += 1.0 / static_cast<double>(i + 1);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < n; ++i) {
    u -= 1.0 / static_cast<double>(i + 1);
    if (u < 0) return i;
  }
  return n - 1;
}

}  // namespace detail

inline std::vector<SyntheticConversation> generate_synthetic_corpus(const SyntheticConfig& cfg) {
  if (cfg.num_topics == 0 || cfg.vocab_size < cfg.num_topics * 10) {
    throw ConfigError("synthetic corpus: vocab_size (" + std::to_string(cfg.vocab_size) +
                      ") must be at least 10 * num_topics (" + std::to_string(cfg.num_topics) + ")");
  }
  if (cfg.utterances_per_conv < 2) throw ConfigError("synthetic corpus: need at least 2 utterances per conversation");
  if (cfg.min_words == 0 || cfg.max_words < cfg.min_words || cfg.templates_per_topic == 0) {
    throw ConfigError("synthetic corpus: bad template length range");
  }
  const std::size_t block = cfg.vocab_size / (cfg.num_topics + 1);
  const std::size_t shared = cfg.vocab_size - cfg.num_topics * block;

  Rng rng(cfg.seed);
  // Per topic: a list of templates, each a slot sequence (true = topic word).
  std::vector<std::vector<std::vector<bool>>> templates(cfg.num_topics);
  // Per topic: a private permutation of its block, so Zipf ranks differ between topics.
  std::vector<std::vector<std::size_t>> topic_rank(cfg.num_topics);
  for (std::size_t k = 0; k < cfg.num_topics; ++k) {
    for (std::size_t m = 0; m < cfg.templates_per_topic; ++m) {
      const std::size_t len = cfg.min_words + rng.below(cfg.max_words - cfg.min_words + 1);
      std::vector<bool> slots(len);
      std::size_t topical = 0;
      for (std::size_t s = 0; s < len; ++s) {
        slots[s] = rng.bernoulli(0.6);
        topical += slots[s];
      }
      for (std::size_t s = 0; topical * 2 < len && s < len; ++s) {
        if (!slots[s]) {
          slots[s] = true;
          ++topical;
        }
      }
      templates[k].push_back(std::move(slots));
    }
    topic_rank[k].resize(block);
    for (std::size_t j = 0; j < block; ++j) topic_rank[k][j] = j;
    rng.shuffle(topic_rank[k]);
  }

  std::vector<SyntheticConversation> out;
  out.reserve(cfg.num_convs);
  for (std::size_t c = 0; c < cfg.num_convs; ++c) {
    SyntheticConversation sc;
    sc.topic = rng.below(cfg.num_topics);
    sc.conversation.id = "synth-" + std::to_string(c);
    const std::size_t preferred = rng.below(cfg.templates_per_topic);
    for (std::size_t u = 0; u < cfg.utterances_per_conv; ++u) {
      const std::size_t m = rng.bernoulli(cfg.template_stickiness) ? preferred : rng.below(cfg.templates_per_topic);
      std::string text;
      for (bool topical : templates[sc.topic][m]) {
        if (!text.empty()) text += ' ';
        if (topical) {
          const std::size_t j = topic_rank[sc.topic][detail::sample_zipf(rng, block)];
          text += "t" + std::to_string(sc.topic) + "w" + std::to_string(j);
        } else {
          text += "s" + std::to_string(detail::sample_zipf(rng, shared));
        }
      }
      sc.conversation.utterances.push_back(std::move(text));
    }
    out.push_back(std::move(sc));
  }
  return out;
}

inline std::vector<RawConversation> raw_conversations(const std::vector<SyntheticConversation>& synth) {
  std::vector<RawConversation> out;
  out.reserve(synth.size());
  for (const auto& s : synth) out.push_back(s.conversation);
  return out;
}

}  // namespace vhcr
