#pragma once

#include <iosfwd>
#include <vector>

#include "phrasemem/corpus.hpp"
#include "phrasemem/decoder.hpp"
#include "phrasemem/model.hpp"

namespace phrasemem {

struct Choice {
  enum class Kind { word, phrase } kind = Kind::word;
  int word = 0;               // when kind == word
  std::size_t candidate = 0;  // when kind == phrase
  double logp = 0.0;
};

struct Translation {
  Tokens tokens;              // EOS not included
  std::vector<Choice> choices;
  double score = 0.0;         // sum of log step probabilities
  std::size_t emitted = 0;    // output tokens, EOS included when produced
  bool finished = false;      // ended with EOS

  double normalized_score() const;
};

struct SearchOptions {
  std::size_t max_len = 50;
  std::size_t beam = 1;
  std::ostream* trace = nullptr;  // greedy only
};

// Per-sentence input for search: ids, tags and the phrase candidates.
// Baseline models ignore the candidates.
Translation decode_greedy(const Model& model, const Vocabulary& target_vocab,
                          const ParallelExample& input, const SearchOptions& options);
Translation decode_beam(const Model& model, const Vocabulary& target_vocab,
                        const ParallelExample& input, const SearchOptions& options);
// Dispatches on options.beam (1 = greedy).
Translation translate(const Model& model, const Vocabulary& target_vocab,
                      const ParallelExample& input, const SearchOptions& options);

// Word ids that may be emitted: everything except PAD and BOS.
bool selectable_word(int id);

}  // namespace phrasemem
