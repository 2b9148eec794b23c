#pragma once

// A fixed two-sentence problem small enough for exhaustive finite
// differences: one in-vocabulary gold phrase, one gold phrase whose target
// contains an out-of-vocabulary token, and a matched phrase that the
// reference does not use.

#include <vector>

#include "phrasemem/corpus.hpp"
#include "phrasemem/model.hpp"

namespace phrasemem {

struct ToyProblem {
  Vocabulary source_vocab;
  Vocabulary target_vocab;
  PhraseTable table;
  ModelConfig config;
  std::vector<ParallelExample> examples;
};

// d_e = 8, d_h = 12, |V| = 20, n_p = 3. With `with_phrases` false the same
// sentences are built without a table.
ToyProblem gradient_toy(Variant variant, bool with_phrases = true);

}  // namespace phrasemem
