#pragma once

// Straight-line re-implementation of the model's forward pass over plain
// scalars, with no tape and no code shared with the graph-based modules
// beyond reading parameter values. Instantiated for double (test oracle) and
// long double (finite differences with little roundoff).

#include <string>
#include <utility>
#include <vector>

#include "phrasemem/corpus.hpp"
#include "phrasemem/model.hpp"

namespace phrasemem::reference {

template <class T>
struct State {
  std::vector<T> s;
  int y_prev = Vocabulary::bos;
  std::vector<std::vector<T>> tags;  // [position][slot]
  std::vector<bool> consumed;
};

template <class T>
struct Step {
  std::vector<T> context;
  std::vector<T> e_prev;
};

template <class T>
struct Dist {
  std::vector<T> words;                  // final probability of each word
  std::vector<T> phrases;                // final probabilities, aligned with live
  std::vector<std::size_t> live;         // candidate indices
  T gate = 0;                            // p(z = 1); 0 when not applicable
  std::vector<T> words_given_word_mode;  // gate variant: plain readout softmax
};

template <class T>
class ReferenceModel {
 public:
  using Vec = std::vector<T>;

  explicit ReferenceModel(const Model& model);

  // Encodes the example's source and remembers its candidates.
  void load(const ParallelExample& example);
  State<T> start() const;
  Step<T> step(State<T>& st) const;
  Dist<T> distribution(const State<T>& st, const Step<T>& in) const;
  void consume(State<T>& st, std::size_t candidate) const;

  // p(y | x) summed over every word/phrase mode assignment of the gold
  // phrases (word mode skipped for phrases with out-of-vocabulary tokens).
  T sentence_probability(const ParallelExample& example);
  T sentence_nll(const ParallelExample& example);

  // Greedy decoding with the same tie rule (lowest index, words first).
  Tokens greedy(const ParallelExample& input, const Vocabulary& vocab, std::size_t max_len);

 private:
  struct Mat {
    std::size_t rows = 0, cols = 0;
    Vec v;
    T at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
  };
  const Mat& W(const std::string& name) const;
  Vec mv(const std::string& name, const Vec& x) const;
  Vec gru(const std::string& prefix, const Vec& x, const Vec& h) const;
  Vec embedding(const std::string& table, int id) const;
  Vec readout(const std::string& prefix, const Vec& s, const Vec& c, const Vec& e) const;
  Vec phrase_embedding(const std::vector<int>& ids) const;

  ModelConfig config_;
  std::vector<std::pair<std::string, Mat>> weights_;
  std::vector<Vec> h_;  // annotations per position
  Vec backward_first_;
  std::vector<Vec> tags_;
  std::vector<PhraseCandidate> candidates_;
  bool phrase_mode_disabled_ = false;
};

extern template class ReferenceModel<double>;
extern template class ReferenceModel<long double>;

}  // namespace phrasemem::reference
