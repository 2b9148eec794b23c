#pragma once

#include <optional>
#include <span>
#include <vector>

#include "phrasemem/attention.hpp"
#include "phrasemem/corpus.hpp"
#include "phrasemem/encoder.hpp"
#include "phrasemem/model.hpp"

namespace phrasemem {

// s_t = GRU(s_prev, [c_t; e_prev]) with the dec.gru weights.
ad::Tensor step_state(ad::Graph& g, const Model& model, const ad::Tensor& s_prev,
                      const ad::Tensor& context, const ad::Tensor& e_prev);

// Unnormalized word scores W tanh(U s + C c + V e_prev); the readout family
// follows the model variant (readout.o, or readout.w for softmax).
ad::Tensor word_scores(ad::Graph& g, const Model& model, const ad::Tensor& s,
                       const ad::Tensor& context, const ad::Tensor& e_prev);

// Final state of the phrase.embed GRU run right to left over the tokens'
// target embeddings, from a zero state.
ad::Tensor embed_phrase(ad::Graph& g, const Model& model, std::span<const int> target_ids);

struct DecodeState {
  ad::Tensor s;
  int y_prev = Vocabulary::bos;
  std::size_t step = 0;
  EncodedSource source;         // private copy: tags are zeroed per hypothesis
  std::vector<bool> consumed;   // per candidate
  std::vector<int> pending;     // rest of a phrase during an idle run
  bool awaiting_choice = false; // advance() ran; the next emit_* consumes it
  std::optional<AttentionMemory> memory;

  std::size_t live_count() const;
};

struct StepInputs {
  ad::Tensor s;          // new state s_t
  ad::Tensor context;    // c_t
  ad::Tensor e_prev;     // embedding of y_{t-1}
  ad::Tensor attention;  // 1 x length
};

struct StepScores {
  // log p(word) with the mode factor folded in where it applies.
  ad::Tensor word_logp;
  // log p(word | word mode); equal to word_logp unless the gate is active.
  ad::Tensor word_logp_given_mode;
  // log p(phrase) for each live candidate, aligned with `live`. Invalid when
  // `live` is empty or phrase scores were not requested.
  ad::Tensor phrase_logp;
  std::vector<std::size_t> live;  // candidate indices
  ad::Tensor gate;                // p(z = 1); gate variant with live candidates only

  std::optional<std::size_t> live_position(std::size_t candidate) const;
};

struct StepDistribution {
  std::vector<double> word_probs;
  std::vector<double> phrase_probs;     // aligned with `phrase_candidates`
  std::vector<std::size_t> phrase_candidates;
  std::optional<double> mode_prior;     // gate variant only

  double total() const;
};

// (1 - gate) * word_probs followed by gate * phrase_probs.
StepDistribution mix_gate(double gate, std::span<const double> word_probs,
                          std::span<const double> phrase_probs);

class Decoder {
 public:
  // The baseline variant ignores `candidates`.
  Decoder(ad::Graph& g, const Model& model, EncodedSource source,
          std::vector<PhraseCandidate> candidates);

  DecodeState start();
  // Attends, updates the state and leaves it waiting for a choice.
  StepInputs advance(DecodeState& state);
  StepScores scores(const StepInputs& in, const DecodeState& state, bool with_phrases = true);
  static StepDistribution distribution(const StepScores& scores);

  void emit_word(DecodeState& state, int id) const;
  // Idle run: commits the phrase's first token and steps through the rest
  // without decisions, then consumes the candidate and zeroes its tags.
  // Returns the states produced during the run.
  std::vector<ad::Tensor> emit_phrase(DecodeState& state, std::size_t candidate);

  const std::vector<PhraseCandidate>& candidates() const { return candidates_; }
  const Model& model() const { return model_; }
  ad::Graph& graph() const { return g_; }
  const ad::Tensor& phrase_embedding(std::size_t candidate);

 private:
  StepInputs step(DecodeState& state);

  ad::Graph& g_;
  const Model& model_;
  EncodedSource source_;
  std::vector<PhraseCandidate> candidates_;
  std::vector<std::optional<ad::Tensor>> embeddings_;
};

Decoder make_decoder(ad::Graph& g, const Model& model, const ParallelExample& example);

struct NllResult {
  ad::Tensor loss;                 // -log p(y | x)
  double word_logprob = 0.0;       // sum of log p over plain-word positions
  std::size_t word_count = 0;      // plain-word positions, EOS included
  std::size_t phrase_segments = 0;
  std::vector<double> gate_values; // p(z = 1) at each decision with candidates
};

// Teacher-forced negative log-likelihood. Plain words contribute their word
// probability; a gold phrase of length L contributes
//   log( I_unk * prod_i p(word_i) + p(phrase) )
// and the decoder then continues from the state after its last token.
NllResult sequence_nll(ad::Graph& g, const Model& model, const ParallelExample& example);

}  // namespace phrasemem
