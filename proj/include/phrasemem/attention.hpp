#pragma once

#include <vector>

#include "phrasemem/encoder.hpp"

namespace phrasemem {

// Tagged annotations and their scorer projection, rebuilt whenever tags change.
struct AttentionMemory {
  ad::Tensor annotations;  // annotation_dim x length
  ad::Tensor keys;         // hidden x length, att.W_h applied to every column
  std::size_t tag_version = 0;
};

AttentionMemory attention_memory(ad::Graph& g, const Model& model, const EncodedSource& source);

struct AttentionResult {
  ad::Tensor context;  // annotation_dim x 1
  ad::Tensor weights;  // 1 x length, zero on masked positions
};

// score_j = v . tanh(W_s s_prev + W_h h'_j + W_e e_prev + b), normalized over
// unmasked positions; context = sum_j alpha_j h'_j.
AttentionResult attend(ad::Graph& g, const Model& model, const AttentionMemory& memory,
                       const ad::Tensor& s_prev, const ad::Tensor& e_prev,
                       const std::vector<bool>* source_mask = nullptr);

}  // namespace phrasemem
