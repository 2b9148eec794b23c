#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "phrasemem/model.hpp"
#include "phrasemem/phrase_memory.hpp"
#include "phrasemem/tensor.hpp"

namespace phrasemem {

struct GruWeights {
  ad::Tensor W_z, U_z, b_z;
  ad::Tensor W_r, U_r, b_r;
  ad::Tensor W_h, U_h, b_h;
};

GruWeights bind_gru(ad::Graph& g, const ad::ParameterSet& params, std::string_view prefix);

// z = sigmoid(W_z x + U_z s + b_z)
// r = sigmoid(W_r x + U_r s + b_r)
// candidate = tanh(W_h x + U_h (r * s) + b_h)
// s' = (1 - z) * s + z * candidate
ad::Tensor gru_cell(const GruWeights& w, const ad::Tensor& x, const ad::Tensor& s_prev);

// Bidirectional annotations plus the per-position phrase tags. Only the tag
// block ever changes after encoding.
class EncodedSource {
 public:
  EncodedSource() = default;
  EncodedSource(ad::Tensor h, ad::Tensor backward_first, std::vector<double> tags,
                std::size_t max_phrases);

  std::size_t length() const { return length_; }
  std::size_t max_phrases() const { return max_phrases_; }

  // 2*hidden x length; column i is [forward_i; backward_i].
  const ad::Tensor& annotations() const { return h_; }
  // Backward state after reading the whole sentence (position 0).
  const ad::Tensor& backward_first() const { return backward_first_; }

  double tag(std::size_t position, std::size_t slot) const {
    return tags_[slot * length_ + position];
  }
  // max_phrases x length, row-major.
  const std::vector<double>& tags() const { return tags_; }
  void zero_tags(Span span);
  std::size_t tag_version() const { return tag_version_; }

  // (2*hidden + max_phrases) x length: annotations stacked over tags.
  ad::Tensor tagged() const;

 private:
  ad::Tensor h_;
  ad::Tensor backward_first_;
  std::vector<double> tags_;
  std::size_t length_ = 0;
  std::size_t max_phrases_ = 0;
  std::size_t tag_version_ = 0;
};

// `tag_matrix` is length x max_phrases, row-major, as produced by annotate().
EncodedSource encode(ad::Graph& g, const Model& model, std::span<const int> source_ids,
                     std::span<const double> tag_matrix);

}  // namespace phrasemem
