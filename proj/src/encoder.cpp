#include "phrasemem/encoder.hpp"

#include <stdexcept>
#include <string>

namespace phrasemem {

using ad::Tensor;

GruWeights bind_gru(ad::Graph& g, const ad::ParameterSet& params, std::string_view prefix) {
  const std::string p(prefix);
  auto bind = [&](const char* name) { return g.param(params.at(p + name)); };
  return GruWeights{bind(".W_z"), bind(".U_z"), bind(".b_z"), bind(".W_r"), bind(".U_r"),
                    bind(".b_r"), bind(".W_h"), bind(".U_h"), bind(".b_h")};
}

Tensor gru_cell(const GruWeights& w, const Tensor& x, const Tensor& s_prev) {
  using namespace ad;
  const Tensor z = sigmoid(add(add(matmul(w.W_z, x), matmul(w.U_z, s_prev)), w.b_z));
  const Tensor r = sigmoid(add(add(matmul(w.W_r, x), matmul(w.U_r, s_prev)), w.b_r));
  const Tensor cand = ad::tanh(add(add(matmul(w.W_h, x), matmul(w.U_h, mul(r, s_prev))), w.b_h));
  return add(mul(one_minus(z), s_prev), mul(z, cand));
}

EncodedSource::EncodedSource(Tensor h, Tensor backward_first, std::vector<double> tags,
                             std::size_t max_phrases)
    : h_(h),
      backward_first_(backward_first),
      tags_(std::move(tags)),
      length_(h.shape().cols),
      max_phrases_(max_phrases) {
  if (tags_.size() != length_ * max_phrases_)
    throw ad::DimensionError("tag block does not match sentence length");
}

void EncodedSource::zero_tags(Span span) {
  if (span.end > length_) throw ad::DimensionError("tag span outside the sentence");
  for (std::size_t s = 0; s < max_phrases_; ++s)
    for (std::size_t i = span.begin; i < span.end; ++i) tags_[s * length_ + i] = 0.0;
  ++tag_version_;
}

Tensor EncodedSource::tagged() const {
  ad::Graph& g = h_.graph();
  const Tensor tags = g.constant({max_phrases_, length_}, tags_);
  return ad::concat_rows({h_, tags});
}

EncodedSource encode(ad::Graph& g, const Model& model, std::span<const int> source_ids,
                     std::span<const double> tag_matrix) {
  const auto& cfg = model.config();
  const std::size_t n = source_ids.size();
  if (n == 0) throw std::invalid_argument("cannot encode an empty sentence");
  if (tag_matrix.size() != n * cfg.max_phrases)
    throw ad::DimensionError("tag matrix must be " + std::to_string(n) + " x " +
                             std::to_string(cfg.max_phrases));

  const Tensor embed = g.param(model.param("enc.embed"));
  const GruWeights fwd = bind_gru(g, model.params(), "enc.fwd");
  const GruWeights bwd = bind_gru(g, model.params(), "enc.bwd");
  const Tensor zero = g.constant(ad::vector_shape(cfg.hidden_dim),
                                 std::vector<double>(cfg.hidden_dim, 0.0));

  std::vector<Tensor> inputs;
  inputs.reserve(n);
  for (int id : source_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.source_vocab)
      throw std::out_of_range("source id " + std::to_string(id) + " outside the vocabulary");
    inputs.push_back(ad::row(embed, static_cast<std::size_t>(id)));
  }

  std::vector<Tensor> forward(n), backward(n);
  Tensor s = zero;
  for (std::size_t i = 0; i < n; ++i) forward[i] = s = gru_cell(fwd, inputs[i], s);
  s = zero;
  for (std::size_t i = n; i-- > 0;) backward[i] = s = gru_cell(bwd, inputs[i], s);

  std::vector<Tensor> columns;
  columns.reserve(n);
  for (std::size_t i = 0; i < n; ++i) columns.push_back(ad::concat_rows({forward[i], backward[i]}));
  const Tensor h = ad::concat_cols(columns);

  std::vector<double> tags(cfg.max_phrases * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < cfg.max_phrases; ++k)
      tags[k * n + i] = tag_matrix[i * cfg.max_phrases + k];
  return EncodedSource(h, backward[0], std::move(tags), cfg.max_phrases);
}

}  // namespace phrasemem
