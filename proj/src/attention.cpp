#include "phrasemem/attention.hpp"

#include <algorithm>

namespace phrasemem {

using ad::Tensor;

AttentionMemory attention_memory(ad::Graph& g, const Model& model, const EncodedSource& source) {
  AttentionMemory m;
  m.annotations = source.tagged();
  m.keys = ad::matmul(g.param(model.param("att.W_h")), m.annotations);
  m.tag_version = source.tag_version();
  return m;
}

AttentionResult attend(ad::Graph& g, const Model& model, const AttentionMemory& memory,
                       const Tensor& s_prev, const Tensor& e_prev,
                       const std::vector<bool>* source_mask) {
  const std::size_t n = memory.annotations.shape().cols;
  if (source_mask) {
    if (source_mask->size() != n) throw ad::DimensionError("attention mask length mismatch");
    if (std::none_of(source_mask->begin(), source_mask->end(), [](bool b) { return b; }))
      throw ad::ContractError("attention over a fully masked source");
  }
  const Tensor query = ad::add(ad::add(ad::matmul(g.param(model.param("att.W_s")), s_prev),
                                       ad::matmul(g.param(model.param("att.W_e")), e_prev)),
                               g.param(model.param("att.b")));
  const Tensor hidden = ad::tanh(ad::add_to_columns(memory.keys, query));
  const Tensor scores = ad::matmul(g.param(model.param("att.v")), hidden);  // 1 x n
  const Tensor alpha = source_mask ? ad::softmax(scores, *source_mask) : ad::softmax(scores);
  const Tensor context = ad::matmul(memory.annotations, ad::reshape(alpha, ad::vector_shape(n)));
  return {context, alpha};
}

}  // namespace phrasemem
