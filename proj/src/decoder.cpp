#include "phrasemem/decoder.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace phrasemem {

using ad::Tensor;

namespace {

Tensor weight(ad::Graph& g, const Model& model, const std::string& name) {
  return g.param(model.param(name));
}

// W tanh(U s + C c + V e)
Tensor readout(ad::Graph& g, const Model& model, const std::string& prefix, const Tensor& s,
               const Tensor& c, const Tensor& e) {
  using namespace ad;
  const Tensor pre = add(add(matmul(weight(g, model, prefix + ".U"), s),
                             matmul(weight(g, model, prefix + ".C"), c)),
                         matmul(weight(g, model, prefix + ".V"), e));
  return matmul(weight(g, model, prefix + ".W"), ad::tanh(pre));
}

Tensor gate_param(ad::Graph& g, const Model& model, const char* name) {
  Tensor t = g.param(model.param(name));
  if (model.gate_gradient_fault != 1.0) t = ad::scale_gradient(t, model.gate_gradient_fault);
  return t;
}

// Logit of p(z = 1 | s, c, e): two tanh layers and a linear output.
Tensor gate_logit(ad::Graph& g, const Model& model, const Tensor& s, const Tensor& c,
                  const Tensor& e) {
  using namespace ad;
  const Tensor x = concat_rows({s, c, e});
  const Tensor h1 = ad::tanh(add(matmul(gate_param(g, model, "gate.A1"), x),
                                 gate_param(g, model, "gate.b1")));
  const Tensor h2 = ad::tanh(add(matmul(gate_param(g, model, "gate.A2"), h1),
                                 gate_param(g, model, "gate.b2")));
  return add(matmul(gate_param(g, model, "gate.a3"), h2), gate_param(g, model, "gate.b3"));
}

std::vector<double> exp_values(const Tensor& t) {
  std::vector<double> out;
  out.reserve(t.size());
  for (double x : t.value()) out.push_back(std::exp(x));
  return out;
}

}  // namespace

Tensor step_state(ad::Graph& g, const Model& model, const Tensor& s_prev, const Tensor& context,
                  const Tensor& e_prev) {
  const auto& c = model.config();
  if (s_prev.shape() != ad::vector_shape(c.hidden_dim) ||
      context.shape() != ad::vector_shape(c.annotation_dim()) ||
      e_prev.shape() != ad::vector_shape(c.embed_dim))
    throw ad::DimensionError("step_state: got state " + s_prev.shape().str() + ", context " +
                             context.shape().str() + ", embedding " + e_prev.shape().str());
  const GruWeights w = bind_gru(g, model.params(), "dec.gru");
  return gru_cell(w, ad::concat_rows({context, e_prev}), s_prev);
}

Tensor word_scores(ad::Graph& g, const Model& model, const Tensor& s, const Tensor& context,
                   const Tensor& e_prev) {
  const char* family = model.config().variant == Variant::softmax ? "readout.w" : "readout.o";
  return readout(g, model, family, s, context, e_prev);
}

Tensor embed_phrase(ad::Graph& g, const Model& model, std::span<const int> target_ids) {
  if (target_ids.empty()) throw std::invalid_argument("cannot embed an empty phrase");
  const auto& c = model.config();
  const Tensor embed = weight(g, model, "dec.embed");
  const GruWeights w = bind_gru(g, model.params(), "phrase.embed");
  Tensor s = g.constant(ad::vector_shape(c.hidden_dim), std::vector<double>(c.hidden_dim, 0.0));
  for (std::size_t i = target_ids.size(); i-- > 0;) {
    const int id = target_ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= c.target_vocab)
      throw std::out_of_range("phrase token id " + std::to_string(id) + " outside the vocabulary");
    s = gru_cell(w, ad::row(embed, static_cast<std::size_t>(id)), s);
  }
  return s;
}

std::size_t DecodeState::live_count() const {
  std::size_t n = 0;
  for (bool c : consumed) n += c ? 0 : 1;
  return n;
}

std::optional<std::size_t> StepScores::live_position(std::size_t candidate) const {
  for (std::size_t i = 0; i < live.size(); ++i)
    if (live[i] == candidate) return i;
  return std::nullopt;
}

double StepDistribution::total() const {
  double t = 0.0;
  for (double p : word_probs) t += p;
  for (double p : phrase_probs) t += p;
  return t;
}

StepDistribution mix_gate(double gate, std::span<const double> word_probs,
                          std::span<const double> phrase_probs) {
  StepDistribution d;
  d.mode_prior = gate;
  for (double p : word_probs) d.word_probs.push_back((1.0 - gate) * p);
  for (std::size_t i = 0; i < phrase_probs.size(); ++i) {
    d.phrase_probs.push_back(gate * phrase_probs[i]);
    d.phrase_candidates.push_back(i);
  }
  return d;
}

Decoder::Decoder(ad::Graph& g, const Model& model, EncodedSource source,
                 std::vector<PhraseCandidate> candidates)
    : g_(g), model_(model), source_(std::move(source)) {
  if (model.config().variant != Variant::baseline) candidates_ = std::move(candidates);
  for (std::size_t i = 0; i < candidates_.size(); ++i) {
    if (candidates_[i].target_ids.empty())
      throw std::invalid_argument("phrase candidate with an empty target side");
    if (candidates_[i].slot >= model.config().max_phrases)
      throw std::out_of_range("phrase candidate slot beyond max_phrases");
  }
  embeddings_.resize(candidates_.size());
}

DecodeState Decoder::start() {
  DecodeState st;
  st.source = source_;
  st.consumed.assign(candidates_.size(), false);
  st.s = ad::tanh(ad::matmul(weight(g_, model_, "dec.init.W"), source_.backward_first()));
  return st;
}

StepInputs Decoder::step(DecodeState& st) {
  if (!st.memory || st.memory->tag_version != st.source.tag_version())
    st.memory = attention_memory(g_, model_, st.source);
  const Tensor e_prev = ad::row(weight(g_, model_, "dec.embed"), static_cast<std::size_t>(st.y_prev));
  const AttentionResult att = attend(g_, model_, *st.memory, st.s, e_prev);
  st.s = step_state(g_, model_, st.s, att.context, e_prev);
  ++st.step;
  return {st.s, att.context, e_prev, att.weights};
}

StepInputs Decoder::advance(DecodeState& st) {
  if (!st.pending.empty()) throw ad::ContractError("advance() during an idle run");
  if (st.awaiting_choice) throw ad::ContractError("advance() before the previous step's choice");
  StepInputs in = step(st);
  st.awaiting_choice = true;
  return in;
}

StepScores Decoder::scores(const StepInputs& in, const DecodeState& st, bool with_phrases) {
  using namespace ad;
  StepScores out;
  const auto& cfg = model_.config();
  if (!model_.phrase_mode_disabled) {
    for (std::size_t i = 0; i < candidates_.size(); ++i)
      if (!st.consumed[i]) out.live.push_back(i);
  }

  const Tensor psi_w = word_scores(g_, model_, in.s, in.context, in.e_prev);
  switch (cfg.variant) {
    case Variant::baseline:
      out.word_logp = out.word_logp_given_mode = log_softmax(psi_w);
      break;

    case Variant::gate: {
      out.word_logp_given_mode = log_softmax(psi_w);
      if (out.live.empty()) {
        out.word_logp = out.word_logp_given_mode;
        break;
      }
      const Tensor logit = gate_logit(g_, model_, in.s, in.context, in.e_prev);
      out.gate = sigmoid(logit);
      out.word_logp = add_scalar(out.word_logp_given_mode, log_sigmoid(scale(logit, -1.0)));
      if (with_phrases) {
        const Tensor psi_slots = readout(g_, model_, "phrase.p", in.s, in.context, in.e_prev);
        std::vector<std::size_t> slots;
        for (std::size_t i : out.live) slots.push_back(candidates_[i].slot);
        out.phrase_logp = add_scalar(log_softmax(gather(psi_slots, slots)), log_sigmoid(logit));
      }
      break;
    }

    case Variant::softmax: {
      if (out.live.empty()) {
        out.word_logp = out.word_logp_given_mode = log_softmax(psi_w);
        break;
      }
      const Tensor base = add(add(matmul(weight(g_, model_, "phrase.q.U"), in.s),
                                  matmul(weight(g_, model_, "phrase.q.C"), in.context)),
                              matmul(weight(g_, model_, "phrase.q.V"), in.e_prev));
      const Tensor R = weight(g_, model_, "phrase.q.R");
      const Tensor Wq = weight(g_, model_, "phrase.q.W");
      std::vector<Tensor> parts{psi_w};
      for (std::size_t i : out.live)
        parts.push_back(matmul(Wq, ad::tanh(add(base, matmul(R, phrase_embedding(i))))));
      const Tensor joint = log_softmax(concat_rows(parts));
      std::vector<std::size_t> words(cfg.target_vocab), phrases(out.live.size());
      for (std::size_t i = 0; i < words.size(); ++i) words[i] = i;
      for (std::size_t i = 0; i < phrases.size(); ++i) phrases[i] = cfg.target_vocab + i;
      out.word_logp = out.word_logp_given_mode = gather(joint, words);
      out.phrase_logp = gather(joint, phrases);
      break;
    }
  }
  return out;
}

StepDistribution Decoder::distribution(const StepScores& sc) {
  StepDistribution d;
  d.word_probs = exp_values(sc.word_logp);
  if (!sc.live.empty() && sc.phrase_logp.valid()) {
    d.phrase_probs = exp_values(sc.phrase_logp);
    d.phrase_candidates = sc.live;
  }
  if (sc.gate.valid()) d.mode_prior = sc.gate.item();
  return d;
}

void Decoder::emit_word(DecodeState& st, int id) const {
  if (!st.awaiting_choice) throw ad::ContractError("emit_word() without a pending step");
  if (id < 0 || static_cast<std::size_t>(id) >= model_.config().target_vocab)
    throw std::out_of_range("target id " + std::to_string(id) + " outside the vocabulary");
  st.y_prev = id;
  st.awaiting_choice = false;
}

std::vector<Tensor> Decoder::emit_phrase(DecodeState& st, std::size_t candidate) {
  if (!st.awaiting_choice) throw ad::ContractError("emit_phrase() without a pending step");
  if (candidate >= candidates_.size()) throw ad::ContractError("no such phrase candidate");
  if (st.consumed[candidate]) throw ad::ContractError("phrase candidate already consumed");
  const auto& ids = candidates_[candidate].target_ids;
  std::vector<Tensor> trajectory;
  st.y_prev = ids.front();
  st.pending.assign(ids.begin() + 1, ids.end());
  st.awaiting_choice = false;
  while (!st.pending.empty()) {
    trajectory.push_back(step(st).s);
    st.y_prev = st.pending.front();
    st.pending.erase(st.pending.begin());
  }
  st.consumed[candidate] = true;
  st.source.zero_tags(candidates_[candidate].source_span);
  return trajectory;
}

const Tensor& Decoder::phrase_embedding(std::size_t candidate) {
  auto& slot = embeddings_.at(candidate);
  if (!slot) slot = embed_phrase(g_, model_, candidates_[candidate].target_ids);
  return *slot;
}

Decoder make_decoder(ad::Graph& g, const Model& model, const ParallelExample& example) {
  return Decoder(g, model, encode(g, model, example.source_ids, example.annotation.tag_matrix),
                 example.candidates);
}

NllResult sequence_nll(ad::Graph& g, const Model& model, const ParallelExample& ex) {
  using namespace ad;
  const auto& cfg = model.config();
  for (int id : ex.target_ids)
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.target_vocab)
      throw std::out_of_range("target id " + std::to_string(id) + " outside the vocabulary");
  if (ex.target_ids.empty() || ex.target_ids.back() != Vocabulary::eos)
    throw std::invalid_argument("target must be EOS-terminated");

  Decoder dec = make_decoder(g, model, ex);
  DecodeState st = dec.start();
  NllResult res;
  std::vector<Tensor> terms;

  const bool use_phrases = cfg.variant != Variant::baseline && !model.phrase_mode_disabled;
  const bool gate_factor = cfg.variant != Variant::gate || cfg.gate_word_factor;
  auto record_gate = [&](const StepScores& sc) {
    if (sc.gate.valid()) res.gate_values.push_back(sc.gate.item());
  };

  std::size_t next_gold = 0;
  std::size_t t = 0;
  const std::size_t n = ex.target_ids.size();
  while (t < n) {
    const GoldPhrase* gold = nullptr;
    if (use_phrases && next_gold < ex.annotation.gold.size() &&
        ex.annotation.gold[next_gold].target_span.begin == t)
      gold = &ex.annotation.gold[next_gold];

    StepInputs in = dec.advance(st);
    StepScores sc = dec.scores(in, st, gold != nullptr);
    record_gate(sc);

    if (!gold) {
      const int y = ex.target_ids[t];
      const Tensor& lp = gate_factor ? sc.word_logp : sc.word_logp_given_mode;
      const Tensor term = pick(lp, static_cast<std::size_t>(y));
      res.word_logprob += term.item();
      ++res.word_count;
      terms.push_back(term);
      dec.emit_word(st, y);
      ++t;
      continue;
    }

    // Gold phrase segment: mixture of the word-by-word path and the phrase.
    const std::size_t cand = gold->slot;
    const PhraseCandidate& pc = dec.candidates().at(cand);
    const auto pos = sc.live_position(cand);
    if (!pos) throw ad::ContractError("gold phrase candidate is not live");
    const Tensor phrase_term = pick(sc.phrase_logp, *pos);
    const std::size_t len = gold->target_span.size();

    std::vector<Tensor> word_path;
    if (pc.in_vocab) word_path.push_back(pick(sc.word_logp, static_cast<std::size_t>(ex.target_ids[t])));
    dec.emit_word(st, ex.target_ids[t]);
    for (std::size_t k = 1; k < len; ++k) {
      StepInputs ik = dec.advance(st);
      if (pc.in_vocab) {
        StepScores sk = dec.scores(ik, st, false);
        word_path.push_back(pick(sk.word_logp, static_cast<std::size_t>(ex.target_ids[t + k])));
      }
      dec.emit_word(st, ex.target_ids[t + k]);
    }
    // Either way the phrase is done: same state, candidate retired.
    st.consumed[cand] = true;
    st.source.zero_tags(pc.source_span);

    Tensor segment = phrase_term;
    if (!word_path.empty()) {
      const Tensor word_total = sum(concat_rows(word_path));
      segment = logsumexp(concat_rows({word_total, phrase_term}));
    }
    terms.push_back(segment);
    ++res.phrase_segments;
    ++next_gold;
    t += len;
  }

  res.loss = scale(sum(concat_rows(terms)), -1.0);
  return res;
}

}  // namespace phrasemem
