#include "phrasemem/reference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace phrasemem::reference {

namespace {

template <class T>
T sigm(T x) { return T(1) / (T(1) + std::exp(-x)); }

template <class T>
std::vector<T> add(std::vector<T> a, const std::vector<T>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

template <class T>
std::vector<T> cat(std::initializer_list<const std::vector<T>*> parts) {
  std::vector<T> out;
  for (const auto* p : parts) out.insert(out.end(), p->begin(), p->end());
  return out;
}

template <class T>
std::vector<T> softmax(const std::vector<T>& x) {
  T m = x[0];
  for (T v : x) m = std::max(m, v);
  std::vector<T> out(x.size());
  T z = 0;
  for (std::size_t i = 0; i < x.size(); ++i) z += out[i] = std::exp(x[i] - m);
  for (T& v : out) v /= z;
  return out;
}

}  // namespace

template <class T>
ReferenceModel<T>::ReferenceModel(const Model& model)
    : config_(model.config()), phrase_mode_disabled_(model.phrase_mode_disabled) {
  for (const auto& p : model.params())
    weights_.push_back({p.name(), Mat{p.shape().rows, p.shape().cols, Vec(p.value.begin(), p.value.end())}});
}

template <class T>
const typename ReferenceModel<T>::Mat& ReferenceModel<T>::W(const std::string& name) const {
  for (const auto& [n, m] : weights_)
    if (n == name) return m;
  throw std::out_of_range("reference: no weight " + name);
}

template <class T>
std::vector<T> ReferenceModel<T>::mv(const std::string& name, const Vec& x) const {
  const Mat& m = W(name);
  if (m.cols != x.size()) throw std::invalid_argument("reference: bad shape for " + name);
  Vec out(m.rows, T(0));
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) out[r] += m.at(r, c) * x[c];
  return out;
}

template <class T>
std::vector<T> ReferenceModel<T>::gru(const std::string& p, const Vec& x, const Vec& h) const {
  const Vec z0 = add(add(mv(p + ".W_z", x), mv(p + ".U_z", h)), W(p + ".b_z").v);
  const Vec r0 = add(add(mv(p + ".W_r", x), mv(p + ".U_r", h)), W(p + ".b_r").v);
  Vec rh(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) rh[i] = sigm(r0[i]) * h[i];
  const Vec c0 = add(add(mv(p + ".W_h", x), mv(p + ".U_h", rh)), W(p + ".b_h").v);
  Vec out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    const T z = sigm(z0[i]);
    out[i] = (T(1) - z) * h[i] + z * std::tanh(c0[i]);
  }
  return out;
}

template <class T>
std::vector<T> ReferenceModel<T>::embedding(const std::string& table, int id) const {
  const Mat& m = W(table);
  return Vec(m.v.begin() + static_cast<std::ptrdiff_t>(id * m.cols),
             m.v.begin() + static_cast<std::ptrdiff_t>((id + 1) * m.cols));
}

template <class T>
std::vector<T> ReferenceModel<T>::readout(const std::string& p, const Vec& s, const Vec& c, const Vec& e) const {
  Vec pre = add(add(mv(p + ".U", s), mv(p + ".C", c)), mv(p + ".V", e));
  for (T& v : pre) v = std::tanh(v);
  return mv(p + ".W", pre);
}

template <class T>
std::vector<T> ReferenceModel<T>::phrase_embedding(const std::vector<int>& ids) const {
  Vec h(config_.hidden_dim, T(0));
  for (std::size_t i = ids.size(); i-- > 0;) h = gru("phrase.embed", embedding("dec.embed", ids[i]), h);
  return h;
}

template <class T>
void ReferenceModel<T>::load(const ParallelExample& ex) {
  const std::size_t n = ex.source_ids.size(), hd = config_.hidden_dim;
  std::vector<Vec> fwd(n), bwd(n);
  Vec s(hd, T(0));
  for (std::size_t i = 0; i < n; ++i) fwd[i] = s = gru("enc.fwd", embedding("enc.embed", ex.source_ids[i]), s);
  s.assign(hd, 0.0);
  for (std::size_t i = n; i-- > 0;) bwd[i] = s = gru("enc.bwd", embedding("enc.embed", ex.source_ids[i]), s);
  h_.clear();
  for (std::size_t i = 0; i < n; ++i) h_.push_back(cat({&fwd[i], &bwd[i]}));
  backward_first_ = bwd[0];
  tags_.assign(n, Vec(config_.max_phrases, T(0)));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < config_.max_phrases; ++k)
      tags_[i][k] = T(ex.annotation.tag_matrix[i * config_.max_phrases + k]);
  candidates_ = config_.variant == Variant::baseline ? std::vector<PhraseCandidate>{}
                                                     : ex.candidates;
}

template <class T>
State<T> ReferenceModel<T>::start() const {
  State<T> st;
  st.s = mv("dec.init.W", backward_first_);
  for (T& v : st.s) v = std::tanh(v);
  st.tags = tags_;
  st.consumed.assign(candidates_.size(), false);
  return st;
}

template <class T>
Step<T> ReferenceModel<T>::step(State<T>& st) const {
  Step<T> out;
  out.e_prev = embedding("dec.embed", st.y_prev);
  const Vec q = add(add(mv("att.W_s", st.s), mv("att.W_e", out.e_prev)), W("att.b").v);
  const std::size_t n = h_.size();
  std::vector<Vec> hp(n);
  Vec scores(n);
  for (std::size_t j = 0; j < n; ++j) {
    hp[j] = cat({&h_[j], &st.tags[j]});
    Vec k = add(mv("att.W_h", hp[j]), q);
    for (T& v : k) v = std::tanh(v);
    scores[j] = mv("att.v", k)[0];
  }
  const Vec alpha = softmax(scores);
  out.context.assign(hp[0].size(), T(0));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < out.context.size(); ++i) out.context[i] += alpha[j] * hp[j][i];
  st.s = gru("dec.gru", cat({&out.context, &out.e_prev}), st.s);
  return out;
}

template <class T>
Dist<T> ReferenceModel<T>::distribution(const State<T>& st, const Step<T>& in) const {
  Dist<T> d;
  if (!phrase_mode_disabled_)
    for (std::size_t i = 0; i < candidates_.size(); ++i)
      if (!st.consumed[i]) d.live.push_back(i);

  switch (config_.variant) {
    case Variant::baseline:
      d.words = d.words_given_word_mode = softmax(readout("readout.o", st.s, in.context, in.e_prev));
      break;
    case Variant::gate: {
      d.words_given_word_mode = softmax(readout("readout.o", st.s, in.context, in.e_prev));
      if (d.live.empty()) {
        d.words = d.words_given_word_mode;
        break;
      }
      const Vec x = cat({&st.s, &in.context, &in.e_prev});
      Vec h1 = add(mv("gate.A1", x), W("gate.b1").v);
      for (T& v : h1) v = std::tanh(v);
      Vec h2 = add(mv("gate.A2", h1), W("gate.b2").v);
      for (T& v : h2) v = std::tanh(v);
      d.gate = sigm(mv("gate.a3", h2)[0] + W("gate.b3").v[0]);
      const Vec slots = readout("phrase.p", st.s, in.context, in.e_prev);
      Vec picked;
      for (std::size_t i : d.live) picked.push_back(slots[candidates_[i].slot]);
      const Vec pp = softmax(picked);
      for (T p : d.words_given_word_mode) d.words.push_back((T(1) - d.gate) * p);
      for (T p : pp) d.phrases.push_back(d.gate * p);
      break;
    }
    case Variant::softmax: {
      Vec joint = readout("readout.w", st.s, in.context, in.e_prev);
      const std::size_t v = joint.size();
      const Vec base = add(add(mv("phrase.q.U", st.s), mv("phrase.q.C", in.context)),
                           mv("phrase.q.V", in.e_prev));
      for (std::size_t i : d.live) {
        Vec pre = add(base, mv("phrase.q.R", phrase_embedding(candidates_[i].target_ids)));
        for (T& x : pre) x = std::tanh(x);
        joint.push_back(mv("phrase.q.W", pre)[0]);
      }
      const Vec p = softmax(joint);
      d.words.assign(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(v));
      d.phrases.assign(p.begin() + static_cast<std::ptrdiff_t>(v), p.end());
      d.words_given_word_mode = d.words;
      break;
    }
  }
  return d;
}

template <class T>
void ReferenceModel<T>::consume(State<T>& st, std::size_t c) const {
  st.consumed[c] = true;
  const auto span = candidates_[c].source_span;
  for (std::size_t i = span.begin; i < span.end; ++i)
    for (T& t : st.tags[i]) t = T(0);
}

template <class T>
T ReferenceModel<T>::sentence_probability(const ParallelExample& ex) {
  load(ex);
  const bool phrases_on = config_.variant != Variant::baseline && !phrase_mode_disabled_;
  const auto& gold = phrases_on ? ex.annotation.gold : std::vector<GoldPhrase>{};
  const bool word_factor = config_.variant != Variant::gate || config_.gate_word_factor;
  const std::size_t g = gold.size();
  T total = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << g); ++mask) {
    bool valid = true;
    for (std::size_t k = 0; k < g; ++k)
      if (!(mask >> k & 1) && !candidates_[gold[k].slot].in_vocab) valid = false;
    if (!valid) continue;

    State<T> st = start();
    T prob = 1;
    std::size_t t = 0, next = 0;
    const auto& y = ex.target_ids;
    while (t < y.size()) {
      if (next < g && gold[next].target_span.begin == t) {
        const auto& gp = gold[next];
        const std::size_t len = gp.target_span.size();
        if (mask >> next & 1) {
          const Step<T> in = step(st);
          const Dist<T> d = distribution(st, in);
          std::size_t pos = 0;
          while (d.live[pos] != gp.slot) ++pos;
          prob *= d.phrases[pos];
          st.y_prev = y[t];
          for (std::size_t k = 1; k < len; ++k) {
            step(st);
            st.y_prev = y[t + k];
          }
        } else {
          for (std::size_t k = 0; k < len; ++k) {
            const Step<T> in = step(st);
            prob *= distribution(st, in).words[static_cast<std::size_t>(y[t + k])];
            st.y_prev = y[t + k];
          }
        }
        consume(st, gp.slot);
        t += len;
        ++next;
      } else {
        const Step<T> in = step(st);
        const Dist<T> d = distribution(st, in);
        prob *= (word_factor ? d.words : d.words_given_word_mode)[static_cast<std::size_t>(y[t])];
        st.y_prev = y[t];
        ++t;
      }
    }
    total += prob;
  }
  return total;
}

template <class T>
Tokens ReferenceModel<T>::greedy(const ParallelExample& input, const Vocabulary& vocab,
                                 std::size_t max_len) {
  load(input);
  State<T> st = start();
  Tokens out;
  while (out.size() < max_len) {
    const Step<T> in = step(st);
    const Dist<T> d = distribution(st, in);
    T best = -1;
    std::size_t best_word = 0, best_phrase = 0;
    bool phrase = false;
    for (std::size_t w = 0; w < d.words.size(); ++w) {
      if (w == 0 || w == 1) continue;  // PAD, BOS
      if (d.words[w] > best) best = d.words[w], best_word = w;
    }
    for (std::size_t k = 0; k < d.phrases.size(); ++k)
      if (d.phrases[k] > best) best = d.phrases[k], best_phrase = d.live[k], phrase = true;
    if (!phrase) {
      if (best_word == 2) break;  // EOS
      out.push_back(vocab.token(static_cast<int>(best_word)));
      st.y_prev = static_cast<int>(best_word);
      continue;
    }
    const auto& c = candidates_[best_phrase];
    out.insert(out.end(), c.target_tokens.begin(), c.target_tokens.end());
    st.y_prev = c.target_ids[0];
    for (std::size_t k = 1; k < c.target_ids.size(); ++k) {
      step(st);
      st.y_prev = c.target_ids[k];
    }
    consume(st, best_phrase);
  }
  return out;
}

template <class T>
T ReferenceModel<T>::sentence_nll(const ParallelExample& ex) {
  return -std::log(sentence_probability(ex));
}

template class ReferenceModel<double>;
template class ReferenceModel<long double>;

}  // namespace phrasemem::reference
