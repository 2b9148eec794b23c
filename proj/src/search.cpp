#include "phrasemem/search.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace phrasemem {

bool selectable_word(int id) { return id != Vocabulary::pad && id != Vocabulary::bos; }

double Translation::normalized_score() const {
  return score / static_cast<double>(std::max<std::size_t>(1, emitted));
}

namespace {

// All choices at one decision point, words first (by id), then live
// phrases in candidate order.
std::vector<Choice> enumerate_choices(const StepScores& sc) {
  std::vector<Choice> out;
  const auto w = sc.word_logp.value();
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!selectable_word(static_cast<int>(i))) continue;
    Choice c;
    c.kind = Choice::Kind::word;
    c.word = static_cast<int>(i);
    c.logp = w[i];
    out.push_back(c);
  }
  if (!sc.live.empty()) {
    const auto p = sc.phrase_logp.value();
    for (std::size_t k = 0; k < sc.live.size(); ++k) {
      Choice c;
      c.kind = Choice::Kind::phrase;
      c.candidate = sc.live[k];
      c.logp = p[k];
      out.push_back(c);
    }
  }
  return out;
}

// Applies a choice to a state that has just been advanced.
void apply(Decoder& dec, const Vocabulary& vocab, DecodeState& st, Translation& tr,
           const Choice& c) {
  tr.choices.push_back(c);
  tr.score += c.logp;
  if (c.kind == Choice::Kind::word) {
    dec.emit_word(st, c.word);
    ++tr.emitted;
    if (c.word == Vocabulary::eos) {
      tr.finished = true;
    } else {
      tr.tokens.push_back(vocab.token(c.word));
    }
    return;
  }
  const auto& cand = dec.candidates()[c.candidate];
  dec.emit_phrase(st, c.candidate);
  tr.tokens.insert(tr.tokens.end(), cand.target_tokens.begin(), cand.target_tokens.end());
  tr.emitted += cand.target_tokens.size();
}

void write_trace(std::ostream& os, const Decoder& dec, const Vocabulary& vocab, std::size_t step,
                 const StepDistribution& d, const Choice& chosen) {
  os << "step " << step << " mode=" << (chosen.kind == Choice::Kind::word ? "word" : "phrase");
  if (chosen.kind == Choice::Kind::word) {
    os << " choice=" << vocab.token(chosen.word);
  } else {
    os << " choice=[" << join_tokens(dec.candidates()[chosen.candidate].target_tokens) << ']';
  }
  os << std::fixed << std::setprecision(4) << " p=" << std::exp(chosen.logp);
  if (d.mode_prior) os << " gate=" << *d.mode_prior;

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < d.word_probs.size(); ++i)
    if (selectable_word(static_cast<int>(i))) order.push_back(i);
  const std::size_t top = std::min<std::size_t>(5, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (d.word_probs[a] != d.word_probs[b]) return d.word_probs[a] > d.word_probs[b];
                      return a < b;
                    });
  os << " words:";
  for (std::size_t i = 0; i < top; ++i)
    os << ' ' << vocab.token(static_cast<int>(order[i])) << ':' << d.word_probs[order[i]];
  if (!d.phrase_probs.empty()) {
    os << " phrases:";
    for (std::size_t k = 0; k < d.phrase_probs.size(); ++k)
      os << " [" << join_tokens(dec.candidates()[d.phrase_candidates[k]].target_tokens)
         << "]:" << d.phrase_probs[k];
  }
  os << '\n';
  os.unsetf(std::ios::floatfield);
}

void check_options(const Model& model, const Vocabulary& vocab, const SearchOptions& opt) {
  if (opt.max_len == 0) throw std::invalid_argument("max_len must be at least 1");
  if (opt.beam == 0) throw std::invalid_argument("beam must be at least 1");
  if (vocab.size() != model.config().target_vocab)
    throw std::invalid_argument("target vocabulary does not match the model");
}

}  // namespace

Translation decode_greedy(const Model& model, const Vocabulary& vocab, const ParallelExample& input,
                          const SearchOptions& opt) {
  check_options(model, vocab, opt);
  ad::Graph g(false);
  Decoder dec = make_decoder(g, model, input);
  DecodeState st = dec.start();
  Translation tr;
  while (!tr.finished && tr.tokens.size() < opt.max_len) {
    const StepInputs in = dec.advance(st);
    const StepScores sc = dec.scores(in, st);
    const auto choices = enumerate_choices(sc);
    const Choice* best = &choices.front();
    for (const auto& c : choices)
      if (c.logp > best->logp) best = &c;
    if (opt.trace) write_trace(*opt.trace, dec, vocab, st.step, Decoder::distribution(sc), *best);
    apply(dec, vocab, st, tr, *best);
  }
  return tr;
}

Translation decode_beam(const Model& model, const Vocabulary& vocab, const ParallelExample& input,
                        const SearchOptions& opt) {
  check_options(model, vocab, opt);
  ad::Graph g(false);
  Decoder dec = make_decoder(g, model, input);

  struct Hypothesis {
    DecodeState state;
    Translation tr;
  };
  struct Expansion {
    std::size_t parent;
    Choice choice;
    double score;
  };

  std::vector<Hypothesis> beam{{dec.start(), {}}};
  std::vector<Translation> done;
  while (!beam.empty()) {
    std::vector<Expansion> expansions;
    for (std::size_t h = 0; h < beam.size(); ++h) {
      const StepInputs in = dec.advance(beam[h].state);
      const StepScores sc = dec.scores(in, beam[h].state);
      for (const auto& c : enumerate_choices(sc))
        expansions.push_back({h, c, beam[h].tr.score + c.logp});
    }
    // Raw cumulative score; the step log-prob breaks ties in favor of the
    // locally better choice, then enumeration order (lowest index).
    std::stable_sort(expansions.begin(), expansions.end(), [](const Expansion& a, const Expansion& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.choice.logp > b.choice.logp;
    });
    if (expansions.size() > opt.beam) expansions.resize(opt.beam);

    std::vector<Hypothesis> next;
    for (const auto& e : expansions) {
      Hypothesis child = beam[e.parent];
      apply(dec, vocab, child.state, child.tr, e.choice);
      if (child.tr.finished || child.tr.tokens.size() >= opt.max_len) {
        done.push_back(std::move(child.tr));
      } else {
        next.push_back(std::move(child));
      }
    }
    beam = std::move(next);
  }
  // The greedy path can fall off the beam; keeping it as a finalist means a
  // wider beam never returns a worse normalized score.
  if (opt.beam > 1) {
    SearchOptions quiet = opt;
    quiet.trace = nullptr;
    done.push_back(decode_greedy(model, vocab, input, quiet));
  }

  const Translation* best = &done.front();
  for (const auto& t : done)
    if (t.normalized_score() > best->normalized_score()) best = &t;
  return *best;
}

Translation translate(const Model& model, const Vocabulary& vocab, const ParallelExample& input,
                      const SearchOptions& opt) {
  return opt.beam <= 1 ? decode_greedy(model, vocab, input, opt)
                       : decode_beam(model, vocab, input, opt);
}

}  // namespace phrasemem
