#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "phrasemem/decoder.hpp"
#include "phrasemem/toy.hpp"
#include "phrasemem/reference.hpp"
#include "test_support.hpp"

using namespace phrasemem;

namespace {

ModelConfig small_config(Variant v, std::size_t vocab = 8, std::size_t n_p = 3) {
  ModelConfig c;
  c.variant = v;
  c.source_vocab = 8;
  c.target_vocab = vocab;
  c.embed_dim = 4;
  c.hidden_dim = 5;
  c.max_phrases = n_p;
  return c;
}

void zero(Model& m) {
  for (auto& p : m.params()) std::fill(p.value.begin(), p.value.end(), 0.0);
}

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

}  // namespace

TEST_CASE("step_state: zero weights halve the previous state") {
  Model m(small_config(Variant::gate));
  zero(m);
  ad::Graph g;
  const auto& c = m.config();
  auto s = g.constant(ad::vector_shape(c.hidden_dim), {1, -2, 3, 0.5, 4});
  auto ctx = g.constant(ad::vector_shape(c.annotation_dim()), std::vector<double>(c.annotation_dim(), 0.3));
  auto e = g.constant(ad::vector_shape(c.embed_dim), std::vector<double>(c.embed_dim, -1.0));
  auto out = step_state(g, m, s, ctx, e);
  const double expect[] = {0.5, -1, 1.5, 0.25, 2};
  for (std::size_t i = 0; i < 5; ++i) CHECK(out[i] == expect[i]);

  SUBCASE("pure") {
    testing::randomize(m, 3);
    auto a = step_state(g, m, s, ctx, e);
    auto b = step_state(g, m, s, ctx, e);
    for (std::size_t i = 0; i < 5; ++i) CHECK(a[i] == b[i]);
  }
  SUBCASE("shape mismatch") {
    auto bad = g.constant(ad::vector_shape(3), {0, 0, 0});
    CHECK_THROWS_AS(step_state(g, m, bad, ctx, e), ad::DimensionError);
  }
}

TEST_CASE("word_scores: zero weights give a uniform softmax") {
  Model m(small_config(Variant::gate));
  zero(m);
  ad::Graph g;
  const auto& c = m.config();
  auto s = g.constant(ad::vector_shape(c.hidden_dim), std::vector<double>(c.hidden_dim, 0.7));
  auto ctx = g.constant(ad::vector_shape(c.annotation_dim()), std::vector<double>(c.annotation_dim(), 0.3));
  auto e = g.constant(ad::vector_shape(c.embed_dim), std::vector<double>(c.embed_dim, -1.0));
  auto p = ad::softmax(word_scores(g, m, s, ctx, e));
  for (double v : p.value()) CHECK(v == doctest::Approx(1.0 / 8).epsilon(1e-15));
}

TEST_CASE("word_scores: hand-set weights giving scores (ln 3, 0)") {
  Model m(small_config(Variant::gate, 2));
  zero(m);
  // tanh(V e)[0] = 0.5 with e = (atanh 0.5, 0, ...), V = e_0 e_0^T
  m.params().at("readout.o.V").value[0] = 1.0;
  m.params().at("readout.o.W").value[0] = 2.0 * std::log(3.0);
  ad::Graph g;
  const auto& c = m.config();
  auto s = g.constant(ad::vector_shape(c.hidden_dim), std::vector<double>(c.hidden_dim, 0.0));
  auto ctx = g.constant(ad::vector_shape(c.annotation_dim()), std::vector<double>(c.annotation_dim(), 0.0));
  std::vector<double> ev(c.embed_dim, 0.0);
  ev[0] = std::atanh(0.5);
  auto e = g.constant(ad::vector_shape(c.embed_dim), ev);
  auto scores = word_scores(g, m, s, ctx, e);
  CHECK(scores[0] == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  CHECK(scores[1] == 0.0);
  auto p = ad::softmax(scores);
  CHECK(p[0] == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("mix_gate arithmetic") {
  const double words[] = {0.75, 0.25};
  const double phrases[] = {1.0};
  auto d = mix_gate(0.4, words, phrases);
  CHECK(d.word_probs[0] == doctest::Approx(0.45));
  CHECK(d.word_probs[1] == doctest::Approx(0.15));
  CHECK(d.phrase_probs[0] == doctest::Approx(0.4));
  CHECK(d.total() == doctest::Approx(1.0));
  REQUIRE(d.mode_prior);
  CHECK(*d.mode_prior == 0.4);
}

namespace {

// Walks the decoder through the example's gold target with word-mode
// emissions and checks every step against the reference model.
void compare_with_reference(const testing::Instance& in, Model& m, double tol) {
  reference::ReferenceModel<double> ref(m);
  ref.load(in.example);
  auto rs = ref.start();

  ad::Graph g(false);
  Decoder dec = make_decoder(g, m, in.example);
  auto st = dec.start();
  for (int y : in.example.target_ids) {
    auto sc = dec.scores(dec.advance(st), st);
    auto d = Decoder::distribution(sc);
    auto rin = ref.step(rs);
    auto rd = ref.distribution(rs, rin);
    REQUIRE(d.word_probs.size() == rd.words.size());
    REQUIRE(d.phrase_probs.size() == rd.phrases.size());
    CHECK(std::abs(d.total() - 1.0) < 1e-9);
    for (std::size_t i = 0; i < rd.words.size(); ++i) CHECK(rel(d.word_probs[i], rd.words[i]) < tol);
    for (std::size_t i = 0; i < rd.phrases.size(); ++i) {
      CHECK(d.phrase_candidates[i] == rd.live[i]);
      CHECK(rel(d.phrase_probs[i], rd.phrases[i]) < tol);
    }
    if (d.mode_prior) CHECK(rel(*d.mode_prior, rd.gate) < tol);
    dec.emit_word(st, y);
    rs.y_prev = y;
  }
}

}  // namespace

TEST_CASE("gate step matches an independent straight-line oracle") {
  std::mt19937_64 rng(11);
  int with_three = 0;
  for (int trial = 0; trial < 60; ++trial) {
    auto in = testing::random_instance(rng, Variant::gate, 3);
    if (in.example.candidates.size() == 3) ++with_three;
    Model m(in.config);
    testing::randomize(m, 100 + trial);
    compare_with_reference(in, m, 1e-12);
  }
  CHECK(with_three > 0);
}

TEST_CASE("joint softmax step matches an independent oracle") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 60; ++trial) {
    auto in = testing::random_instance(rng, Variant::softmax, 3);
    Model m(in.config);
    testing::randomize(m, 200 + trial);
    compare_with_reference(in, m, 1e-12);
  }
}

TEST_CASE("joint softmax with equal scores is uniform over words and phrases") {
  Model m(small_config(Variant::softmax, 3));
  zero(m);
  ad::Graph g(false);
  const std::vector<int> src{1, 2, 3};
  std::vector<double> tags(3 * 3, 0.0);
  tags[0 * 3 + 0] = 1.0;
  tags[2 * 3 + 1] = 1.0;
  std::vector<PhraseCandidate> cands(2);
  cands[0].slot = 0;
  cands[0].source_span = {0, 1};
  cands[0].target_ids = {2};
  cands[1].slot = 1;
  cands[1].source_span = {2, 3};
  cands[1].target_ids = {1, 2};
  Decoder dec(g, m, encode(g, m, src, tags), cands);
  auto st = dec.start();
  auto d = Decoder::distribution(dec.scores(dec.advance(st), st));
  REQUIRE(d.word_probs.size() == 3);
  REQUIRE(d.phrase_probs.size() == 2);
  for (double p : d.word_probs) CHECK(p == doctest::Approx(0.2).epsilon(1e-15));
  for (double p : d.phrase_probs) CHECK(p == doctest::Approx(0.2).epsilon(1e-15));
  CHECK_FALSE(d.mode_prior);
}

TEST_CASE("no candidates: both heads reduce to the plain word distribution") {
  for (Variant v : {Variant::gate, Variant::softmax}) {
    auto cfg = small_config(v);
    Model m(cfg);
    testing::randomize(m, 9);
    ad::Graph g(false);
    const std::vector<int> src{4, 5};
    Decoder dec(g, m, encode(g, m, src, std::vector<double>(2 * cfg.max_phrases, 0.0)), {});
    auto st = dec.start();
    auto in = dec.advance(st);
    auto sc = dec.scores(in, st);
    CHECK(sc.live.empty());
    CHECK_FALSE(sc.gate.valid());
    auto plain = ad::softmax(word_scores(g, m, in.s, in.context, in.e_prev));
    auto d = Decoder::distribution(sc);
    for (std::size_t i = 0; i < d.word_probs.size(); ++i)
      CHECK(std::abs(d.word_probs[i] - plain[i]) < 1e-15);
  }
}

TEST_CASE("embed_phrase") {
  Model m(small_config(Variant::softmax));
  testing::randomize(m, 4);
  ad::Graph g(false);
  SUBCASE("single token is one GRU step from zero") {
    const std::vector<int> ids{5};
    auto e = embed_phrase(g, m, ids);
    auto w = bind_gru(g, m.params(), "phrase.embed");
    auto zero_state = g.constant(ad::vector_shape(5), std::vector<double>(5, 0.0));
    auto expect = gru_cell(w, ad::row(g.param(m.param("dec.embed")), 5), zero_state);
    for (std::size_t i = 0; i < 5; ++i) CHECK(e[i] == expect[i]);
  }
  SUBCASE("the final state depends on the first token") {
    const std::vector<int> a{4, 6, 7}, b{5, 6, 7};
    auto ea = embed_phrase(g, m, a);
    auto eb = embed_phrase(g, m, b);
    double diff = 0;
    for (std::size_t i = 0; i < 5; ++i) diff += std::abs(ea[i] - eb[i]);
    CHECK(diff > 1e-6);
  }
  SUBCASE("empty phrase is rejected") {
    CHECK_THROWS(embed_phrase(g, m, std::vector<int>{}));
  }
}

TEST_CASE("idle run equals forced word-mode emission and zeroes tags only afterwards") {
  std::mt19937_64 rng(21);
  int checked = 0;
  for (Variant v : {Variant::gate, Variant::softmax}) {
    for (int trial = 0; trial < 40; ++trial) {
      auto in = testing::random_instance(rng, v, 3);
      if (in.example.candidates.empty()) continue;
      Model m(in.config);
      testing::randomize(m, 300 + trial);
      ad::Graph g(false);
      Decoder dec = make_decoder(g, m, in.example);
      const std::size_t c = in.example.candidates.size() - 1;
      const auto& ids = in.example.candidates[c].target_ids;

      auto a = dec.start();
      auto b = dec.start();
      dec.advance(a);
      dec.advance(b);
      const auto tags_before = a.source.tags();
      const auto trajectory = dec.emit_phrase(a, c);
      REQUIRE(trajectory.size() == ids.size() - 1);

      dec.emit_word(b, ids[0]);
      for (std::size_t k = 1; k < ids.size(); ++k) {
        auto in_b = dec.advance(b);
        CHECK(b.source.tags() == tags_before);  // not zeroed mid-run
        const auto x = trajectory[k - 1].value();
        const auto y = in_b.s.value();
        CHECK(std::equal(x.begin(), x.end(), y.begin()));
        dec.emit_word(b, ids[k]);
      }
      const auto xs = a.s.value();
      const auto ys = b.s.value();
      CHECK(std::equal(xs.begin(), xs.end(), ys.begin()));

      // After the run: the span's tags are zero, the rest untouched.
      const auto span = in.example.candidates[c].source_span;
      const std::size_t n = a.source.length();
      for (std::size_t slot = 0; slot < a.source.max_phrases(); ++slot)
        for (std::size_t pos = 0; pos < n; ++pos) {
          const double now = a.source.tag(pos, slot);
          if (span.contains(pos)) CHECK(now == 0.0);
          else CHECK(now == tags_before[slot * n + pos]);
        }
      CHECK(a.consumed[c]);
      CHECK(a.y_prev == ids.back());
      ++checked;
    }
  }
  CHECK(checked > 20);
}

TEST_CASE("emit_phrase contracts") {
  auto toy = gradient_toy(Variant::gate);
  Model m(toy.config);
  testing::randomize(m, 1);
  ad::Graph g(false);
  Decoder dec = make_decoder(g, m, toy.examples[0]);
  REQUIRE(dec.candidates().size() == 2);
  auto st = dec.start();
  CHECK_THROWS_AS(dec.emit_phrase(st, 0), ad::ContractError);  // no pending step
  dec.advance(st);
  CHECK_THROWS_AS(dec.advance(st), ad::ContractError);  // choice outstanding
  CHECK(st.live_count() == 2);
  dec.emit_phrase(st, 0);
  dec.advance(st);
  CHECK_THROWS_AS(dec.emit_phrase(st, 0), ad::ContractError);  // consumed
  CHECK_THROWS_AS(dec.emit_phrase(st, 7), ad::ContractError);
  dec.emit_phrase(st, 1);
  auto sc = dec.scores(dec.advance(st), st);
  CHECK(st.live_count() == 0);
  CHECK(sc.live.empty());
  CHECK_FALSE(sc.gate.valid());
}

TEST_CASE("consumed candidates never reappear") {
  std::mt19937_64 rng(31);
  for (Variant v : {Variant::gate, Variant::softmax}) {
    for (int trial = 0; trial < 30; ++trial) {
      auto in = testing::random_instance(rng, v, 3);
      Model m(in.config);
      testing::randomize(m, 400 + trial);
      ad::Graph g(false);
      Decoder dec = make_decoder(g, m, in.example);
      auto st = dec.start();
      std::vector<std::size_t> used;
      for (std::size_t c = 0; c < dec.candidates().size(); ++c) {
        auto sc = dec.scores(dec.advance(st), st);
        for (std::size_t u : used) CHECK_FALSE(sc.live_position(u));
        CHECK(sc.live.size() == dec.candidates().size() - used.size());
        dec.emit_phrase(st, c);
        used.push_back(c);
      }
      auto d = Decoder::distribution(dec.scores(dec.advance(st), st));
      CHECK(d.phrase_probs.empty());
      CHECK(std::abs(d.total() - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("sequence likelihood equals exhaustive enumeration over mode assignments") {
  std::mt19937_64 rng(41);
  for (Variant v : {Variant::gate, Variant::softmax}) {
    int with_gold = 0, with_oov = 0;
    for (int trial = 0; trial < 60; ++trial) {
      auto in = testing::random_instance(rng, v, 3);
      if (in.example.annotation.gold.size() > 3) continue;
      Model m(in.config);
      testing::randomize(m, 500 + trial);
      ad::Graph g(false);
      const auto r = sequence_nll(g, m, in.example);
      reference::ReferenceModel<double> ref(m);
      const double p = ref.sentence_probability(in.example);
      CHECK(r.loss.item() >= 0.0);
      CHECK(std::isfinite(r.loss.item()));
      CHECK(rel(std::exp(-r.loss.item()), p) < 1e-10);
      with_gold += in.example.annotation.gold.empty() ? 0 : 1;
      for (const auto& c : in.example.candidates) with_oov += c.in_vocab ? 0 : 1;
    }
    CHECK(with_gold > 10);
    CHECK(with_oov > 3);
  }
}

TEST_CASE("bare word factor for plain words matches the oracle too") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    auto in = testing::random_instance(rng, Variant::gate, 3);
    in.config.gate_word_factor = false;
    Model m(in.config);
    testing::randomize(m, 600 + trial);
    ad::Graph g(false);
    const double nll = sequence_nll(g, m, in.example).loss.item();
    reference::ReferenceModel<double> ref(m);
    CHECK(rel(std::exp(-nll), ref.sentence_probability(in.example)) < 1e-10);
  }
}

TEST_CASE("pinned phrase mode reduces to the baseline") {
  std::mt19937_64 rng(51);
  int compared = 0;
  for (Variant v : {Variant::gate, Variant::softmax}) {
    for (int trial = 0; trial < 40; ++trial) {
      auto in = testing::random_instance(rng, v, 3);
      Model m(in.config);
      testing::randomize(m, 700 + trial);
      m.phrase_mode_disabled = true;

      auto bcfg = in.config;
      bcfg.variant = Variant::baseline;
      Model base(bcfg);
      // The baseline's word head is the phrase model's word head.
      for (auto& p : base.params()) {
        std::string name = p.name();
        if (v == Variant::softmax && name.rfind("readout.o.", 0) == 0)
          name = "readout.w." + name.substr(10);
        p.value = m.param(name).value;
      }
      // Same tags for both; nothing is consumed with phrase mode off.
      ad::Graph g(false);
      const double a = sequence_nll(g, m, in.example).loss.item();
      const double b = sequence_nll(g, base, in.example).loss.item();
      CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, b));
      ++compared;

      Decoder da = make_decoder(g, m, in.example);
      Decoder db = make_decoder(g, base, in.example);
      auto sa = da.start();
      auto sb = db.start();
      for (int y : in.example.target_ids) {
        auto pa = Decoder::distribution(da.scores(da.advance(sa), sa));
        auto pb = Decoder::distribution(db.scores(db.advance(sb), sb));
        CHECK(pa.phrase_probs.empty());
        for (std::size_t i = 0; i < pa.word_probs.size(); ++i)
          CHECK(std::abs(pa.word_probs[i] - pb.word_probs[i]) <= 1e-12);
        da.emit_word(sa, y);
        db.emit_word(sb, y);
      }
    }
  }
  CHECK(compared == 80);
}

TEST_CASE("sequence_nll rejects out-of-range targets") {
  auto toy = gradient_toy(Variant::gate);
  Model m(toy.config);
  m.initialize(1);
  auto ex = toy.examples[0];
  ex.target_ids[0] = 99;
  ad::Graph g;
  CHECK_THROWS_AS(sequence_nll(g, m, ex), std::out_of_range);
}
