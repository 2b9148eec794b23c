#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "phrasemem/evaluator.hpp"

using namespace phrasemem;

namespace {

Tokens words(const std::string& s) {
  std::istringstream is(s);
  Tokens out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

BleuReport bleu(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  std::vector<Tokens> c, r;
  for (const auto& s : cand) c.push_back(words(s));
  for (const auto& s : ref) r.push_back(words(s));
  return corpus_bleu(c, r);
}

}  // namespace

TEST_CASE("BLEU: two-sentence corpus worked by hand") {
  const auto r = bleu({"a b c d e", "x y z w"}, {"a b c d e f", "x y q w"});
  CHECK(r.matches == std::array<std::size_t, 4>{8, 5, 3, 2});
  CHECK(r.totals == std::array<std::size_t, 4>{9, 7, 5, 3});
  CHECK(r.precisions[0] == doctest::Approx(8.0 / 9));
  CHECK(r.precisions[1] == doctest::Approx(5.0 / 7));
  CHECK(r.precisions[2] == doctest::Approx(3.0 / 5));
  CHECK(r.precisions[3] == doctest::Approx(2.0 / 3));
  CHECK(r.brevity_penalty == doctest::Approx(std::exp(-1.0 / 9)));
  CHECK(r.bleu == doctest::Approx(std::exp(-1.0 / 9) * std::pow(16.0 / 63, 0.25)).epsilon(1e-12));
  CHECK(r.bleu4_only == doctest::Approx(std::exp(-1.0 / 9) * 2.0 / 3).epsilon(1e-12));
  CHECK(r.candidate_length == 9);
  CHECK(r.reference_length == 10);
  CHECK(r.sentences == 2);
}

TEST_CASE("BLEU: clipping is case-insensitive") {
  const auto r = bleu({"The the THE cat"}, {"the cat sat on the mat"});
  CHECK(r.precisions[0] == doctest::Approx(0.75));
  CHECK(r.precisions[1] == doctest::Approx(1.0 / 3));
  CHECK(r.precisions[2] == 0.0);
  CHECK(r.precisions[3] == 0.0);
  CHECK(r.brevity_penalty == doctest::Approx(std::exp(-0.5)));
  CHECK(r.bleu == 0.0);
}

TEST_CASE("BLEU: longer candidate has no brevity penalty") {
  const auto r = bleu({"i saw the red car today"}, {"i saw the red car"});
  CHECK(r.precisions[0] == doctest::Approx(5.0 / 6));
  CHECK(r.precisions[1] == doctest::Approx(4.0 / 5));
  CHECK(r.precisions[2] == doctest::Approx(3.0 / 4));
  CHECK(r.precisions[3] == doctest::Approx(2.0 / 3));
  CHECK(r.brevity_penalty == 1.0);
  CHECK(r.bleu == doctest::Approx(std::pow(1.0 / 3, 0.25)).epsilon(1e-12));
  CHECK(r.bleu4_only == doctest::Approx(2.0 / 3));
}

TEST_CASE("BLEU: boundary cases") {
  CHECK(bleu({"a b c d e", "f g h i"}, {"a b c d e", "f g h i"}).bleu == doctest::Approx(1.0));
  CHECK(bleu({"a b c d"}, {"a b c e"}).bleu == 0.0);
  const auto empty = bleu({""}, {"a b"});
  CHECK(empty.brevity_penalty == 0.0);
  CHECK(empty.bleu == 0.0);
  // Too short for any 4-gram.
  CHECK(bleu({"a b c"}, {"a b c"}).bleu == 0.0);
}

TEST_CASE("BLEU: invariant under reordering the corpus") {
  std::mt19937_64 rng(4);
  const std::vector<std::string> vocab{"a", "b", "c", "d", "E", "f"};
  std::uniform_int_distribution<std::size_t> w(0, vocab.size() - 1), len(4, 9);
  std::vector<Tokens> cand, ref;
  for (int s = 0; s < 12; ++s) {
    Tokens c, r;
    for (std::size_t i = len(rng); i > 0; --i) c.push_back(vocab[w(rng)]);
    for (std::size_t i = len(rng); i > 0; --i) r.push_back(vocab[w(rng)]);
    cand.push_back(c);
    ref.push_back(r);
  }
  const auto base = corpus_bleu(cand, ref);
  std::vector<std::size_t> order(cand.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Tokens> c2, r2;
    for (std::size_t i : order) {
      c2.push_back(cand[i]);
      r2.push_back(ref[i]);
    }
    const auto r = corpus_bleu(c2, r2);
    CHECK(r.matches == base.matches);
    CHECK(r.totals == base.totals);
    CHECK(r.bleu == doctest::Approx(base.bleu).epsilon(1e-15));
  }
}

TEST_CASE("BLEU: mismatched or empty corpora are rejected") {
  std::vector<Tokens> one{words("a")}, two{words("a"), words("b")}, none;
  CHECK_THROWS_AS(corpus_bleu(one, two), std::invalid_argument);
  CHECK_THROWS_AS(corpus_bleu(none, none), std::invalid_argument);
}

TEST_CASE("phrase accuracy: verbatim, positioned and filtered") {
  const std::vector<Tokens> cand{words("we met Zorblat yesterday"), words("the zorblat came")};
  const std::vector<std::vector<PhraseExpectation>> meta{
      {{words("Zorblat"), "met", "yesterday", true}, {words("we met"), "<s>", "Zorblat", false}},
      {{words("Zorblat"), "the", "came", true}, {words("came"), "zorblat", "</s>", false}}};

  const auto all = phrase_accuracy(cand, meta);
  CHECK(all.expected == 4);
  CHECK(all.found == 3);  // matching is case-sensitive
  CHECK(all.positioned == 3);
  CHECK(all.recall == doctest::Approx(0.75));

  const auto oov = phrase_accuracy(cand, meta, PhraseFilter::oov_only);
  CHECK(oov.expected == 2);
  CHECK(oov.found == 1);
  CHECK(oov.recall == doctest::Approx(0.5));

  const auto iv = phrase_accuracy(cand, meta, PhraseFilter::in_vocab_only);
  CHECK(iv.expected == 2);
  CHECK(iv.found == 2);
  CHECK(iv.positioned == 2);

  SUBCASE("found in the wrong place") {
    const std::vector<Tokens> c{words("Zorblat we met")};
    const std::vector<std::vector<PhraseExpectation>> m{{{words("Zorblat"), "met", "yesterday", true}}};
    const auto a = phrase_accuracy(c, m);
    CHECK(a.found == 1);
    CHECK(a.positioned == 0);
    CHECK(a.position_rate == 0.0);
  }
  SUBCASE("count mismatch") {
    CHECK_THROWS_AS(phrase_accuracy(std::span<const Tokens>(cand).first(1), meta),
                    std::invalid_argument);
  }
  SUBCASE("nothing expected") {
    const std::vector<std::vector<PhraseExpectation>> m{{}, {}};
    const auto a = phrase_accuracy(cand, m);
    CHECK(a.expected == 0);
    CHECK(a.recall == 0.0);
  }
}

TEST_CASE("report formats carry the same numbers") {
  EvalReport rep;
  rep.bleu = bleu({"a b c d e", "x y z w"}, {"a b c d e f", "x y q w"});
  rep.oov_phrases = PhraseAccuracy{4, 3, 2, 0.75, 0.5};
  const auto j = report_json(rep);
  CHECK(j["bleu"].get<double>() == rep.bleu.bleu);
  CHECK(j["totals"][3].get<std::size_t>() == 3);
  CHECK(j["oov_phrases"]["recall"].get<double>() == 0.75);
  CHECK_FALSE(j.contains("phrases"));
  const auto text = format_report(rep);
  CHECK(text.find("BLEU") != std::string::npos);
  CHECK(text.find("oov phrases recall 0.7500") != std::string::npos);
}
