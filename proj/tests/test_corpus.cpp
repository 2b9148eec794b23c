#include <algorithm>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "phrasemem/corpus.hpp"

using namespace phrasemem;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("phrasemem_corpus_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

SyntheticConfig small_config(std::uint64_t seed = 3) {
  SyntheticConfig c;
  c.n_pairs = 150;
  c.n_dev = 20;
  c.n_test = 20;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("vocabulary reserved ids and lookup") {
  const std::vector<std::string> toks{"a", "b"};
  const auto v = Vocabulary::from_tokens(toks);
  CHECK(v.size() == 6);
  CHECK(v.token(Vocabulary::pad) == "<pad>");
  CHECK(v.token(Vocabulary::bos) == "<s>");
  CHECK(v.token(Vocabulary::eos) == "</s>");
  CHECK(v.token(Vocabulary::unk) == "<unk>");
  CHECK(v.id("a") == 4);
  CHECK(v.id("zzz") == Vocabulary::unk);
  CHECK(v.regular_tokens() == toks);
  const Tokens s{"b", "q", "a"};
  const auto ids = v.encode(s);
  CHECK(ids == std::vector<int>{5, Vocabulary::unk, 4});
  CHECK(v.decode(ids) == Tokens{"b", "<unk>", "a"});
  const std::vector<std::string> dup{"a", "a"};
  CHECK_THROWS_AS(Vocabulary::from_tokens(dup), std::invalid_argument);
}

TEST_CASE("vocabulary save and load") {
  const auto d = scratch_dir("vocab");
  const std::vector<std::string> toks{"x", "y", "z"};
  const auto v = Vocabulary::from_tokens(toks);
  v.save(d / "v.txt");
  CHECK(Vocabulary::load(d / "v.txt").tokens() == v.tokens());
  CHECK_THROWS(Vocabulary::load(d / "missing.txt"));
}

TEST_CASE("build_vocab orders by frequency then lexically") {
  const std::vector<Tokens> corpus{{"b", "a", "c"}, {"a", "c", "d"}, {"a"}};
  const auto built = build_vocab(corpus, 6);
  CHECK(built.vocab.regular_tokens() == std::vector<std::string>{"a", "c"});
  CHECK(built.coverage == doctest::Approx(5.0 / 7));
  CHECK(build_vocab(corpus, 100).coverage == 1.0);
  CHECK_THROWS_AS(build_vocab(corpus, 4), std::invalid_argument);
  CHECK_THROWS_AS(build_vocab(std::vector<Tokens>{}, 10), std::invalid_argument);
}

TEST_CASE("corpus files round trip") {
  const auto d = scratch_dir("files");
  const std::vector<Tokens> s{{"a", "b"}, {"c"}};
  write_corpus(d / "c.txt", s);
  CHECK(read_corpus(d / "c.txt") == s);
  CHECK_THROWS(read_corpus(d / "missing.txt"));
}

TEST_CASE("examples carry ids, candidates and gold spans") {
  std::istringstream in("zorblat\tZorblat\nnew york\tnueva york\n");
  const auto table = PhraseTable::parse(in);
  const std::vector<std::string> st{"i", "saw", "zorblat", "new", "york"};
  const std::vector<std::string> tt{"vi", "nueva", "york"};
  const auto sv = Vocabulary::from_tokens(st);
  const auto tv = Vocabulary::from_tokens(tt);
  const auto ex = make_example({"i", "saw", "zorblat", "new", "york"},
                               {"vi", "Zorblat", "nueva", "york"}, sv, tv, &table, 4);
  CHECK(ex.target_ids.back() == Vocabulary::eos);
  CHECK(ex.target_ids.size() == 5);
  CHECK(ex.target_ids[1] == Vocabulary::unk);
  REQUIRE(ex.candidates.size() == 2);
  CHECK_FALSE(ex.candidates[0].in_vocab);
  CHECK(ex.candidates[0].target_ids == std::vector<int>{Vocabulary::unk});
  CHECK(ex.candidates[1].in_vocab);
  CHECK(ex.candidates[1].target_tokens == Tokens{"nueva", "york"});
  CHECK(ex.candidates[1].slot == 1);
  CHECK(ex.annotation.gold.size() == 2);

  const auto plain = make_example({"i", "saw"}, {"vi"}, sv, tv, nullptr, 4);
  CHECK(plain.candidates.empty());
  CHECK(plain.annotation.tag_matrix == std::vector<double>(8, 0.0));

  const auto input = make_source_input({"zorblat"}, sv, tv, &table, 4);
  CHECK(input.candidates.size() == 1);
  CHECK(input.annotation.gold.empty());
  CHECK(input.target_ids == std::vector<int>{Vocabulary::eos});

  CHECK_THROWS_AS(make_example({}, {"vi"}, sv, tv, &table, 4), std::invalid_argument);
}

TEST_CASE("batches: filtering, padding, masks, seeded shuffle") {
  const std::vector<std::string> toks{"a", "b", "c"};
  const auto v = Vocabulary::from_tokens(toks);
  std::vector<ParallelExample> exs;
  const std::vector<Tokens> src{{"a"}, {"a", "b"}, {"a", "b", "c"}, {"a", "b", "c", "a", "b"}, {"c"}};
  for (const auto& s : src) exs.push_back(make_example(s, s, v, v, nullptr, 2));

  const auto batches = make_batches(exs, 2, 4, 9);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    CHECK(b.indices.size() <= 2);
    for (std::size_t k = 0; k < b.indices.size(); ++k) {
      const auto& ex = exs[b.indices[k]];
      seen.insert(b.indices[k]);
      CHECK(b.source_ids[k].size() == b.source_ids[0].size());
      for (std::size_t i = 0; i < b.source_ids[k].size(); ++i) {
        const bool real = i < ex.source_ids.size();
        CHECK(b.source_mask[k][i] == real);
        CHECK(b.source_ids[k][i] == (real ? ex.source_ids[i] : Vocabulary::pad));
      }
      for (std::size_t i = 0; i < b.target_ids[k].size(); ++i)
        CHECK(b.target_mask[k][i] == (i < ex.target_ids.size()));
    }
  }
  CHECK(seen == std::multiset<std::size_t>{0, 1, 2, 4});  // the 5-token pair is filtered

  const auto again = make_batches(exs, 2, 4, 9);
  REQUIRE(again.size() == batches.size());
  for (std::size_t i = 0; i < batches.size(); ++i) CHECK(again[i].indices == batches[i].indices);

  CHECK(make_batches(exs, 2, 0, 9).empty());
  CHECK_THROWS_AS(make_batches(exs, 0, 4, 9), std::invalid_argument);
}

TEST_CASE("synthetic corpus is deterministic for a seed") {
  const auto a = generate_synthetic(small_config(3));
  const auto b = generate_synthetic(small_config(3));
  const auto c = generate_synthetic(small_config(4));
  REQUIRE(a.train.size() == 150);
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    same = same && a.train[i].source == b.train[i].source && a.train[i].target == b.train[i].target;
    differs = differs || a.train[i].source != c.train[i].source;
  }
  CHECK(same);
  CHECK(differs);
  CHECK(a.dev.size() == 20);
  CHECK(a.test.size() == 20);
}

TEST_CASE("synthetic corpus structure") {
  SyntheticConfig cfg = small_config(11);
  const auto corp = generate_synthetic(cfg);
  CHECK(corp.table.size() == cfg.n_rules);
  CHECK(corp.table.warnings().empty());
  CHECK(corp.source_tokens.size() == cfg.vocab_size - Vocabulary::reserved);
  const auto n_oov = static_cast<std::size_t>(std::count(corp.rule_oov.begin(), corp.rule_oov.end(), true));
  CHECK(n_oov == 10);

  const auto tv = Vocabulary::from_tokens(corp.target_tokens);
  for (std::size_t r = 0; r < corp.table.size(); ++r) {
    const auto& t = corp.table.rule(r).target;
    const bool any_oov = std::any_of(t.begin(), t.end(), [&](const std::string& w) { return !tv.contains(w); });
    CHECK(any_oov == corp.rule_oov[r]);
  }

  std::size_t placed = 0;
  for (const auto& p : corp.train) {
    CHECK(p.source.size() >= cfg.min_words);
    CHECK(p.phrases.size() <= cfg.max_phrases_per_sentence);
    for (const auto& ph : p.phrases) {
      ++placed;
      const auto& rule = corp.table.rule(ph.rule_id);
      CHECK(Tokens(p.source.begin() + ph.source_span.begin, p.source.begin() + ph.source_span.end) ==
            rule.source);
      CHECK(Tokens(p.target.begin() + ph.target_span.begin, p.target.begin() + ph.target_span.end) ==
            rule.target);
    }
    // Phrase memory recovers exactly the placed phrases.
    const auto a = annotate(corp.table, p.source, &p.target, cfg.max_phrases_per_sentence);
    REQUIRE(a.occurrences.size() == p.phrases.size());
    REQUIRE(a.gold.size() == p.phrases.size());
    for (std::size_t k = 0; k < p.phrases.size(); ++k) {
      CHECK(a.occurrences[k].source_span == p.phrases[k].source_span);
      CHECK(a.occurrences[k].rule_id == p.phrases[k].rule_id);
    }
  }
  CHECK(placed > 100);
}

TEST_CASE("synthetic files and metadata round trip") {
  const auto corp = generate_synthetic(small_config(5));
  const auto d = scratch_dir("synth");
  write_synthetic(corp, d);
  for (const char* f : {"train.src", "train.tgt", "dev.src", "dev.tgt", "test.src", "test.tgt",
                        "train.meta.jsonl", "test.meta.jsonl", "table.tsv", "vocab.src", "vocab.tgt"})
    CHECK(fs::exists(d / f));
  const auto src = read_corpus(d / "test.src");
  REQUIRE(src.size() == corp.test.size());
  CHECK(src[0] == corp.test[0].source);
  CHECK(PhraseTable::load(d / "table.tsv").size() == corp.table.size());
  const auto meta = read_metadata(d / "test.meta.jsonl");
  REQUIRE(meta.size() == corp.test.size());
  for (std::size_t i = 0; i < meta.size(); ++i) {
    const auto exp = expectations(corp.test[i], corp.table, corp.rule_oov);
    REQUIRE(meta[i].size() == exp.size());
    for (std::size_t k = 0; k < exp.size(); ++k) {
      CHECK(meta[i][k].target == exp[k].target);
      CHECK(meta[i][k].left == exp[k].left);
      CHECK(meta[i][k].right == exp[k].right);
      CHECK(meta[i][k].oov == exp[k].oov);
    }
  }
  CHECK(Vocabulary::load(d / "vocab.tgt").regular_tokens() == corp.target_tokens);
}

TEST_CASE("synthetic config validation") {
  SyntheticConfig c;
  c.oov_fraction = 1.5;
  CHECK_THROWS_AS(generate_synthetic(c), std::invalid_argument);
  c = SyntheticConfig{};
  c.vocab_size = 8;
  CHECK_THROWS_AS(generate_synthetic(c), std::invalid_argument);
  c = SyntheticConfig{};
  c.min_words = 9;
  CHECK_THROWS_AS(generate_synthetic(c), std::invalid_argument);
}
