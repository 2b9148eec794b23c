#include "phrasemem/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "phrasemem/log.hpp"

namespace phrasemem {

namespace {
const std::vector<std::string> kReserved = {"<pad>", "<s>", "</s>", "<unk>"};
}

Vocabulary::Vocabulary() : tokens_(kReserved) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
}

Vocabulary Vocabulary::from_tokens(std::span<const std::string> tokens) {
  Vocabulary v;
  for (const auto& t : tokens) {
    if (v.index_.count(t)) throw std::invalid_argument("duplicate vocabulary token '" + t + "'");
    v.index_.emplace(t, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(t);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return from_tokens(tokens);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path.string());
  for (const auto& t : regular_tokens()) out << t << '\n';
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk : it->second;
}

std::vector<std::string> Vocabulary::regular_tokens() const {
  return {tokens_.begin() + reserved, tokens_.end()};
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

Tokens Vocabulary::decode(std::span<const int> ids) const {
  Tokens out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

VocabularyBuild build_vocab(std::span<const Tokens> corpus, std::size_t max_size) {
  if (max_size <= Vocabulary::reserved)
    throw std::invalid_argument("vocabulary size must exceed the reserved entries");
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& sentence : corpus)
    for (const auto& t : sentence) {
      ++counts[t];
      ++total;
    }
  if (total == 0) throw std::invalid_argument("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> kept;
  std::size_t covered = 0;
  for (const auto& [token, n] : ranked) {
    if (kept.size() + Vocabulary::reserved >= max_size) break;
    if (std::find(kReserved.begin(), kReserved.end(), token) != kReserved.end()) continue;
    kept.push_back(token);
    covered += n;
  }
  VocabularyBuild out{Vocabulary::from_tokens(kept),
                      static_cast<double>(covered) / static_cast<double>(total)};
  return out;
}

std::vector<Tokens> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file " + path.string());
  std::vector<Tokens> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(split_tokens(line));
  return out;
}

void write_corpus(const std::filesystem::path& path, std::span<const Tokens> sentences) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file " + path.string());
  for (const auto& s : sentences) out << join_tokens(s) << '\n';
}

std::vector<PhraseCandidate> make_candidates(const SentenceAnnotation& annotation,
                                             const PhraseTable& table,
                                             const Vocabulary& target_vocab) {
  std::vector<PhraseCandidate> out;
  for (const auto& occ : annotation.occurrences) {
    PhraseCandidate c;
    c.slot = occ.slot;
    c.rule_id = occ.rule_id;
    c.source_span = occ.source_span;
    c.target_tokens = table.rule(occ.rule_id).target;
    c.target_ids = target_vocab.encode(c.target_tokens);
    c.in_vocab = std::none_of(c.target_ids.begin(), c.target_ids.end(),
                              [](int id) { return id == Vocabulary::unk; });
    out.push_back(std::move(c));
  }
  return out;
}

ParallelExample make_example(Tokens source, Tokens target, const Vocabulary& source_vocab,
                             const Vocabulary& target_vocab, const PhraseTable* table,
                             std::size_t max_phrases) {
  if (source.empty()) throw std::invalid_argument("empty source sentence");
  ParallelExample ex;
  ex.source_ids = source_vocab.encode(source);
  ex.target_ids = target_vocab.encode(target);
  ex.target_ids.push_back(Vocabulary::eos);
  if (table) {
    ex.annotation = annotate(*table, source, &target, max_phrases);
    ex.candidates = make_candidates(ex.annotation, *table, target_vocab);
  } else {
    ex.annotation = annotate(PhraseTable{}, source, &target, max_phrases);
  }
  ex.source = std::move(source);
  ex.target = std::move(target);
  return ex;
}

ParallelExample make_source_input(Tokens source, const Vocabulary& source_vocab,
                                  const Vocabulary& target_vocab, const PhraseTable* table,
                                  std::size_t max_phrases) {
  if (source.empty()) throw std::invalid_argument("empty source sentence");
  ParallelExample ex;
  ex.source_ids = source_vocab.encode(source);
  ex.target_ids = {Vocabulary::eos};
  const PhraseTable empty;
  ex.annotation = annotate(table ? *table : empty, source, nullptr, max_phrases);
  if (table) ex.candidates = make_candidates(ex.annotation, *table, target_vocab);
  ex.source = std::move(source);
  return ex;
}

std::vector<Batch> make_batches(std::span<const ParallelExample> examples, std::size_t batch_size,
                                std::size_t max_len, std::uint64_t seed) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].source.size() <= max_len && examples[i].target.size() <= max_len)
      keep.push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(keep.begin(), keep.end(), rng);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < keep.size(); start += batch_size) {
    Batch b;
    const std::size_t stop = std::min(keep.size(), start + batch_size);
    b.indices.assign(keep.begin() + start, keep.begin() + stop);
    std::size_t src_len = 0, tgt_len = 0;
    for (std::size_t i : b.indices) {
      src_len = std::max(src_len, examples[i].source_ids.size());
      tgt_len = std::max(tgt_len, examples[i].target_ids.size());
    }
    for (std::size_t i : b.indices) {
      auto pad = [](const std::vector<int>& ids, std::size_t len, std::vector<int>& out,
                    std::vector<bool>& mask) {
        out = ids;
        out.resize(len, Vocabulary::pad);
        mask.assign(len, false);
        std::fill(mask.begin(), mask.begin() + static_cast<long>(ids.size()), true);
      };
      b.source_ids.emplace_back();
      b.source_mask.emplace_back();
      b.target_ids.emplace_back();
      b.target_mask.emplace_back();
      pad(examples[i].source_ids, src_len, b.source_ids.back(), b.source_mask.back());
      pad(examples[i].target_ids, tgt_len, b.target_ids.back(), b.target_mask.back());
    }
    batches.push_back(std::move(b));
  }
  if (batches.empty())
    log::warn("no sentence pair fits within max_len=" + std::to_string(max_len) +
              "; zero batches");
  return batches;
}

// ---- synthetic corpus -----------------------------------------------------

namespace {

struct Template {
  // Source-order units: -1 is a content word, k >= 0 is the k-th phrase slot.
  std::vector<int> units;
  // Target order as a permutation of unit indices.
  std::vector<std::size_t> target_order;
};

bool is_subsequence(const Tokens& needle, const Tokens& hay) {
  if (needle.size() > hay.size()) return false;
  for (std::size_t b = 0; b + needle.size() <= hay.size(); ++b)
    if (std::equal(needle.begin(), needle.end(), hay.begin() + b)) return true;
  return false;
}

std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.oov_fraction < 0.0 || cfg.oov_fraction > 1.0)
    throw std::invalid_argument("oov_fraction must lie in [0, 1]");
  if (cfg.vocab_size < Vocabulary::reserved + 8)
    throw std::invalid_argument("vocab_size must be at least 12");
  if (cfg.n_templates == 0 || cfg.n_rules == 0 || cfg.n_pairs == 0)
    throw std::invalid_argument("n_templates, n_rules and n_pairs must be at least 1");
  if (cfg.min_words == 0 || cfg.min_words > cfg.max_words)
    throw std::invalid_argument("need 1 <= min_words <= max_words");

  std::mt19937_64 rng(cfg.seed);
  const std::size_t regular = cfg.vocab_size - Vocabulary::reserved;
  const std::size_t n_phrase_words = std::max<std::size_t>(2, regular / 4);
  const std::size_t n_content = regular - n_phrase_words;

  SyntheticCorpus out;
  for (std::size_t i = 0; i < n_content; ++i) {
    out.source_tokens.push_back("s" + std::to_string(i));
    out.target_tokens.push_back("t" + std::to_string(i));
  }
  for (std::size_t i = 0; i < n_phrase_words; ++i) {
    out.source_tokens.push_back("ps" + std::to_string(i));
    out.target_tokens.push_back("pt" + std::to_string(i));
  }

  // Rules. Source phrases are unique; in-vocabulary target phrases never
  // contain one another so that gold spans are unambiguous.
  const auto n_oov = static_cast<std::size_t>(
      std::llround(cfg.oov_fraction * static_cast<double>(cfg.n_rules)));
  std::vector<bool> oov(cfg.n_rules, false);
  std::fill(oov.begin(), oov.begin() + static_cast<long>(std::min(n_oov, cfg.n_rules)), true);
  std::shuffle(oov.begin(), oov.end(), rng);

  std::set<Tokens> used_sources;
  std::vector<Tokens> in_vocab_targets;
  for (std::size_t r = 0; r < cfg.n_rules; ++r) {
    Tokens source;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) throw std::runtime_error("cannot draw unique source phrases");
      source.clear();
      const std::size_t len = uniform(rng, 1, 3);
      for (std::size_t k = 0; k < len; ++k)
        source.push_back("ps" + std::to_string(uniform(rng, 0, n_phrase_words - 1)));
      if (!used_sources.count(source)) break;
    }
    used_sources.insert(source);

    Tokens target;
    const std::size_t len = uniform(rng, 1, 3);
    if (oov[r]) {
      for (std::size_t k = 0; k < len; ++k)
        target.push_back("oov" + std::to_string(r) + "_" + std::to_string(k));
    } else {
      for (int attempt = 0;; ++attempt) {
        if (attempt > 10000) throw std::runtime_error("cannot draw distinct target phrases");
        target.clear();
        const std::size_t tl = attempt > 1000 ? 3 : len;
        for (std::size_t k = 0; k < tl; ++k)
          target.push_back("pt" + std::to_string(uniform(rng, 0, n_phrase_words - 1)));
        const bool clash = std::any_of(
            in_vocab_targets.begin(), in_vocab_targets.end(), [&](const Tokens& other) {
              return is_subsequence(other, target) || is_subsequence(target, other);
            });
        if (!clash) break;
      }
      in_vocab_targets.push_back(target);
    }
    out.table.add(std::move(source), std::move(target));
  }
  out.rule_oov = oov;

  // Templates: content words with phrase slots in distinct gaps, so phrases
  // are never adjacent; the target swaps some adjacent content-word pairs.
  std::vector<Template> templates;
  for (std::size_t t = 0; t < cfg.n_templates; ++t) {
    Template tpl;
    const std::size_t words = uniform(rng, cfg.min_words, cfg.max_words);
    const std::size_t max_p = std::min(cfg.max_phrases_per_sentence, words + 1);
    const std::size_t phrases = uniform(rng, 0, max_p);
    std::vector<std::size_t> gaps(words + 1);
    for (std::size_t g = 0; g <= words; ++g) gaps[g] = g;
    std::shuffle(gaps.begin(), gaps.end(), rng);
    std::vector<bool> gap_has_phrase(words + 1, false);
    for (std::size_t k = 0; k < phrases; ++k) gap_has_phrase[gaps[k]] = true;
    int slot = 0;
    for (std::size_t g = 0; g <= words; ++g) {
      if (gap_has_phrase[g]) tpl.units.push_back(slot++);
      if (g < words) tpl.units.push_back(-1);
    }
    tpl.target_order.resize(tpl.units.size());
    for (std::size_t i = 0; i < tpl.units.size(); ++i) tpl.target_order[i] = i;
    for (std::size_t i = 0; i + 1 < tpl.units.size(); ++i) {
      if (tpl.units[i] == -1 && tpl.units[i + 1] == -1 && uniform(rng, 0, 2) == 0) {
        std::swap(tpl.target_order[i], tpl.target_order[i + 1]);
        ++i;
      }
    }
    templates.push_back(std::move(tpl));
  }

  auto make_pair = [&]() {
    const Template& tpl = templates[uniform(rng, 0, templates.size() - 1)];
    std::vector<std::size_t> rules(cfg.n_rules);
    for (std::size_t r = 0; r < cfg.n_rules; ++r) rules[r] = r;
    std::shuffle(rules.begin(), rules.end(), rng);

    // Fill units with source/target token runs.
    std::vector<Tokens> src_units(tpl.units.size()), tgt_units(tpl.units.size());
    std::vector<long> unit_rule(tpl.units.size(), -1);
    for (std::size_t i = 0; i < tpl.units.size(); ++i) {
      if (tpl.units[i] < 0) {
        const std::size_t w = uniform(rng, 0, n_content - 1);
        src_units[i] = {"s" + std::to_string(w)};
        tgt_units[i] = {"t" + std::to_string(w)};
      } else {
        const std::size_t r = rules[static_cast<std::size_t>(tpl.units[i]) % cfg.n_rules];
        src_units[i] = out.table.rule(r).source;
        tgt_units[i] = out.table.rule(r).target;
        unit_rule[i] = static_cast<long>(r);
      }
    }
    SyntheticPair pair;
    std::vector<Span> src_spans(tpl.units.size()), tgt_spans(tpl.units.size());
    for (std::size_t i = 0; i < tpl.units.size(); ++i) {
      src_spans[i] = {pair.source.size(), pair.source.size() + src_units[i].size()};
      pair.source.insert(pair.source.end(), src_units[i].begin(), src_units[i].end());
    }
    for (std::size_t u : tpl.target_order) {
      tgt_spans[u] = {pair.target.size(), pair.target.size() + tgt_units[u].size()};
      pair.target.insert(pair.target.end(), tgt_units[u].begin(), tgt_units[u].end());
    }
    for (std::size_t i = 0; i < tpl.units.size(); ++i) {
      if (unit_rule[i] < 0) continue;
      const auto r = static_cast<std::size_t>(unit_rule[i]);
      pair.phrases.push_back(PlacedPhrase{r, src_spans[i], tgt_spans[i], oov[r]});
    }
    return pair;
  };

  for (std::size_t i = 0; i < cfg.n_pairs; ++i) out.train.push_back(make_pair());
  for (std::size_t i = 0; i < cfg.n_dev; ++i) out.dev.push_back(make_pair());
  for (std::size_t i = 0; i < cfg.n_test; ++i) out.test.push_back(make_pair());
  return out;
}

std::vector<PhraseExpectation> expectations(const SyntheticPair& pair, const PhraseTable& table,
                                            const std::vector<bool>& rule_oov) {
  std::vector<PhraseExpectation> out;
  for (const auto& p : pair.phrases) {
    PhraseExpectation e;
    e.target = table.rule(p.rule_id).target;
    e.left = p.target_span.begin == 0 ? "<s>" : pair.target[p.target_span.begin - 1];
    e.right = p.target_span.end >= pair.target.size() ? "</s>" : pair.target[p.target_span.end];
    e.oov = rule_oov.at(p.rule_id);
    out.push_back(std::move(e));
  }
  return out;
}

void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write_split = [&](const std::string& name, const std::vector<SyntheticPair>& pairs) {
    std::vector<Tokens> src, tgt;
    for (const auto& p : pairs) {
      src.push_back(p.source);
      tgt.push_back(p.target);
    }
    write_corpus(dir / (name + ".src"), src);
    write_corpus(dir / (name + ".tgt"), tgt);
    std::ofstream meta(dir / (name + ".meta.jsonl"));
    if (!meta) throw std::runtime_error("cannot write metadata under " + dir.string());
    for (const auto& p : pairs) {
      nlohmann::json phrases = nlohmann::json::array();
      const auto exp = expectations(p, corpus.table, corpus.rule_oov);
      for (std::size_t k = 0; k < p.phrases.size(); ++k) {
        const auto& pp = p.phrases[k];
        phrases.push_back({{"rule", pp.rule_id},
                           {"source_span", {pp.source_span.begin, pp.source_span.end}},
                           {"target_span", {pp.target_span.begin, pp.target_span.end}},
                           {"target", exp[k].target},
                           {"left", exp[k].left},
                           {"right", exp[k].right},
                           {"oov", exp[k].oov}});
      }
      meta << nlohmann::json{{"phrases", phrases}}.dump() << '\n';
    }
  };
  write_split("train", corpus.train);
  write_split("dev", corpus.dev);
  write_split("test", corpus.test);
  {
    std::ofstream table(dir / "table.tsv");
    if (!table) throw std::runtime_error("cannot write table under " + dir.string());
    corpus.table.save(table);
  }
  Vocabulary::from_tokens(corpus.source_tokens).save(dir / "vocab.src");
  Vocabulary::from_tokens(corpus.target_tokens).save(dir / "vocab.tgt");
}

std::vector<std::vector<PhraseExpectation>> read_metadata(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metadata " + path.string());
  std::vector<std::vector<PhraseExpectation>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      std::vector<PhraseExpectation> sentence;
      for (const auto& p : j.at("phrases")) {
        PhraseExpectation e;
        e.target = p.at("target").get<Tokens>();
        e.left = p.at("left").get<std::string>();
        e.right = p.at("right").get<std::string>();
        e.oov = p.value("oov", false);
        sentence.push_back(std::move(e));
      }
      out.push_back(std::move(sentence));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace phrasemem
