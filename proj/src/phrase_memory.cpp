#include "phrasemem/phrase_memory.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "phrasemem/log.hpp"

namespace phrasemem {

Tokens split_tokens(std::string_view line) {
  Tokens out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// ---- PhraseTable ----------------------------------------------------------

PhraseTable PhraseTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open phrase table " + path.string());
  return parse(in, path.string());
}

PhraseTable PhraseTable::parse(std::istream& in, const std::string& origin) {
  PhraseTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto tab = line.find('\t');
    auto where = [&] { return origin + ":" + std::to_string(line_no); };
    if (tab == std::string::npos) throw ParseError(where() + ": missing TAB separator");
    Tokens source = split_tokens(std::string_view(line).substr(0, tab));
    Tokens target = split_tokens(std::string_view(line).substr(tab + 1));
    if (source.empty()) throw ParseError(where() + ": empty source phrase");
    if (target.empty()) throw ParseError(where() + ": empty target phrase");
    table.add(std::move(source), std::move(target));
  }
  return table;
}

bool PhraseTable::add(Tokens source, Tokens target) {
  std::string key = join_tokens(source);
  if (by_source_.count(key)) {
    std::string msg = "duplicate source phrase '" + key + "' ignored; keeping first translation";
    log::warn(msg);
    warnings_.push_back(std::move(msg));
    return false;
  }
  const std::size_t id = rules_.size();
  by_source_.emplace(std::move(key), id);
  by_first_token_[source.front()].push_back(id);
  rules_.push_back(Rule{id, std::move(source), std::move(target)});
  return true;
}

std::span<const std::size_t> PhraseTable::starting_with(const std::string& token) const {
  auto it = by_first_token_.find(token);
  if (it == by_first_token_.end()) return {};
  return it->second;
}

void PhraseTable::save(std::ostream& out) const {
  for (const auto& r : rules_) out << join_tokens(r.source) << '\t' << join_tokens(r.target) << '\n';
}

// ---- matching -------------------------------------------------------------

std::vector<Match> match_all(const PhraseTable& table, std::span<const std::string> sentence) {
  std::vector<Match> out;
  for (std::size_t begin = 0; begin < sentence.size(); ++begin) {
    for (std::size_t id : table.starting_with(sentence[begin])) {
      const auto& src = table.rule(id).source;
      if (begin + src.size() > sentence.size()) continue;
      if (std::equal(src.begin(), src.end(), sentence.begin() + begin))
        out.push_back(Match{id, Span{begin, begin + src.size()}});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Match& a, const Match& b) {
    if (a.span.begin != b.span.begin) return a.span.begin < b.span.begin;
    return a.span.size() > b.span.size();
  });
  return out;
}

bool outranks(const Match& a, const Match& b) {
  if (a.span.size() != b.span.size()) return a.span.size() > b.span.size();
  if (a.span.begin != b.span.begin) return a.span.begin < b.span.begin;
  return a.rule_id < b.rule_id;
}

std::vector<Match> resolve_overlaps(std::vector<Match> matches) {
  std::stable_sort(matches.begin(), matches.end(), outranks);
  std::vector<Match> kept;
  for (const auto& m : matches) {
    const bool blocked = std::any_of(kept.begin(), kept.end(),
                                     [&](const Match& k) { return k.span.overlaps(m.span); });
    if (!blocked) kept.push_back(m);
  }
  std::sort(kept.begin(), kept.end(),
            [](const Match& a, const Match& b) { return a.span.begin < b.span.begin; });
  return kept;
}

std::vector<PhraseOccurrence> select_candidates(std::span<const Match> matches,
                                                std::size_t max_phrases) {
  std::vector<Match> chosen(matches.begin(), matches.end());
  if (chosen.size() > max_phrases) {
    // Coverage of disjoint spans is the sum of their lengths, so the longest
    // spans win; among equal lengths the earliest begins win.
    std::stable_sort(chosen.begin(), chosen.end(), [](const Match& a, const Match& b) {
      if (a.span.size() != b.span.size()) return a.span.size() > b.span.size();
      return a.span.begin < b.span.begin;
    });
    chosen.resize(max_phrases);
  }
  std::sort(chosen.begin(), chosen.end(),
            [](const Match& a, const Match& b) { return a.span.begin < b.span.begin; });
  std::vector<PhraseOccurrence> out;
  out.reserve(chosen.size());
  for (std::size_t s = 0; s < chosen.size(); ++s)
    out.push_back(PhraseOccurrence{chosen[s].rule_id, chosen[s].span, s, false});
  return out;
}

std::size_t coverage(std::span<const PhraseOccurrence> occurrences) {
  std::size_t n = 0;
  for (const auto& o : occurrences) n += o.source_span.size();
  return n;
}

SentenceAnnotation annotate(const PhraseTable& table, std::span<const std::string> source,
                            const Tokens* reference, std::size_t max_phrases) {
  SentenceAnnotation a;
  a.source_length = source.size();
  a.target_length = reference ? reference->size() : 0;
  a.max_phrases = max_phrases;
  a.occurrences = select_candidates(resolve_overlaps(match_all(table, source)), max_phrases);

  a.tag_matrix.assign(source.size() * max_phrases, 0.0);
  std::vector<bool> in_phrase(source.size(), false);
  for (const auto& occ : a.occurrences) {
    for (std::size_t i = occ.source_span.begin; i < occ.source_span.end; ++i) {
      a.tag_matrix[i * max_phrases + occ.slot] = 1.0;
      in_phrase[i] = true;
    }
  }
  for (std::size_t i = 0; i < source.size(); ++i)
    if (!in_phrase[i]) a.source_words.push_back(i);

  if (!reference) return a;

  const Tokens& ref = *reference;
  std::vector<Span> claimed;
  for (const auto& occ : a.occurrences) {
    const auto& target = table.rule(occ.rule_id).target;
    if (target.size() > ref.size()) continue;
    for (std::size_t b = 0; b + target.size() <= ref.size(); ++b) {
      if (!std::equal(target.begin(), target.end(), ref.begin() + b)) continue;
      const Span span{b, b + target.size()};
      const bool taken = std::any_of(claimed.begin(), claimed.end(),
                                     [&](const Span& c) { return c.overlaps(span); });
      if (taken) continue;
      claimed.push_back(span);
      a.gold.push_back(GoldPhrase{occ.slot, span});
      break;
    }
  }
  std::sort(a.gold.begin(), a.gold.end(), [](const GoldPhrase& x, const GoldPhrase& y) {
    return x.target_span.begin < y.target_span.begin;
  });
  std::vector<bool> in_gold(ref.size(), false);
  for (const auto& g : a.gold)
    for (std::size_t i = g.target_span.begin; i < g.target_span.end; ++i) in_gold[i] = true;
  for (std::size_t i = 0; i < ref.size(); ++i)
    if (!in_gold[i]) a.target_words.push_back(i);
  return a;
}

}  // namespace phrasemem
