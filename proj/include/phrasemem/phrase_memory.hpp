#pragma once

// Symbolic phrase memory: a table of source -> target phrase rules, matching
// of rules against tokenized sentences, overlap resolution, candidate
// selection by coverage, and the per-sentence tag layout fed to the encoder.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace phrasemem {

using Tokens = std::vector<std::string>;

Tokens split_tokens(std::string_view line);
std::string join_tokens(std::span<const std::string> tokens);

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Half-open token interval.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool contains(std::size_t i) const { return begin <= i && i < end; }
  bool overlaps(const Span& o) const { return begin < o.end && o.begin < end; }
  bool operator==(const Span&) const = default;
};

struct Rule {
  std::size_t id = 0;
  Tokens source;
  Tokens target;
};

class PhraseTable {
 public:
  // One rule per line: source tokens, TAB, target tokens. Blank lines and
  // lines starting with '#' are skipped. A repeated source phrase keeps the
  // first translation and records a warning.
  static PhraseTable load(const std::filesystem::path& path);
  static PhraseTable parse(std::istream& in, const std::string& origin = "<stream>");

  // Returns false (and records a warning) when the source phrase is taken.
  bool add(Tokens source, Tokens target);

  const std::vector<Rule>& rules() const { return rules_; }
  const Rule& rule(std::size_t id) const { return rules_.at(id); }
  std::size_t size() const { return rules_.size(); }
  bool empty() const { return rules_.empty(); }
  const std::vector<std::string>& warnings() const { return warnings_; }

  // Rule ids whose source phrase starts with `token`.
  std::span<const std::size_t> starting_with(const std::string& token) const;

  void save(std::ostream& out) const;

 private:
  std::vector<Rule> rules_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_first_token_;
  std::unordered_map<std::string, std::size_t> by_source_;
  std::vector<std::string> warnings_;
};

struct Match {
  std::size_t rule_id = 0;
  Span span;
  bool operator==(const Match&) const = default;
};

// Every occurrence of every source phrase, ordered by (begin, longer first).
std::vector<Match> match_all(const PhraseTable& table, std::span<const std::string> sentence);

// True when `a` survives an overlap with `b`: more tokens, or equally long
// and further left.
bool outranks(const Match& a, const Match& b);

// Drops every match that overlaps a surviving match which outranks it.
// Result is ordered by begin.
std::vector<Match> resolve_overlaps(std::vector<Match> matches);

struct PhraseOccurrence {
  std::size_t rule_id = 0;
  Span source_span;
  std::size_t slot = 0;
  bool consumed = false;
};

// Keeps at most `max_phrases` non-overlapping matches with maximum token
// coverage; ties prefer earlier begin positions. Slots follow source order.
std::vector<PhraseOccurrence> select_candidates(std::span<const Match> matches,
                                                std::size_t max_phrases);

std::size_t coverage(std::span<const PhraseOccurrence> occurrences);

struct GoldPhrase {
  std::size_t slot = 0;  // index into SentenceAnnotation::occurrences
  Span target_span;
};

struct SentenceAnnotation {
  std::size_t source_length = 0;
  std::size_t target_length = 0;
  std::size_t max_phrases = 0;
  std::vector<PhraseOccurrence> occurrences;
  std::vector<GoldPhrase> gold;           // ordered by target position
  std::vector<double> tag_matrix;         // source_length x max_phrases, row-major
  std::vector<std::size_t> source_words;  // positions outside selected phrases
  std::vector<std::size_t> target_words;  // positions outside gold target spans

  double tag(std::size_t position, std::size_t slot) const {
    return tag_matrix[position * max_phrases + slot];
  }
};

SentenceAnnotation annotate(const PhraseTable& table, std::span<const std::string> source,
                            const Tokens* reference, std::size_t max_phrases);

}  // namespace phrasemem
