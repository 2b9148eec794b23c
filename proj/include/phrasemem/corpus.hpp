#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "phrasemem/phrase_memory.hpp"

namespace phrasemem {

class Vocabulary {
 public:
  static constexpr int pad = 0;
  static constexpr int bos = 1;
  static constexpr int eos = 2;
  static constexpr int unk = 3;
  static constexpr std::size_t reserved = 4;

  Vocabulary();
  // `tokens` are the non-reserved entries in id order.
  static Vocabulary from_tokens(std::span<const std::string> tokens);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<std::string> regular_tokens() const;

  std::vector<int> encode(std::span<const std::string> tokens) const;
  Tokens decode(std::span<const int> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct VocabularyBuild {
  Vocabulary vocab;
  double coverage = 0.0;  // fraction of corpus tokens that are in-vocabulary
};

// Most frequent tokens first, ties broken lexicographically.
VocabularyBuild build_vocab(std::span<const Tokens> corpus, std::size_t max_size);

std::vector<Tokens> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, std::span<const Tokens> sentences);

// A selected phrase occurrence with its rule's target side resolved against
// the target vocabulary. Candidate i holds tag slot i.
struct PhraseCandidate {
  std::size_t slot = 0;
  std::size_t rule_id = 0;
  Span source_span;
  Tokens target_tokens;
  std::vector<int> target_ids;  // UNK for out-of-vocabulary tokens
  bool in_vocab = true;         // no UNK among target_ids
};

std::vector<PhraseCandidate> make_candidates(const SentenceAnnotation& annotation,
                                             const PhraseTable& table,
                                             const Vocabulary& target_vocab);

struct ParallelExample {
  Tokens source;
  Tokens target;
  std::vector<int> source_ids;
  std::vector<int> target_ids;  // EOS-terminated
  SentenceAnnotation annotation;
  std::vector<PhraseCandidate> candidates;
};

// `table` may be null (no phrase memory: all-zero tags, every target token
// is a plain word).
ParallelExample make_example(Tokens source, Tokens target, const Vocabulary& source_vocab,
                             const Vocabulary& target_vocab, const PhraseTable* table,
                             std::size_t max_phrases);

// Source side only (translation input): candidates come from the source
// matches alone and there is no gold annotation.
ParallelExample make_source_input(Tokens source, const Vocabulary& source_vocab,
                                  const Vocabulary& target_vocab, const PhraseTable* table,
                                  std::size_t max_phrases);

struct Batch {
  std::vector<std::size_t> indices;            // into the example list
  std::vector<std::vector<int>> source_ids;    // padded with PAD
  std::vector<std::vector<int>> target_ids;
  std::vector<std::vector<bool>> source_mask;  // true on real tokens
  std::vector<std::vector<bool>> target_mask;
};

// Filters pairs whose source or target exceeds `max_len` tokens, shuffles
// with `seed`, and pads each batch.
std::vector<Batch> make_batches(std::span<const ParallelExample> examples, std::size_t batch_size,
                                std::size_t max_len, std::uint64_t seed);

// ---- synthetic parallel corpus --------------------------------------------

struct SyntheticConfig {
  std::size_t vocab_size = 120;  // per side, reserved ids included
  std::size_t n_templates = 12;
  std::size_t n_rules = 40;
  double oov_fraction = 0.25;
  std::size_t n_pairs = 2000;  // training pairs
  std::size_t n_dev = 200;
  std::size_t n_test = 200;
  std::size_t min_words = 4;
  std::size_t max_words = 8;
  std::size_t max_phrases_per_sentence = 3;
  std::uint64_t seed = 1;
};

struct PlacedPhrase {
  std::size_t rule_id = 0;
  Span source_span;
  Span target_span;
  bool oov = false;
};

struct SyntheticPair {
  Tokens source;
  Tokens target;
  std::vector<PlacedPhrase> phrases;
};

struct SyntheticCorpus {
  std::vector<SyntheticPair> train, dev, test;
  PhraseTable table;
  std::vector<bool> rule_oov;
  std::vector<std::string> source_tokens;  // non-reserved vocabulary, id order
  std::vector<std::string> target_tokens;
};

SyntheticCorpus generate_synthetic(const SyntheticConfig& config);

// Writes {train,dev,test}.{src,tgt}, {split}.meta.jsonl, table.tsv,
// vocab.src and vocab.tgt under `dir`.
void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

// One expected phrase placement in a reference sentence.
struct PhraseExpectation {
  Tokens target;
  std::string left;   // "<s>" at sentence start
  std::string right;  // "</s>" at sentence end
  bool oov = false;
};

std::vector<PhraseExpectation> expectations(const SyntheticPair& pair, const PhraseTable& table,
                                            const std::vector<bool>& rule_oov);
std::vector<std::vector<PhraseExpectation>> read_metadata(const std::filesystem::path& path);

}  // namespace phrasemem
