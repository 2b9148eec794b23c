#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "phrasemem/corpus.hpp"

namespace phrasemem {

struct BleuReport {
  std::array<double, 4> precisions{};  // clipped n-gram precisions, n = 1..4
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  double brevity_penalty = 0.0;
  double bleu = 0.0;
  double bleu4_only = 0.0;  // brevity_penalty * p4
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
  std::size_t sentences = 0;
};

// Corpus-level BLEU with one reference per sentence, case-insensitive,
// unsmoothed.
BleuReport corpus_bleu(std::span<const Tokens> candidates, std::span<const Tokens> references);

// ASCII lowercase; bytes outside A-Z are left alone.
std::string fold_case(std::string_view token);

struct PhraseAccuracy {
  std::size_t expected = 0;
  std::size_t found = 0;        // target phrase appears verbatim
  std::size_t positioned = 0;   // ... with the expected neighbours
  double recall = 0.0;
  double position_rate = 0.0;
};

enum class PhraseFilter { all, oov_only, in_vocab_only };

PhraseAccuracy phrase_accuracy(std::span<const Tokens> candidates,
                               std::span<const std::vector<PhraseExpectation>> metadata,
                               PhraseFilter filter = PhraseFilter::all);

struct EvalReport {
  BleuReport bleu;
  std::optional<PhraseAccuracy> phrases;
  std::optional<PhraseAccuracy> oov_phrases;
};

std::string format_report(const EvalReport& report);
nlohmann::json report_json(const EvalReport& report);

}  // namespace phrasemem
