#include "phrasemem/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace phrasemem {

std::string fold_case(std::string_view token) {
  std::string out(token);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Tokens& folded, std::size_t n) {
  NgramCounts counts;
  if (folded.size() < n) return counts;
  for (std::size_t i = 0; i + n <= folded.size(); ++i)
    ++counts[std::vector<std::string>(folded.begin() + static_cast<std::ptrdiff_t>(i),
                                      folded.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

Tokens folded(const Tokens& t) {
  Tokens out;
  out.reserve(t.size());
  for (const auto& w : t) out.push_back(fold_case(w));
  return out;
}

}  // namespace

BleuReport corpus_bleu(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("corpus_bleu: " + std::to_string(candidates.size()) +
                                " candidates vs " + std::to_string(references.size()) +
                                " references");
  if (candidates.empty()) throw std::invalid_argument("corpus_bleu: empty corpus");

  BleuReport r;
  r.sentences = candidates.size();
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const Tokens cand = folded(candidates[s]);
    const Tokens ref = folded(references[s]);
    r.candidate_length += cand.size();
    r.reference_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const NgramCounts c = ngrams(cand, n);
      const NgramCounts rf = ngrams(ref, n);
      for (const auto& [gram, count] : c) {
        auto it = rf.find(gram);
        r.matches[n - 1] += std::min(count, it == rf.end() ? std::size_t{0} : it->second);
        r.totals[n - 1] += count;
      }
    }
  }

  double log_sum = 0.0;
  bool any_zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    r.precisions[n] = r.totals[n] ? static_cast<double>(r.matches[n]) / r.totals[n] : 0.0;
    if (r.precisions[n] == 0.0) any_zero = true;
    else log_sum += std::log(r.precisions[n]);
  }
  const double c = static_cast<double>(r.candidate_length);
  const double ref_len = static_cast<double>(r.reference_length);
  if (r.candidate_length == 0) r.brevity_penalty = 0.0;
  else r.brevity_penalty = c < ref_len ? std::exp(1.0 - ref_len / c) : 1.0;
  r.bleu = any_zero ? 0.0 : r.brevity_penalty * std::exp(log_sum / 4.0);
  r.bleu4_only = r.brevity_penalty * r.precisions[3];
  return r;
}

PhraseAccuracy phrase_accuracy(std::span<const Tokens> candidates,
                               std::span<const std::vector<PhraseExpectation>> metadata,
                               PhraseFilter filter) {
  if (candidates.size() != metadata.size())
    throw std::invalid_argument("phrase_accuracy: " + std::to_string(candidates.size()) +
                                " candidates vs " + std::to_string(metadata.size()) +
                                " metadata lines");
  PhraseAccuracy acc;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const Tokens& cand = candidates[s];
    for (const auto& e : metadata[s]) {
      if (filter == PhraseFilter::oov_only && !e.oov) continue;
      if (filter == PhraseFilter::in_vocab_only && e.oov) continue;
      ++acc.expected;
      if (e.target.empty()) continue;
      bool found = false, placed = false;
      for (std::size_t i = 0; i + e.target.size() <= cand.size(); ++i) {
        if (!std::equal(e.target.begin(), e.target.end(),
                        cand.begin() + static_cast<std::ptrdiff_t>(i)))
          continue;
        found = true;
        const std::size_t end = i + e.target.size();
        const std::string left = i == 0 ? "<s>" : cand[i - 1];
        const std::string right = end == cand.size() ? "</s>" : cand[end];
        if (left == e.left && right == e.right) placed = true;
      }
      acc.found += found ? 1 : 0;
      acc.positioned += placed ? 1 : 0;
    }
  }
  if (acc.expected) {
    acc.recall = static_cast<double>(acc.found) / acc.expected;
    acc.position_rate = static_cast<double>(acc.positioned) / acc.expected;
  }
  return acc;
}

namespace {

nlohmann::json phrases_json(const PhraseAccuracy& a) {
  return {{"expected", a.expected},
          {"found", a.found},
          {"positioned", a.positioned},
          {"recall", a.recall},
          {"position_rate", a.position_rate}};
}

}  // namespace

std::string format_report(const EvalReport& rep) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  const auto& b = rep.bleu;
  os << "sentences        " << b.sentences << '\n';
  os << "BLEU             " << b.bleu << '\n';
  os << "4-gram BLEU      " << b.bleu4_only << '\n';
  os << "brevity penalty  " << b.brevity_penalty << "  (" << b.candidate_length << " / "
     << b.reference_length << " tokens)\n";
  for (std::size_t n = 0; n < 4; ++n)
    os << "p" << n + 1 << "               " << b.precisions[n] << "  (" << b.matches[n] << " / "
       << b.totals[n] << ")\n";
  auto phrases = [&](const char* label, const std::optional<PhraseAccuracy>& a) {
    if (!a) return;
    os << label << " recall " << a->recall << "  position " << a->position_rate << "  ("
       << a->found << " / " << a->positioned << " / " << a->expected << ")\n";
  };
  phrases("phrases    ", rep.phrases);
  phrases("oov phrases", rep.oov_phrases);
  return os.str();
}

nlohmann::json report_json(const EvalReport& rep) {
  const auto& b = rep.bleu;
  nlohmann::json j{{"sentences", b.sentences},
                   {"bleu", b.bleu},
                   {"bleu4_only", b.bleu4_only},
                   {"brevity_penalty", b.brevity_penalty},
                   {"candidate_length", b.candidate_length},
                   {"reference_length", b.reference_length},
                   {"precisions", b.precisions},
                   {"matches", b.matches},
                   {"totals", b.totals}};
  if (rep.phrases) j["phrases"] = phrases_json(*rep.phrases);
  if (rep.oov_phrases) j["oov_phrases"] = phrases_json(*rep.oov_phrases);
  return j;
}

}  // namespace phrasemem
