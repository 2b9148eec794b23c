// phrasemem: phrase-memory translation toolkit.
//
//   phrasemem synth       --out DIR
//   phrasemem preprocess  --src F [--tgt F] [--table F] [--out F]
//   phrasemem train       --train-src F --train-tgt F --checkpoint F [...]
//   phrasemem translate   --checkpoint F --input F [--table F] [--beam N]
//   phrasemem eval        --candidates F --references F [--metadata F] [--json]
//   phrasemem grad-check  [--variant gate|softmax|baseline|all]
//
// Exit status: 0 success, 1 runtime failure, 2 usage error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "phrasemem/checkpoint.hpp"
#include "phrasemem/corpus.hpp"
#include "phrasemem/decoder.hpp"
#include "phrasemem/evaluator.hpp"
#include "phrasemem/log.hpp"
#include "phrasemem/phrase_memory.hpp"
#include "phrasemem/run_config.hpp"
#include "phrasemem/search.hpp"
#include "phrasemem/toy.hpp"
#include "phrasemem/trainer.hpp"

namespace pm = phrasemem;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing ") + what);
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path);
}

pm::PhraseTable load_table(const std::string& path) {
  if (path.empty()) return {};
  return pm::PhraseTable::load(path);
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  pm::SyntheticConfig config;
};

int run_synth(const SynthArgs& a) {
  if (a.out.empty()) throw UsageError("missing --out");
  const auto corpus = pm::generate_synthetic(a.config);
  pm::write_synthetic(corpus, a.out);
  std::cout << "wrote " << corpus.train.size() << " train, " << corpus.dev.size() << " dev, "
            << corpus.test.size() << " test pairs and " << corpus.table.size() << " rules to "
            << a.out << '\n';
  return 0;
}

// ---- preprocess ------------------------------------------------------------

struct PreprocessArgs {
  std::string src, tgt, table, out;
  std::size_t max_phrases = 10;
};

int run_preprocess(const PreprocessArgs& a) {
  require_file(a.src, "--src");
  if (!a.tgt.empty()) require_file(a.tgt, "--tgt");
  if (!a.table.empty()) require_file(a.table, "--table");
  if (a.max_phrases == 0) throw UsageError("--max-phrases must be positive");

  const auto table = load_table(a.table);
  const auto sources = pm::read_corpus(a.src);
  std::vector<pm::Tokens> targets;
  if (!a.tgt.empty()) {
    targets = pm::read_corpus(a.tgt);
    if (targets.size() != sources.size())
      throw UsageError("--src and --tgt have different line counts");
  }

  std::ofstream file;
  if (!a.out.empty()) {
    file.open(a.out);
    if (!file) throw std::runtime_error("cannot write " + a.out);
  }
  std::ostream& out = a.out.empty() ? std::cout : file;

  std::size_t with_phrase = 0, covered = 0, tokens = 0, gold = 0;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const auto ann = pm::annotate(table, sources[i], targets.empty() ? nullptr : &targets[i],
                                  a.max_phrases);
    nlohmann::json occ = nlohmann::json::array();
    for (const auto& o : ann.occurrences)
      occ.push_back({{"rule", o.rule_id},
                     {"slot", o.slot},
                     {"source_span", {o.source_span.begin, o.source_span.end}},
                     {"target", pm::join_tokens(table.rule(o.rule_id).target)}});
    nlohmann::json g = nlohmann::json::array();
    for (const auto& gp : ann.gold)
      g.push_back({{"slot", gp.slot}, {"target_span", {gp.target_span.begin, gp.target_span.end}}});
    nlohmann::json tags = nlohmann::json::array();
    for (std::size_t p = 0; p < ann.source_length; ++p) {
      std::vector<int> row;
      for (std::size_t k = 0; k < a.max_phrases; ++k) row.push_back(ann.tag(p, k) != 0.0 ? 1 : 0);
      tags.push_back(row);
    }
    out << nlohmann::json{{"line", i + 1}, {"occurrences", occ}, {"gold", g}, {"tags", tags}}.dump()
        << '\n';
    with_phrase += ann.occurrences.empty() ? 0 : 1;
    for (const auto& o : ann.occurrences) covered += o.source_span.size();
    tokens += ann.source_length;
    gold += ann.gold.size();
  }

  std::ostream& stats = a.out.empty() ? std::cerr : std::cout;
  stats << "sentences            " << sources.size() << '\n'
        << "with >= 1 phrase     " << with_phrase << '\n'
        << "mean coverage        "
        << (tokens ? static_cast<double>(covered) / static_cast<double>(tokens) : 0.0) << '\n'
        << "gold phrases         " << gold << '\n';
  return 0;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  pm::RunConfig run;
  std::string resume;
  std::string dev_src, dev_tgt;
  bool grad_check = false;
};

pm::Vocabulary vocab_for(const std::string& file, const std::vector<pm::Tokens>& corpus,
                         std::size_t size) {
  if (!file.empty()) return pm::Vocabulary::load(file);
  const std::size_t cap = size ? size : std::numeric_limits<std::size_t>::max();
  auto built = pm::build_vocab(corpus, cap);
  pm::log::info("built vocabulary of " + std::to_string(built.vocab.size()) + " types, coverage " +
                std::to_string(built.coverage));
  return built.vocab;
}

int run_grad_check_for(pm::Variant variant, double tol, double step, std::uint64_t seed,
                       bool with_phrases, pm::Differencing numeric = pm::Differencing::extended);

int run_train(const TrainArgs& a) {
  const pm::RunConfig& rc = a.run;
  require_file(rc.train_src, "--train-src");
  require_file(rc.train_tgt, "--train-tgt");
  const bool uses_table = rc.variant != pm::Variant::baseline;
  if (uses_table && !rc.table.empty()) require_file(rc.table, "--table");
  if (!rc.source_vocab.empty()) require_file(rc.source_vocab, "--src-vocab");
  if (!rc.target_vocab.empty()) require_file(rc.target_vocab, "--tgt-vocab");
  if (!a.resume.empty()) require_file(a.resume, "--resume");
  if (!a.dev_src.empty() || !a.dev_tgt.empty()) {
    require_file(a.dev_src, "--dev-src");
    require_file(a.dev_tgt, "--dev-tgt");
  }
  if (rc.checkpoint.empty()) throw UsageError("missing --checkpoint");
  if (rc.batch_size == 0 || rc.workers == 0) throw UsageError("batch size and workers must be positive");

  if (a.grad_check) {
    if (run_grad_check_for(rc.variant, 1e-4, 1e-5, rc.seed, true) != 0)
      throw std::runtime_error("gradient check failed; not training");
  }

  const auto src = pm::read_corpus(rc.train_src);
  const auto tgt = pm::read_corpus(rc.train_tgt);
  if (src.size() != tgt.size()) throw UsageError("training source and target differ in length");
  const auto table = uses_table ? load_table(rc.table) : pm::PhraseTable{};

  std::optional<pm::Checkpoint> resumed;
  if (!a.resume.empty()) resumed = pm::load_checkpoint(a.resume, rc.variant);

  pm::Vocabulary sv = resumed ? resumed->source_vocab : vocab_for(rc.source_vocab, src, rc.source_vocab_size);
  pm::Vocabulary tv = resumed ? resumed->target_vocab : vocab_for(rc.target_vocab, tgt, rc.target_vocab_size);

  pm::ModelConfig mc;
  mc.variant = rc.variant;
  mc.source_vocab = sv.size();
  mc.target_vocab = tv.size();
  mc.embed_dim = rc.embed_dim;
  mc.hidden_dim = rc.hidden_dim;
  mc.max_phrases = rc.max_phrases;
  mc.gate_word_factor = rc.gate_word_factor;
  pm::Model model = resumed ? resumed->model : pm::Model(mc);
  if (!resumed) model.initialize(rc.seed);

  auto build = [&](const std::vector<pm::Tokens>& s, const std::vector<pm::Tokens>& t) {
    std::vector<pm::ParallelExample> out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i].empty()) continue;
      out.push_back(pm::make_example(s[i], t[i], sv, tv, uses_table ? &table : nullptr,
                                     model.config().max_phrases));
    }
    return out;
  };
  const auto examples = build(src, tgt);
  std::vector<pm::ParallelExample> dev;
  if (!a.dev_src.empty()) dev = build(pm::read_corpus(a.dev_src), pm::read_corpus(a.dev_tgt));

  pm::TrainOptions opts;
  opts.batch_size = rc.batch_size;
  opts.max_len = rc.max_len;
  opts.workers = rc.workers;
  opts.seed = rc.seed;
  opts.metrics_csv = rc.metrics;
  pm::Trainer trainer(model, rc.adam, opts);
  if (resumed) {
    pm::restore_optimizer(*resumed, trainer.optimizer());
    pm::restore_rng(*resumed, trainer.rng());
  }

  auto save = [&] {
    pm::save_checkpoint({model, sv, tv, &trainer.optimizer(), &trainer.rng()}, rc.checkpoint);
  };
  for (std::size_t epoch = 0; epoch < rc.epochs; ++epoch) {
    if (rc.max_steps && trainer.optimizer().steps() >= rc.max_steps) break;
    const auto m = trainer.train_epoch(examples, rc.max_steps);
    std::cout << "epoch " << epoch + 1 << " step " << trainer.optimizer().steps() << " loss "
              << m.mean_loss << " ppl " << m.perplexity << " gate " << m.gate_rate;
    if (!dev.empty()) std::cout << " dev_loss " << pm::mean_nll(model, dev);
    std::cout << '\n';
    save();
  }
  save();
  return 0;
}

// ---- translate ---------------------------------------------------------------

struct TranslateArgs {
  std::string checkpoint, input, table, output;
  std::size_t beam = 1;
  std::size_t max_len = 60;
  bool trace = false;
  bool no_phrases = false;
};

int run_translate(const TranslateArgs& a) {
  require_file(a.checkpoint, "--checkpoint");
  require_file(a.input, "--input");
  if (!a.table.empty()) require_file(a.table, "--table");
  if (a.beam == 0 || a.max_len == 0) throw UsageError("--beam and --max-len must be positive");

  auto ck = pm::load_checkpoint(a.checkpoint);
  pm::Model& model = ck.model;
  model.phrase_mode_disabled = a.no_phrases;
  const bool uses_table = model.config().variant != pm::Variant::baseline;
  const auto table = uses_table ? load_table(a.table) : pm::PhraseTable{};

  std::ofstream file;
  if (!a.output.empty()) {
    file.open(a.output);
    if (!file) throw std::runtime_error("cannot write " + a.output);
  }
  std::ostream& out = a.output.empty() ? std::cout : file;

  pm::SearchOptions so;
  so.beam = a.beam;
  so.max_len = a.max_len;
  std::size_t line = 0;
  for (const auto& src : pm::read_corpus(a.input)) {
    ++line;
    if (src.empty()) {
      out << '\n';
      continue;
    }
    const auto input = pm::make_source_input(src, ck.source_vocab, ck.target_vocab,
                                             uses_table ? &table : nullptr,
                                             model.config().max_phrases);
    if (a.trace) {
      std::cerr << "# sentence " << line << '\n';
      so.trace = &std::cerr;
    }
    const auto tr = pm::translate(model, ck.target_vocab, input, so);
    out << pm::join_tokens(tr.tokens) << '\n';
  }
  return 0;
}

// ---- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string candidates, references, metadata;
  bool json = false;
};

int run_eval(const EvalArgs& a) {
  require_file(a.candidates, "--candidates");
  require_file(a.references, "--references");
  if (!a.metadata.empty()) require_file(a.metadata, "--metadata");
  const auto cand = pm::read_corpus(a.candidates);
  const auto ref = pm::read_corpus(a.references);
  if (cand.size() != ref.size())
    throw UsageError("candidate and reference files differ in line count");

  pm::EvalReport rep;
  rep.bleu = pm::corpus_bleu(cand, ref);
  if (!a.metadata.empty()) {
    const auto meta = pm::read_metadata(a.metadata);
    rep.phrases = pm::phrase_accuracy(cand, meta);
    rep.oov_phrases = pm::phrase_accuracy(cand, meta, pm::PhraseFilter::oov_only);
  }
  if (a.json) {
    std::cout << pm::report_json(rep).dump(2) << '\n';
  } else {
    std::cout << pm::format_report(rep);
  }
  return 0;
}

// ---- grad-check --------------------------------------------------------------

int run_grad_check_for(pm::Variant variant, double tol, double step, std::uint64_t seed,
                       bool with_phrases, pm::Differencing numeric) {
  auto toy = pm::gradient_toy(variant, with_phrases);
  pm::Model model(toy.config);
  model.initialize(seed);
  const auto rep = pm::verify_gradients(model, toy.examples, tol, step, numeric);
  std::cout << "variant " << pm::to_string(variant) << (with_phrases ? "" : " (no phrases)")
            << '\n';
  for (const auto& g : rep.groups)
    std::cout << "  " << (g.passed ? "PASS" : "FAIL") << "  " << g.group << "  max_rel_err "
              << g.max_rel_error << "  (" << g.worst_parameter << ")\n";
  return rep.passed ? 0 : 1;
}

struct GradCheckArgs {
  std::string variant = "all";
  double tol = 1e-4;
  double step = 1e-5;
  std::uint64_t seed = 7;
  bool no_phrases = false;
  std::string differencing = "extended";
};

int run_grad_check(const GradCheckArgs& a) {
  std::vector<pm::Variant> variants;
  if (a.variant == "all") {
    variants = {pm::Variant::gate, pm::Variant::softmax, pm::Variant::baseline};
  } else {
    try {
      variants = {pm::parse_variant(a.variant)};
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  pm::Differencing numeric = pm::Differencing::extended;
  if (a.differencing == "graph") numeric = pm::Differencing::graph;
  else if (a.differencing != "extended") throw UsageError("--differencing must be extended or graph");
  int status = 0;
  for (auto v : variants)
    status |= run_grad_check_for(v, a.tol, a.step, a.seed, !a.no_phrases, numeric);
  return status;
}

// --config is read before the other flags so that flags override it.
pm::RunConfig preload_config(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      if (!fs::is_regular_file(argv[i + 1]))
        throw UsageError(std::string("--config not found: ") + argv[i + 1]);
      try {
        return pm::load_run_config(argv[i + 1]);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
    }
    if (std::string(argv[i]).rfind("--config=", 0) == 0) {
      const std::string path = std::string(argv[i]).substr(9);
      if (!fs::is_regular_file(path)) throw UsageError("--config not found: " + path);
      try {
        return pm::load_run_config(path);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
    }
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phrase-memory neural machine translation toolkit"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "Informational logging on stderr");
  app.add_flag("-q,--quiet", quiet, "Suppress warnings");

  TrainArgs train;
  try {
    train.run = preload_config(argc, argv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic corpus and phrase table");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--seed", synth.config.seed);
  s->add_option("--pairs", synth.config.n_pairs, "Training pairs");
  s->add_option("--dev", synth.config.n_dev);
  s->add_option("--test", synth.config.n_test);
  s->add_option("--rules", synth.config.n_rules);
  s->add_option("--oov-fraction", synth.config.oov_fraction);
  s->add_option("--vocab-size", synth.config.vocab_size, "Target vocabulary size incl. reserved");
  s->add_option("--templates", synth.config.n_templates);

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Annotate a corpus with phrase matches");
  p->add_option("--src", pre.src)->required();
  p->add_option("--tgt", pre.tgt, "Reference side, for gold phrase locations");
  p->add_option("--table", pre.table);
  p->add_option("--out", pre.out, "JSON-lines dump (default: stdout)");
  p->add_option("--max-phrases", pre.max_phrases);

  auto* t = app.add_subcommand("train", "Train a model");
  pm::RunConfig& rc = train.run;
  std::string variant_name = pm::to_string(rc.variant);
  t->add_option("--config", "JSON run configuration (flags override it)");
  t->add_option("--variant", variant_name, "gate | softmax | baseline");
  t->add_option("--train-src", rc.train_src);
  t->add_option("--train-tgt", rc.train_tgt);
  t->add_option("--dev-src", train.dev_src);
  t->add_option("--dev-tgt", train.dev_tgt);
  t->add_option("--table", rc.table);
  t->add_option("--src-vocab", rc.source_vocab);
  t->add_option("--tgt-vocab", rc.target_vocab);
  t->add_option("--src-vocab-size", rc.source_vocab_size);
  t->add_option("--tgt-vocab-size", rc.target_vocab_size);
  t->add_option("--checkpoint", rc.checkpoint, "Output checkpoint");
  t->add_option("--metrics", rc.metrics, "Metrics CSV (appended)");
  t->add_option("--resume", train.resume, "Continue from a checkpoint");
  t->add_option("--embed-dim", rc.embed_dim);
  t->add_option("--hidden-dim", rc.hidden_dim);
  t->add_option("--max-phrases", rc.max_phrases);
  t->add_option("--epochs", rc.epochs);
  t->add_option("--steps", rc.max_steps, "Stop after this many updates in total");
  t->add_option("--batch-size", rc.batch_size);
  t->add_option("--max-len", rc.max_len);
  t->add_option("--lr", rc.adam.lr);
  t->add_option("--clip", rc.adam.clip_norm);
  t->add_option("--seed", rc.seed);
  t->add_option("--workers", rc.workers);
  t->add_flag("--grad-check", train.grad_check, "Verify gradients first; abort on failure");

  TranslateArgs tr;
  auto* x = app.add_subcommand("translate", "Translate a file line by line");
  x->add_option("--checkpoint", tr.checkpoint)->required();
  x->add_option("--input", tr.input)->required();
  x->add_option("--table", tr.table);
  x->add_option("--output", tr.output, "Default: stdout");
  x->add_option("--beam", tr.beam);
  x->add_option("--max-len", tr.max_len);
  x->add_flag("--trace", tr.trace, "Per-step decisions on stderr");
  x->add_flag("--no-phrases", tr.no_phrases, "Pin the decoder to word mode");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score translations");
  e->add_option("--candidates", ev.candidates)->required();
  e->add_option("--references", ev.references)->required();
  e->add_option("--metadata", ev.metadata, "Synthetic metadata for phrase accuracy");
  e->add_flag("--json", ev.json);

  GradCheckArgs gc;
  auto* g = app.add_subcommand("grad-check", "Finite-difference gradient check on a toy batch");
  g->add_option("--variant", gc.variant, "gate | softmax | baseline | all");
  g->add_option("--tol", gc.tol);
  g->add_option("--step", gc.step);
  g->add_option("--seed", gc.seed);
  g->add_flag("--no-phrases", gc.no_phrases);
  g->add_option("--differencing", gc.differencing,
                "extended: long double reference forward (default); graph: double, on the tape");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 2;
  }

  pm::log::set_level(quiet ? pm::log::Level::quiet
                           : verbose ? pm::log::Level::info : pm::log::Level::warning);
  try {
    if (*s) return run_synth(synth);
    if (*p) return run_preprocess(pre);
    if (*t) {
      try {
        rc.variant = pm::parse_variant(variant_name);
      } catch (const std::invalid_argument& ex) {
        throw UsageError(ex.what());
      }
      return run_train(train);
    }
    if (*x) return run_translate(tr);
    if (*e) return run_eval(ev);
    if (*g) return run_grad_check(gc);
  } catch (const UsageError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 2;
}
