#include "phrasemem/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace phrasemem {

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"embed_dim", c.embed_dim},
                     {"hidden_dim", c.hidden_dim},
                     {"max_phrases", c.max_phrases},
                     {"gate_word_factor", c.gate_word_factor},
                     {"source_vocab_size", c.source_vocab_size},
                     {"target_vocab_size", c.target_vocab_size},
                     {"adam", c.adam},
                     {"batch_size", c.batch_size},
                     {"max_len", c.max_len},
                     {"epochs", c.epochs},
                     {"max_steps", c.max_steps},
                     {"workers", c.workers},
                     {"seed", c.seed},
                     {"beam", c.beam},
                     {"decode_max_len", c.decode_max_len},
                     {"train_src", c.train_src},
                     {"train_tgt", c.train_tgt},
                     {"table", c.table},
                     {"source_vocab", c.source_vocab},
                     {"target_vocab", c.target_vocab},
                     {"checkpoint", c.checkpoint},
                     {"metrics", c.metrics}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  static const char* known[] = {"variant", "embed_dim", "hidden_dim", "max_phrases",
                                "gate_word_factor", "source_vocab_size", "target_vocab_size",
                                "adam", "batch_size", "max_len", "epochs", "max_steps",
                                "workers", "seed", "beam", "decode_max_len", "train_src",
                                "train_tgt", "table", "source_vocab", "target_vocab",
                                "checkpoint", "metrics", "preset"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(known), std::end(known), key) == std::end(known))
      throw std::invalid_argument("unknown config key '" + key + "'");
  }
  if (j.value("preset", std::string()) == "paper-scale") c = paper_scale_preset();
  if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.max_phrases = j.value("max_phrases", c.max_phrases);
  c.gate_word_factor = j.value("gate_word_factor", c.gate_word_factor);
  c.source_vocab_size = j.value("source_vocab_size", c.source_vocab_size);
  c.target_vocab_size = j.value("target_vocab_size", c.target_vocab_size);
  if (j.contains("adam")) j["adam"].get_to(c.adam);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_len = j.value("max_len", c.max_len);
  c.epochs = j.value("epochs", c.epochs);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.workers = j.value("workers", c.workers);
  c.seed = j.value("seed", c.seed);
  c.beam = j.value("beam", c.beam);
  c.decode_max_len = j.value("decode_max_len", c.decode_max_len);
  c.train_src = j.value("train_src", c.train_src);
  c.train_tgt = j.value("train_tgt", c.train_tgt);
  c.table = j.value("table", c.table);
  c.source_vocab = j.value("source_vocab", c.source_vocab);
  c.target_vocab = j.value("target_vocab", c.target_vocab);
  c.checkpoint = j.value("checkpoint", c.checkpoint);
  c.metrics = j.value("metrics", c.metrics);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

RunConfig paper_scale_preset() {
  RunConfig c;
  c.embed_dim = 620;
  c.hidden_dim = 1000;
  c.max_phrases = 10;
  c.source_vocab_size = 16000;
  c.target_vocab_size = 16000;
  c.batch_size = 80;
  return c;
}

}  // namespace phrasemem
