#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "phrasemem/model.hpp"
#include "phrasemem/trainer.hpp"

namespace phrasemem {

// Settings for the command-line tool. A JSON file supplies defaults and
// command-line flags override individual fields.
struct RunConfig {
  Variant variant = Variant::gate;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t max_phrases = 10;
  bool gate_word_factor = true;
  std::size_t source_vocab_size = 0;  // 0: keep every training token
  std::size_t target_vocab_size = 0;

  AdamConfig adam;
  std::size_t batch_size = 16;
  std::size_t max_len = 50;
  std::size_t epochs = 10;
  std::uint64_t max_steps = 0;  // 0: run all epochs
  std::size_t workers = 1;
  std::uint64_t seed = 1;

  std::size_t beam = 1;
  std::size_t decode_max_len = 60;

  std::string train_src, train_tgt;
  std::string table;
  std::string source_vocab, target_vocab;  // explicit vocabulary files
  std::string checkpoint;
  std::string metrics;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);

// Dimensions from the original large-scale setup: 620-dim embeddings,
// 1000-dim hidden states, 10 phrase slots.
RunConfig paper_scale_preset();

}  // namespace phrasemem
