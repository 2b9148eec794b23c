#pragma once

// Binary checkpoint:
//   "PNMT" | u32 version | u64 header length | header JSON (UTF-8)
//   u64 tensor count | tensors...
// Each tensor: u32 name length | name | u32 rank | u64 extents[rank] |
// little-endian f64 values. Optimizer moments use the names
// "opt.m.<param>" and "opt.v.<param>".

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "phrasemem/corpus.hpp"
#include "phrasemem/model.hpp"
#include "phrasemem/trainer.hpp"

namespace phrasemem {

inline constexpr std::uint32_t checkpoint_version = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  Model model;
  Vocabulary source_vocab;
  Vocabulary target_vocab;
  std::uint64_t step = 0;
  std::string rng_state;  // textual std::mt19937_64 state; empty if absent
  std::optional<AdamConfig> adam;
  std::map<std::string, std::vector<double>> first_moments;
  std::map<std::string, std::vector<double>> second_moments;
};

struct SaveRequest {
  const Model& model;
  const Vocabulary& source_vocab;
  const Vocabulary& target_vocab;
  const Adam* optimizer = nullptr;
  const std::mt19937_64* rng = nullptr;
};

// Writes to a temporary sibling first, then renames over `path`.
void save_checkpoint(const SaveRequest& request, const std::filesystem::path& path);

// `expected` (optional) rejects checkpoints of another variant.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<Variant> expected = std::nullopt);

// Restores optimizer moments and step count from a checkpoint.
void restore_optimizer(const Checkpoint& ckpt, Adam& adam);
void restore_rng(const Checkpoint& ckpt, std::mt19937_64& rng);

}  // namespace phrasemem
