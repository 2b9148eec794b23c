#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "json.hpp"
#include "phrasemem/tensor.hpp"

namespace phrasemem {

enum class Variant {
  gate,      // mode gate + separate word and phrase classifiers
  softmax,   // words and embedded phrases share one softmax
  baseline,  // attention model with the word classifier only
};

std::string to_string(Variant v);
Variant parse_variant(std::string_view name);

struct ModelConfig {
  Variant variant = Variant::gate;
  std::size_t source_vocab = 0;
  std::size_t target_vocab = 0;
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t max_phrases = 10;
  // Gate variant: plain words also pay p(z=0). Off gives them the bare word
  // classifier probability instead.
  bool gate_word_factor = true;

  std::size_t annotation_dim() const { return 2 * hidden_dim + max_phrases; }
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

class Model {
 public:
  explicit Model(ModelConfig config);

  // Weights uniform in [-0.08, 0.08], biases zero.
  void initialize(std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ad::ParameterSet& params() { return params_; }
  const ad::ParameterSet& params() const { return params_; }
  const ad::Parameter& param(std::string_view name) const { return params_.at(name); }

  // Pins the phrase mode off: the gate outputs exactly 0 and phrase scores
  // drop out of the joint softmax.
  bool phrase_mode_disabled = false;
  // Scales gradients reaching the gate network's parameters; 1 is exact.
  // Anything else plants a fault for gradient-check negative controls.
  double gate_gradient_fault = 1.0;

 private:
  void add_gru(const std::string& prefix, std::size_t input, std::size_t hidden);

  ModelConfig config_;
  ad::ParameterSet params_;
};

// First component of a parameter name ("enc", "att", "dec", "readout",
// "gate", "phrase").
std::string parameter_group(std::string_view name);

}  // namespace phrasemem
