#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "phrasemem/corpus.hpp"
#include "phrasemem/gradcheck.hpp"
#include "phrasemem/model.hpp"

namespace phrasemem {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global gradient norm; <= 0 disables clipping
};

void to_json(nlohmann::json& j, const AdamConfig& c);
void from_json(const nlohmann::json& j, AdamConfig& c);

class Adam {
 public:
  Adam(const ad::ParameterSet& params, AdamConfig config);

  // Clips Parameter::grad in place, applies one update and returns the
  // gradient norm before clipping.
  double step(ad::ParameterSet& params);

  const AdamConfig& config() const { return config_; }
  AdamConfig& config() { return config_; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

  // Moment accumulators keyed by parameter name; shapes mirror the parameters.
  std::map<std::string, std::vector<double>>& first_moments() { return m_; }
  std::map<std::string, std::vector<double>>& second_moments() { return v_; }
  const std::map<std::string, std::vector<double>>& first_moments() const { return m_; }
  const std::map<std::string, std::vector<double>>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

struct TrainOptions {
  std::size_t batch_size = 16;
  std::size_t max_len = 50;
  std::size_t workers = 1;
  std::uint64_t seed = 1;
  std::filesystem::path metrics_csv;  // empty: no CSV
};

struct BatchMetrics {
  std::uint64_t step = 0;
  double loss = 0.0;        // mean sentence NLL
  double perplexity = 0.0;  // over plain-word positions
  double gate_rate = 0.0;   // mean p(z = 1) where candidates were live
  double grad_norm = 0.0;
};

struct EpochMetrics {
  double mean_loss = 0.0;
  double perplexity = 0.0;
  double gate_rate = 0.0;
  std::size_t batches = 0;
  std::uint64_t last_step = 0;
};

class Trainer {
 public:
  Trainer(Model& model, AdamConfig adam, TrainOptions options);

  // One update on the given examples (a mini-batch).
  BatchMetrics train_batch(std::span<const ParallelExample> examples,
                           std::span<const std::size_t> indices);
  // Shuffles with the trainer's RNG and runs every batch, stopping early
  // once `step_limit` total updates have been made (0: no limit).
  EpochMetrics train_epoch(std::span<const ParallelExample> examples, std::uint64_t step_limit = 0);

  Model& model() { return model_; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }
  const TrainOptions& options() const { return options_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  void append_metrics(const BatchMetrics& m);

  Model& model_;
  Adam adam_;
  TrainOptions options_;
  std::mt19937_64 rng_;
};

// Mean sequence NLL over the examples, for held-out evaluation.
double mean_nll(const Model& model, std::span<const ParallelExample> examples);

struct GroupCheck {
  std::string group;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  bool passed = true;
};

struct GradientReport {
  std::vector<GroupCheck> groups;
  ad::GradCheckReport detail;
  bool passed = true;

  std::vector<std::string> failed_groups() const;
};

enum class Differencing {
  // Central differences of the straight-line reference forward pass in long
  // double. Double-precision roundoff (about 1e-10 in the numeric gradient at
  // step 1e-5) swamps entries whose gradient is near zero; this does not.
  extended,
  // Central differences of the graph forward pass in double.
  graph,
};

// Finite-difference check of the mean sequence NLL over `examples`,
// summarized per parameter group.
GradientReport verify_gradients(Model& model, std::span<const ParallelExample> examples,
                                double tol = 1e-4, double step = 1e-5,
                                Differencing numeric = Differencing::extended);

}  // namespace phrasemem
