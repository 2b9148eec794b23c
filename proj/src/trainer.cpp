#include "phrasemem/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <thread>

#include "phrasemem/decoder.hpp"
#include "phrasemem/log.hpp"
#include "phrasemem/reference.hpp"

namespace phrasemem {

void to_json(nlohmann::json& j, const AdamConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"clip_norm", c.clip_norm}};
}

void from_json(const nlohmann::json& j, AdamConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
}

Adam::Adam(const ad::ParameterSet& params, AdamConfig config) : config_(config) {
  for (const auto& p : params) {
    m_.emplace(p.name(), std::vector<double>(p.size(), 0.0));
    v_.emplace(p.name(), std::vector<double>(p.size(), 0.0));
  }
}

double Adam::step(ad::ParameterSet& params) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingError("non-finite gradient norm");
  const double clip =
      (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (auto& p : params) {
    auto& m = m_.at(p.name());
    auto& v = v_.at(p.name());
    if (m.size() != p.size()) throw ad::ContractError("optimizer state does not match " + p.name());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i] * clip;
      p.grad[i] = g;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double update = config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      p.value[i] -= update;
    }
  }
  return norm;
}

Trainer::Trainer(Model& model, AdamConfig adam, TrainOptions options)
    : model_(model), adam_(model.params(), adam), options_(std::move(options)), rng_(options_.seed) {
  if (options_.batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
  if (options_.workers == 0) throw std::invalid_argument("workers must be at least 1");
}

namespace {

struct ExampleResult {
  double loss = 0.0;
  double word_logprob = 0.0;
  std::size_t word_count = 0;
  double gate_sum = 0.0;
  std::size_t gate_count = 0;
};

}  // namespace

BatchMetrics Trainer::train_batch(std::span<const ParallelExample> examples,
                                  std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  const std::size_t n = indices.size();
  const std::size_t workers = std::min(options_.workers, n);
  std::vector<const ad::Parameter*> order;
  for (const auto& p : model_.params()) order.push_back(&p);

  // One gradient buffer per worker; shards are contiguous so the final sum
  // runs in a fixed order.
  std::vector<std::vector<std::vector<double>>> buffers(workers);
  std::vector<ExampleResult> results(n);
  std::vector<std::exception_ptr> errors(workers);
  const double inv = 1.0 / static_cast<double>(n);

  auto run_shard = [&](std::size_t w) {
    try {
      auto& buf = buffers[w];
      buf.resize(order.size());
      for (std::size_t k = 0; k < order.size(); ++k) buf[k].assign(order[k]->size(), 0.0);
      const std::size_t lo = n * w / workers, hi = n * (w + 1) / workers;
      for (std::size_t i = lo; i < hi; ++i) {
        const ParallelExample& ex = examples[indices[i]];
        ad::Graph g;
        NllResult r = sequence_nll(g, model_, ex);
        ExampleResult& out = results[i];
        out.loss = r.loss.item();
        if (!std::isfinite(out.loss)) return;
        out.word_logprob = r.word_logprob;
        out.word_count = r.word_count;
        for (double v : r.gate_values) out.gate_sum += v;
        out.gate_count = r.gate_values.size();
        g.backward(r.loss);
        for (std::size_t k = 0; k < order.size(); ++k) {
          auto grad = g.param_grad(*order[k]);
          for (std::size_t j = 0; j < grad.size(); ++j) buf[k][j] += grad[j] * inv;
        }
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };

  if (workers == 1) {
    run_shard(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run_shard, w);
    for (auto& t : threads) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  BatchMetrics m;
  double loss = 0.0, word_lp = 0.0, gate_sum = 0.0;
  std::size_t words = 0, gates = 0;
  for (const auto& r : results) {
    loss += r.loss;
    word_lp += r.word_logprob;
    words += r.word_count;
    gate_sum += r.gate_sum;
    gates += r.gate_count;
  }
  m.loss = loss * inv;
  if (!std::isfinite(m.loss))
    throw TrainingError("non-finite loss in batch at step " + std::to_string(adam_.steps() + 1));
  m.perplexity = words ? std::exp(-word_lp / static_cast<double>(words)) : 1.0;
  m.gate_rate = gates ? gate_sum / static_cast<double>(gates) : 0.0;

  model_.params().zero_grad();
  std::size_t k = 0;
  for (auto& p : model_.params()) {
    for (const auto& buf : buffers)
      for (std::size_t j = 0; j < p.size(); ++j) p.grad[j] += buf[k][j];
    ++k;
  }
  m.grad_norm = adam_.step(model_.params());
  m.step = adam_.steps();
  append_metrics(m);
  return m;
}

EpochMetrics Trainer::train_epoch(std::span<const ParallelExample> examples,
                                  std::uint64_t step_limit) {
  const auto batches = make_batches(examples, options_.batch_size, options_.max_len, rng_());
  EpochMetrics e;
  double loss = 0.0, ppl_log = 0.0, gate = 0.0;
  for (const auto& b : batches) {
    if (step_limit && adam_.steps() >= step_limit) break;
    const BatchMetrics m = train_batch(examples, b.indices);
    loss += m.loss;
    ppl_log += std::log(m.perplexity);
    gate += m.gate_rate;
    ++e.batches;
    e.last_step = m.step;
  }
  if (e.batches) {
    const double nb = static_cast<double>(e.batches);
    e.mean_loss = loss / nb;
    e.perplexity = std::exp(ppl_log / nb);
    e.gate_rate = gate / nb;
  }
  return e;
}

void Trainer::append_metrics(const BatchMetrics& m) {
  if (options_.metrics_csv.empty()) return;
  const bool fresh = !std::filesystem::exists(options_.metrics_csv) ||
                     std::filesystem::file_size(options_.metrics_csv) == 0;
  std::ofstream out(options_.metrics_csv, std::ios::app);
  if (!out) throw std::runtime_error("cannot write " + options_.metrics_csv.string());
  if (fresh) out << "step,loss,perplexity,gate_rate\n";
  out.precision(17);
  out << m.step << ',' << m.loss << ',' << m.perplexity << ',' << m.gate_rate << '\n';
}

double mean_nll(const Model& model, std::span<const ParallelExample> examples) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : examples) {
    ad::Graph g(false);
    total += sequence_nll(g, model, ex).loss.item();
  }
  return total / static_cast<double>(examples.size());
}

std::vector<std::string> GradientReport::failed_groups() const {
  std::vector<std::string> out;
  for (const auto& g : groups)
    if (!g.passed) out.push_back(g.group);
  return out;
}

GradientReport verify_gradients(Model& model, std::span<const ParallelExample> examples,
                                double tol, double step, Differencing numeric) {
  if (examples.empty()) throw std::invalid_argument("verify_gradients needs examples");
  std::vector<ad::Parameter*> params;
  for (auto& p : model.params()) params.push_back(&p);
  const double inv = 1.0 / static_cast<double>(examples.size());
  auto loss = [&](ad::Graph& g) {
    std::vector<ad::Tensor> parts;
    for (const auto& ex : examples) parts.push_back(sequence_nll(g, model, ex).loss);
    return ad::scale(ad::sum(ad::concat_rows(parts)), inv);
  };

  auto extended = [&]() -> long double {
    reference::ReferenceModel<long double> ref(model);
    long double total = 0;
    for (const auto& ex : examples) total += ref.sentence_nll(ex);
    return total / static_cast<long double>(examples.size());
  };

  GradientReport report;
  report.detail = numeric == Differencing::extended
                      ? ad::finite_diff_check(loss, extended, params, step, tol)
                      : ad::finite_diff_check(loss, params, step, tol);
  for (const auto& pc : report.detail.params) {
    const std::string group = parameter_group(pc.name);
    auto it = std::find_if(report.groups.begin(), report.groups.end(),
                           [&](const GroupCheck& g) { return g.group == group; });
    if (it == report.groups.end()) {
      report.groups.push_back({group, 0.0, pc.name, true});
      it = std::prev(report.groups.end());
    }
    if (pc.max_rel_error >= it->max_rel_error) {
      it->max_rel_error = pc.max_rel_error;
      it->worst_parameter = pc.name;
    }
    it->passed = it->passed && pc.passed;
  }
  report.passed = report.detail.passed;
  return report;
}

}  // namespace phrasemem
