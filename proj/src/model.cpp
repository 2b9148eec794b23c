#include "phrasemem/model.hpp"

#include <random>
#include <stdexcept>

namespace phrasemem {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::gate:
      return "gate";
    case Variant::softmax:
      return "softmax";
    case Variant::baseline:
      return "baseline";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "gate") return Variant::gate;
  if (name == "softmax") return Variant::softmax;
  if (name == "baseline") return Variant::baseline;
  throw std::invalid_argument("unknown variant '" + std::string(name) +
                              "' (expected gate, softmax or baseline)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"source_vocab", c.source_vocab},
                     {"target_vocab", c.target_vocab},
                     {"embed_dim", c.embed_dim},
                     {"hidden_dim", c.hidden_dim},
                     {"max_phrases", c.max_phrases},
                     {"gate_word_factor", c.gate_word_factor}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.variant = parse_variant(j.at("variant").get<std::string>());
  j.at("source_vocab").get_to(c.source_vocab);
  j.at("target_vocab").get_to(c.target_vocab);
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("max_phrases").get_to(c.max_phrases);
  c.gate_word_factor = j.value("gate_word_factor", true);
}

Model::Model(ModelConfig config) : config_(config) {
  const auto& c = config_;
  if (c.source_vocab == 0 || c.target_vocab == 0 || c.embed_dim == 0 || c.hidden_dim == 0 ||
      c.max_phrases == 0)
    throw std::invalid_argument("model dimensions and vocabulary sizes must be positive");
  const std::size_t e = c.embed_dim, h = c.hidden_dim, a = c.annotation_dim();
  const std::size_t v = c.target_vocab;

  params_.add("enc.embed", {c.source_vocab, e});
  add_gru("enc.fwd", e, h);
  add_gru("enc.bwd", e, h);

  params_.add("att.W_s", {h, h});
  params_.add("att.W_h", {h, a});
  params_.add("att.W_e", {h, e});
  params_.add("att.b", {h, 1});
  params_.add("att.v", {1, h});

  params_.add("dec.embed", {v, e});
  params_.add("dec.init.W", {h, h});
  add_gru("dec.gru", a + e, h);

  auto readout = [&](const std::string& prefix, std::size_t out) {
    params_.add(prefix + ".U", {h, h});
    params_.add(prefix + ".C", {h, a});
    params_.add(prefix + ".V", {h, e});
    params_.add(prefix + ".W", {out, h});
  };

  switch (c.variant) {
    case Variant::baseline:
      readout("readout.o", v);
      break;
    case Variant::gate:
      readout("readout.o", v);
      params_.add("gate.A1", {h, h + a + e});
      params_.add("gate.b1", {h, 1});
      params_.add("gate.A2", {h, h});
      params_.add("gate.b2", {h, 1});
      params_.add("gate.a3", {1, h});
      params_.add("gate.b3", {1, 1});
      readout("phrase.p", c.max_phrases);
      break;
    case Variant::softmax:
      readout("readout.w", v);
      readout("phrase.q", 1);
      params_.add("phrase.q.R", {h, h});
      add_gru("phrase.embed", e, h);
      break;
  }
}

void Model::add_gru(const std::string& prefix, std::size_t input, std::size_t hidden) {
  for (const char* gate : {"z", "r", "h"}) {
    params_.add(prefix + ".W_" + gate, {hidden, input});
    params_.add(prefix + ".U_" + gate, {hidden, hidden});
    params_.add(prefix + ".b_" + gate, {hidden, 1});
  }
}

namespace {
bool is_bias(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot != std::string::npos && name.compare(dot + 1, 1, "b") == 0;
}
}  // namespace

void Model::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.08, 0.08);
  for (auto& p : params_) {
    if (is_bias(p.name())) {
      std::fill(p.value.begin(), p.value.end(), 0.0);
    } else {
      for (double& x : p.value) x = dist(rng);
    }
    p.zero_grad();
  }
}

std::string parameter_group(std::string_view name) {
  return std::string(name.substr(0, name.find('.')));
}

}  // namespace phrasemem
