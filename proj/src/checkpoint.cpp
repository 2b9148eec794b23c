#include "phrasemem/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <sstream>

namespace phrasemem {

namespace {

constexpr std::array<char, 4> magic{'P', 'N', 'M', 'T'};
constexpr std::uint64_t max_header = 1u << 26;
constexpr std::uint64_t max_name = 4096;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { os_.write(s.data(), static_cast<std::streamsize>(s.size())); }

  void tensor(const std::string& name, const ad::Shape& shape, const std::vector<double>& values) {
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name);
    if (shape.cols == 1) {
      u32(1);
      u64(shape.rows);
    } else {
      u32(2);
      u64(shape.rows);
      u64(shape.cols);
    }
    for (double v : values) f64(v);
  }

 private:
  void le(std::uint64_t v, int n) {
    char buf[8];
    for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os_.write(buf, n);
  }
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string origin) : is_(is), origin_(std::move(origin)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string bytes(std::size_t n) {
    std::string s(n, '\0');
    if (n && !is_.read(s.data(), static_cast<std::streamsize>(n))) truncated();
    return s;
  }
  bool at_end() { return is_.peek() == std::char_traits<char>::eof(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(origin_ + ": " + what);
  }

 private:
  [[noreturn]] void truncated() const { fail("truncated checkpoint"); }
  std::uint64_t le(int n) {
    unsigned char buf[8];
    if (!is_.read(reinterpret_cast<char*>(buf), n)) truncated();
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& is_;
  std::string origin_;
};

struct RawTensor {
  std::vector<std::uint64_t> extents;
  std::vector<double> values;
};

ad::Shape shape_of(const RawTensor& t) {
  if (t.extents.size() == 1) return {static_cast<std::size_t>(t.extents[0]), 1};
  return {static_cast<std::size_t>(t.extents[0]), static_cast<std::size_t>(t.extents[1])};
}

}  // namespace

void save_checkpoint(const SaveRequest& req, const std::filesystem::path& path) {
  nlohmann::json header;
  header["model"] = req.model.config();
  header["source_vocab"] = req.source_vocab.regular_tokens();
  header["target_vocab"] = req.target_vocab.regular_tokens();
  header["step"] = req.optimizer ? req.optimizer->steps() : 0;
  if (req.optimizer) header["adam"] = req.optimizer->config();
  if (req.rng) {
    std::ostringstream os;
    os << *req.rng;
    header["rng"] = os.str();
  }
  if (req.source_vocab.size() != req.model.config().source_vocab ||
      req.target_vocab.size() != req.model.config().target_vocab)
    throw ConsistencyError("vocabulary sizes do not match the model");

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    Writer w(os);
    w.bytes(std::string_view(magic.data(), magic.size()));
    w.u32(checkpoint_version);
    const std::string text = header.dump();
    w.u64(text.size());
    w.bytes(text);

    std::uint64_t count = req.model.params().size();
    if (req.optimizer) count += 2 * req.model.params().size();
    w.u64(count);
    for (const auto& p : req.model.params()) w.tensor(p.name(), p.shape(), p.value);
    if (req.optimizer) {
      for (const auto& p : req.model.params()) {
        w.tensor("opt.m." + p.name(), p.shape(), req.optimizer->first_moments().at(p.name()));
        w.tensor("opt.v." + p.name(), p.shape(), req.optimizer->second_moments().at(p.name()));
      }
    }
    os.flush();
    if (!os) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<Variant> expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  Reader r(is, path.string());

  if (r.bytes(4) != std::string(magic.data(), magic.size())) r.fail("bad magic, not a checkpoint");
  const std::uint32_t version = r.u32();
  if (version != checkpoint_version)
    r.fail("unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t header_len = r.u64();
  if (header_len > max_header) r.fail("implausible header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(static_cast<std::size_t>(header_len)));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("corrupt header: ") + e.what());
  }

  ModelConfig config;
  std::vector<std::string> src_tokens, tgt_tokens;
  try {
    config = header.at("model").get<ModelConfig>();
    src_tokens = header.at("source_vocab").get<std::vector<std::string>>();
    tgt_tokens = header.at("target_vocab").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("incomplete header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    r.fail(std::string("bad header: ") + e.what());
  }
  if (expected && config.variant != *expected)
    throw ConsistencyError("checkpoint holds a " + to_string(config.variant) +
                           " model, expected " + to_string(*expected));

  std::map<std::string, RawTensor> tensors;
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    if (name_len > max_name) r.fail("implausible tensor name length");
    std::string name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    if (rank < 1 || rank > 2) r.fail("tensor " + name + " has unsupported rank");
    RawTensor t;
    std::uint64_t size = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.extents.push_back(r.u64());
      if (t.extents.back() > (1ull << 32)) r.fail("implausible extent for " + name);
      size *= t.extents.back();
    }
    if (size > (1ull << 32)) r.fail("implausible size for " + name);
    t.values.resize(static_cast<std::size_t>(size));
    for (double& v : t.values) v = r.f64();
    if (!tensors.emplace(std::move(name), std::move(t)).second) r.fail("duplicate tensor");
  }
  if (!r.at_end()) r.fail("trailing bytes after the last tensor");

  Checkpoint ck{Model(config), Vocabulary::from_tokens(src_tokens),
                Vocabulary::from_tokens(tgt_tokens), 0, {}, std::nullopt, {}, {}};
  if (ck.source_vocab.size() != config.source_vocab ||
      ck.target_vocab.size() != config.target_vocab)
    throw ConsistencyError("vocabulary lists disagree with the model config");

  std::size_t used = 0;
  for (auto& p : ck.model.params()) {
    auto it = tensors.find(p.name());
    if (it == tensors.end()) throw ConsistencyError("checkpoint lacks parameter " + p.name());
    if (shape_of(it->second) != p.shape())
      throw ConsistencyError("parameter " + p.name() + " has shape " +
                             shape_of(it->second).str() + ", config implies " + p.shape().str());
    p.value = it->second.values;
    ++used;
  }
  for (const auto& p : ck.model.params()) {
    auto m = tensors.find("opt.m." + p.name());
    auto v = tensors.find("opt.v." + p.name());
    if (m == tensors.end() || v == tensors.end()) continue;
    if (shape_of(m->second) != p.shape() || shape_of(v->second) != p.shape())
      throw ConsistencyError("optimizer state for " + p.name() + " has the wrong shape");
    ck.first_moments[p.name()] = m->second.values;
    ck.second_moments[p.name()] = v->second.values;
    used += 2;
  }
  if (used != tensors.size())
    throw ConsistencyError("checkpoint holds tensors the " + to_string(config.variant) +
                           " model does not have");

  ck.step = header.value("step", std::uint64_t{0});
  ck.rng_state = header.value("rng", std::string());
  if (header.contains("adam")) ck.adam = header["adam"].get<AdamConfig>();
  return ck;
}

void restore_optimizer(const Checkpoint& ck, Adam& adam) {
  for (const auto& [name, m] : ck.first_moments) {
    auto it = adam.first_moments().find(name);
    if (it == adam.first_moments().end() || it->second.size() != m.size())
      throw ConsistencyError("optimizer state does not match parameter " + name);
    it->second = m;
    adam.second_moments().at(name) = ck.second_moments.at(name);
  }
  adam.set_steps(ck.step);
}

void restore_rng(const Checkpoint& ck, std::mt19937_64& rng) {
  if (ck.rng_state.empty()) return;
  std::istringstream is(ck.rng_state);
  is >> rng;
  if (!is) throw FormatError("corrupt RNG state in checkpoint");
}

}  // namespace phrasemem
