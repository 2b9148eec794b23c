#include "phrasemem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <utility>

namespace phrasemem::ad {

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << rows << 'x' << cols << ']';
  return os.str();
}

Parameter::Parameter(std::string name, Shape shape)
    : value(shape.size(), 0.0), grad(shape.size(), 0.0), name_(std::move(name)), shape_(shape) {}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

ParameterSet::ParameterSet(const ParameterSet& other) : params_(other.params_) { reindex(); }

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this != &other) {
    params_ = other.params_;
    reindex();
  }
  return *this;
}

void ParameterSet::reindex() {
  index_.clear();
  for (std::size_t i = 0; i < params_.size(); ++i) index_.emplace(params_[i].name(), i);
}

Parameter& ParameterSet::add(std::string name, Shape shape) {
  if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  return params_.emplace_back(std::move(name), shape);
}

Parameter* ParameterSet::find(std::string_view name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParameterSet::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter& ParameterSet::at(std::string_view name) {
  if (auto* p = find(name)) return *p;
  throw ContractError("unknown parameter: " + std::string(name));
}

const Parameter& ParameterSet::at(std::string_view name) const {
  if (const auto* p = find(name)) return *p;
  throw ContractError("unknown parameter: " + std::string(name));
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

// ---- Tensor ---------------------------------------------------------------

Graph& Tensor::graph() const {
  if (!graph_) throw ContractError("use of an empty tensor handle");
  return *graph_;
}

const Shape& Tensor::shape() const { return graph().shape(id_); }
std::span<const double> Tensor::value() const { return graph().value(id_); }
std::span<const double> Tensor::grad() const { return graph().grad(id_); }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on non-scalar " + shape().str());
  return value()[0];
}

double Tensor::at(std::size_t r, std::size_t c) const { return value()[r * shape().cols + c]; }

// ---- Graph ----------------------------------------------------------------

Graph::Graph(bool track_gradients) : track_(track_gradients) { nodes_.reserve(256); }

Tensor Graph::constant(Shape shape, std::vector<double> values) {
  if (values.size() != shape.size())
    throw DimensionError("constant of shape " + shape.str() + " given " +
                         std::to_string(values.size()) + " values");
  Node n;
  n.shape = shape;
  n.value = std::move(values);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Tensor Graph::param(const Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return {this, it->second};
  Node n;
  n.shape = p.shape();
  n.value = p.value;
  n.needs_grad = track_;
  n.param = &p;
  nodes_.push_back(std::move(n));
  bound_.emplace(&p, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Tensor Graph::record(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                     BackwardFn backward) {
  return record(shape, std::move(value), std::span<const Tensor>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Tensor Graph::record(Shape shape, std::vector<double> value, std::span<const Tensor> inputs,
                     BackwardFn backward) {
  Node n;
  n.shape = shape;
  n.value = std::move(value);
  if (track_) {
    for (const auto& t : inputs) {
      if (&t.graph() != this) throw ContractError("tensor from a different graph");
      n.needs_grad = n.needs_grad || nodes_[t.id()].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

std::span<double> Graph::grad_slot(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.shape.size(), 0.0);
  return n.grad;
}

void Graph::backward(const Tensor& loss) {
  if (&loss.graph() != this) throw ContractError("loss belongs to a different graph");
  if (loss.size() != 1)
    throw ContractError("backward() needs a scalar loss, got " + loss.shape().str());
  if (!track_) throw ContractError("backward() on a graph built without gradient tracking");
  for (auto& n : nodes_) n.grad.clear();
  grad_slot(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

void Graph::accumulate_param_grads(std::span<Parameter* const> targets) const {
  for (Parameter* p : targets) {
    auto g = param_grad(*p);
    for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
  }
}

void Graph::for_each_param_grad(
    const std::function<void(const Parameter&, std::span<const double>)>& fn) const {
  for (const auto& [param, id] : bound_) {
    if (!nodes_[id].grad.empty()) fn(*param, nodes_[id].grad);
  }
}

std::span<const double> Graph::param_grad(const Parameter& p) const {
  auto it = bound_.find(&p);
  if (it == bound_.end()) return {};
  return nodes_[it->second].grad;
}

// ---- operations -----------------------------------------------------------

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
}

std::vector<double> copy_values(const Tensor& t) {
  auto v = t.value();
  return {v.begin(), v.end()};
}

template <class F>
std::vector<double> transform(const Tensor& a, F f) {
  auto v = a.value();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = f(v[i]);
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.cols != sb.rows)
    throw DimensionError("matmul: inner extents differ " + sa.str() + " vs " + sb.str());
  const std::size_t m = sa.rows, k = sa.cols, n = sb.cols;
  std::vector<double> out(m * n, 0.0);
  auto av = a.value();
  auto bv = b.value();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record({m, n}, std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto av = g.value(ia);
    auto bv = g.value(ib);
    if (g.needs_grad(ia)) {
      auto ga = g.grad_slot(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * bv[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (g.needs_grad(ib)) {
      auto gb = g.grad_slot(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * go[i * n + j];
        }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(a.shape(), std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    for (std::size_t in : {ia, ib}) {
      if (!g.needs_grad(in)) continue;
      auto gi = g.grad_slot(in);
      for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(a.shape(), std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    if (g.needs_grad(ia)) {
      auto ga = g.grad_slot(ia);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (g.needs_grad(ib)) {
      auto gb = g.grad_slot(ib);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  auto av = a.value();
  auto bv = b.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record(a.shape(), std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto av = g.value(ia);
    auto bv = g.value(ib);
    if (g.needs_grad(ia)) {
      auto ga = g.grad_slot(ia);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (g.needs_grad(ib)) {
      auto gb = g.grad_slot(ib);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  auto out = transform(a, [factor](double x) { return factor * x; });
  const std::size_t ia = a.id();
  return a.graph().record(a.shape(), std::move(out), {a}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto ga = g.grad_slot(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += factor * go[i];
  });
}

Tensor add_scalar(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw DimensionError("add_scalar: expected 1x1, got " + s.shape().str());
  const double v = s.value()[0];
  auto out = transform(a, [v](double x) { return x + v; });
  const std::size_t ia = a.id(), is = s.id();
  return a.graph().record(a.shape(), std::move(out), {a, s}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    if (g.needs_grad(ia)) {
      auto ga = g.grad_slot(ia);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (g.needs_grad(is)) {
      double total = 0.0;
      for (double x : go) total += x;
      g.grad_slot(is)[0] += total;
    }
  });
}

Tensor one_minus(const Tensor& a) {
  auto out = transform(a, [](double x) { return 1.0 - x; });
  const std::size_t ia = a.id();
  return a.graph().record(a.shape(), std::move(out), {a}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto ga = g.grad_slot(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] -= go[i];
  });
}

Tensor tanh(const Tensor& a) {
  auto out = transform(a, [](double x) { return std::tanh(x); });
  const std::size_t ia = a.id();
  return a.graph().record(a.shape(), std::move(out), {a}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto y = g.value(self);
    auto ga = g.grad_slot(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (1.0 - y[i] * y[i]);
  });
}

namespace {
double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& a) {
  auto out = transform(a, stable_sigmoid);
  const std::size_t ia = a.id();
  return a.graph().record(a.shape(), std::move(out), {a}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto y = g.value(self);
    auto ga = g.grad_slot(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i] * (1.0 - y[i]);
  });
}

Tensor log_sigmoid(const Tensor& a) {
  // log(sigmoid(x)) = -softplus(-x)
  auto out = transform(a, [](double x) {
    return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  });
  const std::size_t ia = a.id();
  return a.graph().record(a.shape(), std::move(out), {a}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto x = g.value(ia);
    auto ga = g.grad_slot(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * stable_sigmoid(-x[i]);
  });
}

Tensor log(const Tensor& a) {
  auto out = transform(a, [](double x) { return std::log(x); });
  const std::size_t ia = a.id();
  return a.graph().record(a.shape(), std::move(out), {a}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto x = g.value(ia);
    auto ga = g.grad_slot(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / x[i];
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  const std::size_t ia = a.id();
  return a.graph().record({1, 1}, {s}, {a}, [=](Graph& g, std::size_t self) {
    const double go = g.grad(self)[0];
    auto ga = g.grad_slot(ia);
    for (double& v : ga) v += go;
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size())
    throw DimensionError("dot: size mismatch " + a.shape().str() + " vs " + b.shape().str());
  auto av = a.value();
  auto bv = b.value();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record({1, 1}, {s}, {a, b}, [=](Graph& g, std::size_t self) {
    const double go = g.grad(self)[0];
    auto av = g.value(ia);
    auto bv = g.value(ib);
    if (g.needs_grad(ia)) {
      auto ga = g.grad_slot(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go * bv[i];
    }
    if (g.needs_grad(ib)) {
      auto gb = g.grad_slot(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go * av[i];
    }
  });
}

Tensor add_to_columns(const Tensor& m, const Tensor& v) {
  const Shape sm = m.shape();
  if (v.shape() != vector_shape(sm.rows))
    throw DimensionError("add_to_columns: " + sm.str() + " with " + v.shape().str());
  auto out = copy_values(m);
  auto vv = v.value();
  for (std::size_t r = 0; r < sm.rows; ++r)
    for (std::size_t c = 0; c < sm.cols; ++c) out[r * sm.cols + c] += vv[r];
  const std::size_t im = m.id(), iv = v.id();
  return m.graph().record(sm, std::move(out), {m, v}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    if (g.needs_grad(im)) {
      auto gm = g.grad_slot(im);
      for (std::size_t i = 0; i < go.size(); ++i) gm[i] += go[i];
    }
    if (g.needs_grad(iv)) {
      auto gv = g.grad_slot(iv);
      for (std::size_t r = 0; r < sm.rows; ++r)
        for (std::size_t c = 0; c < sm.cols; ++c) gv[r] += go[r * sm.cols + c];
    }
  });
}

Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no operands");
  const std::size_t cols = parts[0].shape().cols;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.shape().cols != cols)
      throw DimensionError("concat_rows: trailing extents differ " + parts[0].shape().str() +
                           " vs " + p.shape().str());
    rows += p.shape().rows;
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    auto v = p.value();
    out.insert(out.end(), v.begin(), v.end());
    ids.push_back(p.id());
  }
  return parts[0].graph().record({rows, cols}, std::move(out), parts,
                                 [ids = std::move(ids)](Graph& g, std::size_t self) {
                                   auto go = g.grad(self);
                                   std::size_t offset = 0;
                                   for (std::size_t id : ids) {
                                     const std::size_t n = g.shape(id).size();
                                     if (g.needs_grad(id)) {
                                       auto gi = g.grad_slot(id);
                                       for (std::size_t i = 0; i < n; ++i) gi[i] += go[offset + i];
                                     }
                                     offset += n;
                                   }
                                 });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no operands");
  const std::size_t rows = parts[0].shape().rows;
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.shape().rows != rows)
      throw DimensionError("concat_cols: leading extents differ " + parts[0].shape().str() +
                           " vs " + p.shape().str());
    cols += p.shape().cols;
  }
  std::vector<double> out(rows * cols);
  std::vector<std::size_t> ids;
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.shape().cols;
    auto v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pc; ++c) out[r * cols + c0 + c] = v[r * pc + c];
    c0 += pc;
    ids.push_back(p.id());
  }
  return parts[0].graph().record(
      {rows, cols}, std::move(out), parts, [ids = std::move(ids), rows, cols](Graph& g, std::size_t self) {
        auto go = g.grad(self);
        std::size_t c0 = 0;
        for (std::size_t id : ids) {
          const std::size_t pc = g.shape(id).cols;
          if (g.needs_grad(id)) {
            auto gi = g.grad_slot(id);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < pc; ++c) gi[r * pc + c] += go[r * cols + c0 + c];
          }
          c0 += pc;
        }
      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape.size() != a.size())
    throw DimensionError("reshape: " + a.shape().str() + " to " + shape.str());
  const std::size_t ia = a.id();
  return a.graph().record(shape, copy_values(a), {a}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto ga = g.grad_slot(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  });
}

Tensor row(const Tensor& m, std::size_t r) {
  const Shape sm = m.shape();
  if (r >= sm.rows)
    throw DimensionError("row: index " + std::to_string(r) + " out of " + sm.str());
  auto v = m.value();
  std::vector<double> out(v.begin() + r * sm.cols, v.begin() + (r + 1) * sm.cols);
  const std::size_t im = m.id();
  return m.graph().record(vector_shape(sm.cols), std::move(out), {m},
                          [=](Graph& g, std::size_t self) {
                            auto go = g.grad(self);
                            auto gm = g.grad_slot(im);
                            for (std::size_t c = 0; c < sm.cols; ++c) gm[r * sm.cols + c] += go[c];
                          });
}

Tensor pick(const Tensor& a, std::size_t i) {
  if (i >= a.size())
    throw DimensionError("pick: index " + std::to_string(i) + " out of " + a.shape().str());
  const std::size_t ia = a.id();
  return a.graph().record({1, 1}, {a.value()[i]}, {a}, [=](Graph& g, std::size_t self) {
    g.grad_slot(ia)[i] += g.grad(self)[0];
  });
}

Tensor gather(const Tensor& a, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DimensionError("gather: no indices");
  auto v = a.value();
  std::vector<double> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= v.size())
      throw DimensionError("gather: index " + std::to_string(i) + " out of " + a.shape().str());
    out.push_back(v[i]);
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  const Shape shape = vector_shape(idx.size());
  return a.graph().record(shape, std::move(out), {a},
                          [ia, idx = std::move(idx)](Graph& g, std::size_t self) {
                            auto go = g.grad(self);
                            auto ga = g.grad_slot(ia);
                            for (std::size_t k = 0; k < idx.size(); ++k) ga[idx[k]] += go[k];
                          });
}

namespace {

struct Normalizer {
  double max = -std::numeric_limits<double>::infinity();
  double z = 0.0;
  double log_z = 0.0;
};

Normalizer normalizer(std::span<const double> x, const std::vector<bool>* mask) {
  Normalizer n;
  bool any = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    if (!std::isfinite(x[i])) throw NumericError("softmax: non-finite input");
    n.max = any ? std::max(n.max, x[i]) : x[i];
    any = true;
  }
  if (!any) throw NumericError("softmax: every entry is masked");
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    z += std::exp(x[i] - n.max);
  }
  n.z = z;
  n.log_z = n.max + std::log(z);
  return n;
}

void check_mask(const Tensor& x, const std::vector<bool>* mask) {
  if (x.size() == 0) throw DimensionError("softmax: empty input");
  if (mask && mask->size() != x.size())
    throw DimensionError("softmax: mask length " + std::to_string(mask->size()) + " vs " +
                         x.shape().str());
}

Tensor softmax_impl(const Tensor& x, const std::vector<bool>* mask) {
  check_mask(x, mask);
  auto xv = x.value();
  const Normalizer n = normalizer(xv, mask);
  std::vector<double> out(xv.size(), 0.0);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    out[i] = std::exp(xv[i] - n.max) / n.z;
  }
  const std::size_t ix = x.id();
  return x.graph().record(x.shape(), std::move(out), {x}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto y = g.value(self);
    double s = 0.0;
    for (std::size_t i = 0; i < go.size(); ++i) s += go[i] * y[i];
    auto gx = g.grad_slot(ix);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += y[i] * (go[i] - s);
  });
}

Tensor log_softmax_impl(const Tensor& x, const std::vector<bool>* mask) {
  check_mask(x, mask);
  auto xv = x.value();
  const Normalizer n = normalizer(xv, mask);
  std::vector<double> out(xv.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    out[i] = xv[i] - n.log_z;
  }
  const std::size_t ix = x.id();
  std::vector<bool> keep = mask ? *mask : std::vector<bool>(xv.size(), true);
  return x.graph().record(x.shape(), std::move(out), {x},
                          [ix, keep = std::move(keep)](Graph& g, std::size_t self) {
                            auto go = g.grad(self);
                            auto y = g.value(self);
                            double s = 0.0;
                            for (std::size_t i = 0; i < go.size(); ++i)
                              if (keep[i]) s += go[i];
                            auto gx = g.grad_slot(ix);
                            for (std::size_t i = 0; i < go.size(); ++i)
                              if (keep[i]) gx[i] += go[i] - std::exp(y[i]) * s;
                          });
}

}  // namespace

Tensor softmax(const Tensor& x) { return softmax_impl(x, nullptr); }
Tensor softmax(const Tensor& x, const std::vector<bool>& mask) { return softmax_impl(x, &mask); }
Tensor log_softmax(const Tensor& x) { return log_softmax_impl(x, nullptr); }
Tensor log_softmax(const Tensor& x, const std::vector<bool>& mask) {
  return log_softmax_impl(x, &mask);
}

Tensor logsumexp(const Tensor& x) {
  auto xv = x.value();
  if (xv.empty()) throw DimensionError("logsumexp: empty input");
  double m = -std::numeric_limits<double>::infinity();
  for (double v : xv) m = std::max(m, v);
  double lse = m;
  if (std::isfinite(m)) {
    double z = 0.0;
    for (double v : xv) z += std::exp(v - m);
    lse = m + std::log(z);
  }
  const std::size_t ix = x.id();
  return x.graph().record({1, 1}, {lse}, {x}, [=](Graph& g, std::size_t self) {
    const double go = g.grad(self)[0];
    const double out = g.value(self)[0];
    auto xv = g.value(ix);
    auto gx = g.grad_slot(ix);
    if (!std::isfinite(out)) return;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go * std::exp(xv[i] - out);
  });
}

Tensor scale_gradient(const Tensor& a, double factor) {
  const std::size_t ia = a.id();
  return a.graph().record(a.shape(), copy_values(a), {a}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto ga = g.grad_slot(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += factor * go[i];
  });
}

Tensor map(const Tensor& a, const std::function<double(double)>& f,
           const std::function<double(double)>& df) {
  auto out = transform(a, f);
  const std::size_t ia = a.id();
  return a.graph().record(a.shape(), std::move(out), {a}, [=](Graph& g, std::size_t self) {
    auto go = g.grad(self);
    auto x = g.value(ia);
    auto ga = g.grad_slot(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * df(x[i]);
  });
}

}  // namespace phrasemem::ad
