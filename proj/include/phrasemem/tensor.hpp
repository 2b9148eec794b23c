#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Vectors are column matrices (n x 1); scalars are 1 x 1.
//
// A Graph is an append-only tape rebuilt for every example. Parameters live
// outside any graph; Graph::param() binds one as a leaf so that backward()
// leaves d(loss)/d(param) in the graph, from where it can be accumulated into
// Parameter::grad or any other sink.

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace phrasemem::ad {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Shape {
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t size() const { return rows * cols; }
  bool is_vector() const { return cols == 1; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

inline Shape vector_shape(std::size_t n) { return {n, 1}; }

class Parameter {
 public:
  Parameter(std::string name, Shape shape);

  const std::string& name() const { return name_; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return shape_.size(); }
  void zero_grad();

  std::vector<double> value;
  std::vector<double> grad;

 private:
  std::string name_;
  Shape shape_;
};

// Named parameters with stable addresses, iterated in insertion order.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  Parameter& add(std::string name, Shape shape);
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;
  Parameter& at(std::string_view name);
  const Parameter& at(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  void reindex();

  std::deque<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

class Graph;

// Lightweight handle to a node of a Graph.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const;
  std::size_t id() const { return id_; }
  const Shape& shape() const;
  std::size_t size() const { return shape().size(); }
  std::span<const double> value() const;
  std::span<const double> grad() const;
  double item() const;
  double operator[](std::size_t i) const { return value()[i]; }
  double at(std::size_t r, std::size_t c) const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  explicit Graph(bool track_gradients = true);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor constant(Shape shape, std::vector<double> values);
  Tensor scalar(double v) { return constant({1, 1}, {v}); }
  // Leaf bound to a parameter; repeated calls return the same node.
  Tensor param(const Parameter& p);

  // Appends a node computed from `inputs`. `backward` receives this graph
  // and the new node's id; it is dropped when no input needs a gradient.
  Tensor record(Shape shape, std::vector<double> value,
                std::initializer_list<Tensor> inputs, BackwardFn backward);
  Tensor record(Shape shape, std::vector<double> value,
                std::span<const Tensor> inputs, BackwardFn backward);

  void backward(const Tensor& loss);

  // Adds each bound parameter's gradient into Parameter::grad.
  void accumulate_param_grads(std::span<Parameter* const> targets) const;
  void for_each_param_grad(
      const std::function<void(const Parameter&, std::span<const double>)>& fn) const;
  // Gradient of a bound parameter; empty span when unreached.
  std::span<const double> param_grad(const Parameter& p) const;

  std::size_t node_count() const { return nodes_.size(); }
  bool tracking() const { return track_; }

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  std::span<const double> value(std::size_t id) const { return nodes_[id].value; }
  std::span<const double> grad(std::size_t id) const { return nodes_[id].grad; }
  // Gradient slot of an input, allocated (zero) on first use.
  std::span<double> grad_slot(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool needs_grad = false;
    const Parameter* param = nullptr;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::map<const Parameter*, std::size_t> bound_;
  bool track_;
};

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// Adds a 1 x 1 tensor to every entry.
Tensor add_scalar(const Tensor& a, const Tensor& s);
Tensor one_minus(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

// Adds a column vector to every column of a matrix.
Tensor add_to_columns(const Tensor& m, const Tensor& v);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_rows(std::initializer_list<Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor reshape(const Tensor& a, Shape shape);

// Row r of a matrix as a column vector (embedding lookup).
Tensor row(const Tensor& m, std::size_t r);
Tensor pick(const Tensor& a, std::size_t i);
Tensor gather(const Tensor& a, std::span<const std::size_t> indices);

// Softmax over all entries (any shape). With a mask, entries whose mask is
// false are excluded and come out as exactly 0 (or -inf for log_softmax).
Tensor softmax(const Tensor& x);
Tensor softmax(const Tensor& x, const std::vector<bool>& mask);
Tensor log_softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x, const std::vector<bool>& mask);
Tensor logsumexp(const Tensor& x);

// Identity forward; backward multiplies the incoming gradient by `factor`.
// Used to plant faults for gradient-check negative controls.
Tensor scale_gradient(const Tensor& a, double factor);

// Elementwise op with caller-supplied derivative.
Tensor map(const Tensor& a, const std::function<double(double)>& f,
           const std::function<double(double)>& df);

}  // namespace phrasemem::ad
