#pragma once

#include <functional>
#include <string>
#include <vector>

#include "phrasemem/tensor.hpp"

namespace phrasemem::ad {

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;

  std::vector<std::string> failed_names() const;
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

using LossBuilder = std::function<Tensor(Graph&)>;

// Compares gradients from one backward pass against central differences.
// `loss` must bind every parameter it reads through Graph::param.
GradCheckReport finite_diff_check(const LossBuilder& loss, std::span<Parameter* const> params,
                                  double step, double tol);

// Same, but the central differences come from `numeric`, an independent
// evaluation of the same loss that reads the current parameter values.
// Extended precision keeps roundoff far below the step's truncation error.
using ScalarLoss = std::function<long double()>;
GradCheckReport finite_diff_check(const LossBuilder& loss, const ScalarLoss& numeric,
                                  std::span<Parameter* const> params, double step, double tol);

}  // namespace phrasemem::ad
