#include "phrasemem/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace phrasemem::ad {

std::vector<std::string> GradCheckReport::failed_names() const {
  std::vector<std::string> out;
  for (const auto& p : params)
    if (!p.passed) out.push_back(p.name);
  return out;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_diff_check(const LossBuilder& loss, const ScalarLoss& numeric_loss,
                                  std::span<Parameter* const> params, double step, double tol) {
  if (!(step > 0.0)) throw ContractError("finite_diff_check: step must be positive");
  GradCheckReport report;
  report.tolerance = tol;

  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    Tensor l = loss(g);
    g.backward(l);
    for (Parameter* p : params) {
      auto grad = g.param_grad(*p);
      if (grad.empty())
        analytic.emplace_back(p->size(), 0.0);
      else
        analytic.emplace_back(grad.begin(), grad.end());
    }
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    ParamCheck check;
    check.name = p.name();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.value[i];
      const double hi = saved + step, lo = saved - step;
      p.value[i] = hi;
      const long double up = numeric_loss();
      p.value[i] = lo;
      const long double down = numeric_loss();
      p.value[i] = saved;
      // Divide by the step actually taken after rounding the perturbed values.
      const double numeric = static_cast<double>((up - down) / (static_cast<long double>(hi) - lo));
      const double err = relative_error(analytic[k][i], numeric);
      if (err > check.max_rel_error || i == 0) {
        check.max_rel_error = err;
        check.worst_index = i;
        check.analytic = analytic[k][i];
        check.numeric = numeric;
      }
    }
    check.passed = check.max_rel_error <= tol;
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.passed = report.passed && check.passed;
    report.params.push_back(std::move(check));
  }
  return report;
}

GradCheckReport finite_diff_check(const LossBuilder& loss, std::span<Parameter* const> params,
                                  double step, double tol) {
  auto evaluate = [&]() -> long double {
    Graph g(false);
    return loss(g).item();
  };
  return finite_diff_check(loss, evaluate, params, step, tol);
}

}  // namespace phrasemem::ad
