#include "vtr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vtr/errors.hpp"

namespace vtr {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const std::function<Tensor(Tape&)>& loss_fn) {
  Tape tape = Tape::inference();
  const double value = loss_fn(tape).item();
  if (!std::isfinite(value)) throw NumericError("grad_check: loss evaluated to a non-finite value");
  return value;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(Tape&)>& loss_fn, const ParamList& params,
                           const GradCheckOptions& options) {
  const double h = options.h;
  if (!(h > 0.0)) throw ContractError("grad_check: step h must be positive");
  if (!(options.floor > 0.0)) throw ContractError("grad_check: floor must be positive");
  for (const auto& p : params) {
    Tensor handle = p.tensor;
    handle.set_requires_grad(true);
    handle.zero_grad();
  }
  {
    Tape tape;
    const Tensor loss = loss_fn(tape);
    if (!std::isfinite(loss.item())) throw NumericError("grad_check: loss evaluated to a non-finite value");
    tape.backward(loss);
  }

  GradCheckReport report;
  report.tolerance = options.tol;
  for (const auto& p : params) {
    Tensor tensor = p.tensor;
    GradCheckEntry entry;
    entry.name = p.name;
    entry.elements = tensor.size();
    const std::vector<double> analytic =
        tensor.has_grad() ? std::vector<double>(tensor.grad().begin(), tensor.grad().end())
                          : std::vector<double>(tensor.size(), 0.0);
    auto values = tensor.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto at = [&](double offset) {
        values[i] = saved + offset;
        return evaluate(loss_fn);
      };
      const double d1 = at(h) - at(-h);
      double numeric = d1 / (2.0 * h);
      if (options.stencil == Stencil::kFivePoint) {
        const double d2 = at(2.0 * h) - at(-2.0 * h);
        numeric = (8.0 * d1 - d2) / (12.0 * h);
      }
      values[i] = saved;
      const double err = relative_error(analytic[i], numeric, options.floor);
      if (i == 0 || err > entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic = analytic[i];
        entry.numeric = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error <= options.tol;
  return report;
}

}  // namespace vtr
