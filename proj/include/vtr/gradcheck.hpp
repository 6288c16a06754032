#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vtr/tensor.hpp"

namespace vtr {

struct GradCheckEntry {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-8);

// Central differences: three-point (f(p+h) - f(p-h)) / 2h, or the five-point
// stencil (8(f(p+h) - f(p-h)) - (f(p+2h) - f(p-2h))) / 12h with O(h^4) error.
enum class Stencil { kThreePoint, kFivePoint };

struct GradCheckOptions {
  double h = 1e-3;
  double tol = 1e-4;
  // Denominator floor of the relative error. Gradients that vanish
  // identically (a key bias under softmax) leave only rounding noise of
  // roughly 1e-12 in the numeric estimate.
  double floor = 1e-8;
  Stencil stencil = Stencil::kFivePoint;
};

// Compares reverse-mode gradients of the scalar `loss_fn` against central
// differences for every element of every parameter. `loss_fn` must rebuild
// the loss from the current parameter values each time.
GradCheckReport grad_check(const std::function<Tensor(Tape&)>& loss_fn, const ParamList& params,
                           const GradCheckOptions& options = {});

}  // namespace vtr
