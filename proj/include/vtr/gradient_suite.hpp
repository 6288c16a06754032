#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vtr/gradcheck.hpp"
#include "vtr/model.hpp"

namespace vtr {

// Full-model finite-difference check on a deliberately tiny model.
struct ModelGradCheckConfig {
  ModelConfig model = tiny_model();
  std::size_t batch = 3;
  std::size_t frames = 2;
  // Gaussian noise added to every initial parameter. It moves the zero
  // temporal output projections off zero and keeps gradients well above
  // finite-difference noise.
  double perturb_std = 0.3;
  std::uint64_t seed = 1;
  GradCheckOptions options = {1e-3, 1e-4, 1e-6, Stencil::kFivePoint};

  // D=16, 2 blocks, 2 heads, M=2, N=4 patches, D_text=16.
  static ModelConfig tiny_model();
};

GradCheckReport model_gradcheck(const ModelGradCheckConfig& config);

// Per-op checks: loss = sum(w * op(inputs)) with fixed random w.
std::vector<std::string> gradcheck_op_names();
GradCheckReport op_gradcheck(const std::string& op, std::uint64_t seed = 3,
                             GradCheckOptions options = {1e-3, 1e-6, 1e-8, Stencil::kFivePoint});

}  // namespace vtr
