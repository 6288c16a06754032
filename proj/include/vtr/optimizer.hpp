#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vtr/tensor.hpp"

namespace vtr {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 added to the gradient; off by default
  double grad_clip = 0.0;     // global-norm clip; 0 disables
};

// Bias-corrected Adam. Moments are keyed by parameter name so the state
// survives parameter-list rebuilds (for example after temporal expansion).
class AdamState {
 public:
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };

  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  AdamConfig& config() { return config_; }
  std::uint64_t step_count() const { return step_; }
  void set_step_count(std::uint64_t step) { step_ = step; }

  // One update over every parameter. A parameter without a gradient buffer is
  // treated as having a zero gradient. Throws NumericError naming the first
  // parameter whose gradient is not finite, before any parameter is modified.
  void step(const ParamList& params);

  // Drops the moments of one parameter; they restart from zero.
  void reset(const std::string& name);

  const std::map<std::string, Moments>& moments() const { return moments_; }
  std::map<std::string, Moments>& moments() { return moments_; }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

void zero_grads(const ParamList& params);

}  // namespace vtr
