#include "vtr/optimizer.hpp"

#include <cmath>

#include "vtr/errors.hpp"

namespace vtr {

void zero_grads(const ParamList& params) {
  for (const auto& p : params) {
    Tensor handle = p.tensor;
    handle.zero_grad();
  }
}

void AdamState::step(const ParamList& params) {
  double norm_sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in parameter '" + p.name + "'");
      norm_sq += g * g;
    }
  }
  double clip_scale = 1.0;
  if (config_.grad_clip > 0.0) {
    const double norm = std::sqrt(norm_sq);
    if (norm > config_.grad_clip) clip_scale = config_.grad_clip / norm;
  }

  ++step_;
  const double t = static_cast<double>(step_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  for (const auto& p : params) {
    Tensor param = p.tensor;
    auto values = param.mutable_values();
    auto& m = moments_[p.name];
    if (m.first.size() != values.size()) {
      m.first.assign(values.size(), 0.0);
      m.second.assign(values.size(), 0.0);
    }
    const bool has_grad = param.has_grad();
    const std::span<const double> grad = has_grad ? param.grad() : std::span<const double>{};
    for (std::size_t i = 0; i < values.size(); ++i) {
      double g = has_grad ? grad[i] * clip_scale : 0.0;
      if (config_.weight_decay > 0.0) g += config_.weight_decay * values[i];
      m.first[i] = config_.beta1 * m.first[i] + (1.0 - config_.beta1) * g;
      m.second[i] = config_.beta2 * m.second[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m.first[i] / correction1;
      const double v_hat = m.second[i] / correction2;
      values[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

void AdamState::reset(const std::string& name) { moments_.erase(name); }

}  // namespace vtr
