#include "vtr/dual_space.hpp"

#include <algorithm>
#include <cmath>

#include "vtr/errors.hpp"

namespace vtr {

void DualSpaceConfig::validate() const {
  if (common_dim == 0) throw ConfigError("dual: common_dim must be positive");
  if (!(init_std > 0.0)) throw ConfigError("dual: init_std must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("dual: temperature must be positive");
}

DualSpaceParams DualSpaceParams::init(const DualSpaceConfig& config, std::size_t video_dim, std::size_t text_dim,
                                      SeededRng& rng) {
  config.validate();
  DualSpaceParams p;
  const double std = config.init_std;
  p.video_weight = truncated_normal_tensor({config.common_dim, video_dim}, std, rng);
  p.text_weight = truncated_normal_tensor({config.common_dim, text_dim}, std, rng);
  if (config.bias) {
    p.video_bias = Tensor(Shape{config.common_dim});
    p.text_bias = Tensor(Shape{config.common_dim});
  }
  p.temperature = config.temperature;
  return p;
}

void DualSpaceParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".video_weight", video_weight});
  if (video_bias.defined()) out.push_back({prefix + ".video_bias", video_bias});
  out.push_back({prefix + ".text_weight", text_weight});
  if (text_bias.defined()) out.push_back({prefix + ".text_bias", text_bias});
}

Tensor project(Tape& tape, const DualSpaceParams& params, const Tensor& raw, Modality which) {
  const Tensor& w = which == Modality::kVideo ? params.video_weight : params.text_weight;
  const Tensor& b = which == Modality::kVideo ? params.video_bias : params.text_bias;
  if (raw.rank() == 1) {
    const Tensor row = reshape(tape, raw, Shape{1, raw.dim(0)});
    return reshape(tape, linear(tape, row, w, b), Shape{w.dim(0)});
  }
  return linear(tape, raw, w, b);
}

Tensor project_and_normalize(Tape& tape, const DualSpaceParams& params, const Tensor& raw, Modality which) {
  const Tensor projected = project(tape, params, raw, which);
  if (projected.rank() == 1) {
    const Tensor row = reshape(tape, projected, Shape{1, projected.dim(0)});
    return reshape(tape, l2_normalize_rows(tape, row), Shape{projected.dim(0)});
  }
  return l2_normalize_rows(tape, projected);
}

Tensor similarity_matrix(Tape& tape, const Tensor& x, const Tensor& y) {
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(1)) {
    throw ShapeError("similarity_matrix: embedding widths disagree for " + shape_string(x.shape()) + " and " +
                     shape_string(y.shape()));
  }
  return matmul_nt(tape, x, y);
}

namespace {

double log_sum_exp(const double* v, std::size_t n, std::size_t stride) {
  double peak = -INFINITY;
  for (std::size_t j = 0; j < n; ++j) peak = std::max(peak, v[j * stride]);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) total += std::exp(v[j * stride] - peak);
  return peak + std::log(total);
}

}  // namespace

Tensor infonce_loss(Tape& tape, const Tensor& similarity, double sigma, InfoNceTerms* terms) {
  if (similarity.rank() != 2 || similarity.dim(0) != similarity.dim(1)) {
    throw ShapeError("infonce_loss: similarity must be square, got " +
                     (similarity.defined() ? shape_string(similarity.shape()) : std::string("undefined")));
  }
  if (!(sigma > 0.0)) throw ContractError("infonce_loss: temperature must be positive");
  const std::size_t b = similarity.dim(0);
  const auto s = similarity.values();
  std::vector<double> logits(b * b);
  for (std::size_t i = 0; i < b * b; ++i) logits[i] = s[i] / sigma;

  auto row_lse = std::make_shared<std::vector<double>>(b);
  auto col_lse = std::make_shared<std::vector<double>>(b);
  double v2t = 0.0, t2v = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    (*row_lse)[i] = log_sum_exp(logits.data() + i * b, b, 1);
    (*col_lse)[i] = log_sum_exp(logits.data() + i, b, b);
    v2t += (*row_lse)[i] - logits[i * b + i];
    t2v += (*col_lse)[i] - logits[i * b + i];
  }
  v2t /= static_cast<double>(b);
  t2v /= static_cast<double>(b);
  if (terms) *terms = {v2t, t2v};
  Tensor out = Tensor::scalar(v2t + t2v);
  if (!std::isfinite(out.item())) throw NumericError("infonce_loss: non-finite loss");

  if (tape.tracks({&similarity})) {
    tape.record(out, [ss = similarity.storage(), so = out.storage(), row_lse, col_lse, b, sigma,
                      logits = std::move(logits)] {
      ss->ensure_grad();
      const double g = so->grad[0] / (static_cast<double>(b) * sigma);
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
          const double z = logits[i * b + j];
          double d = std::exp(z - (*row_lse)[i]) + std::exp(z - (*col_lse)[j]);
          if (i == j) d -= 2.0;
          ss->grad[i * b + j] += g * d;
        }
      }
    });
  }
  return out;
}

}  // namespace vtr
