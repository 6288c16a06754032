#pragma once

#include "vtr/layers.hpp"

namespace vtr {

struct DualSpaceConfig {
  std::size_t common_dim = 256;
  double temperature = 0.05;
  bool bias = true;
  double init_std = 0.02;

  void validate() const;
};

struct DualSpaceParams {
  Tensor video_weight;  // [C x D]
  Tensor video_bias;    // [C], undefined when bias is off
  Tensor text_weight;   // [C x D_text]
  Tensor text_bias;
  double temperature = 0.05;

  static DualSpaceParams init(const DualSpaceConfig& config, std::size_t video_dim, std::size_t text_dim,
                              SeededRng& rng);
  void collect(ParamList& out, const std::string& prefix = "dual") const;
};

enum class Modality { kVideo, kText };

// Affine projection into the common space, without normalization. raw is
// [B x D] or [D]; the output keeps the input's rank.
Tensor project(Tape& tape, const DualSpaceParams& params, const Tensor& raw, Modality which);

// project() followed by unit L2 normalization. A zero projection raises
// DegeneracyError.
Tensor project_and_normalize(Tape& tape, const DualSpaceParams& params, const Tensor& raw, Modality which);

// S[i][j] = x_i . y_j
Tensor similarity_matrix(Tape& tape, const Tensor& x, const Tensor& y);

struct InfoNceTerms {
  double video_to_text = 0.0;
  double text_to_video = 0.0;
};

// Symmetric contrastive loss over a square similarity matrix whose diagonal
// holds the matched pairs: mean over rows of the row-softmax NLL plus mean over
// columns of the column-softmax NLL, both at temperature sigma. Uses
// log-sum-exp throughout.
Tensor infonce_loss(Tape& tape, const Tensor& similarity, double sigma, InfoNceTerms* terms = nullptr);

}  // namespace vtr
