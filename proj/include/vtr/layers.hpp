#pragma once

#include <string>

#include "vtr/ops.hpp"
#include "vtr/rng.hpp"

namespace vtr {

// Building blocks shared by the video and text encoders. Weights are stored
// [out x in].

struct NormParams {
  Tensor gamma;
  Tensor beta;

  static NormParams init(std::size_t dim);
  void collect(ParamList& out, const std::string& prefix) const;
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;

  // zero_output leaves wo/bo at zero so the sub-layer starts as a no-op.
  static AttentionParams init(std::size_t dim, double std, bool zero_output, SeededRng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

struct MlpParams {
  Tensor w1, b1, w2, b2;

  static MlpParams init(std::size_t dim, std::size_t hidden, double std, SeededRng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
};

Tensor truncated_normal_tensor(Shape shape, double std, SeededRng& rng);

Tensor apply_norm(Tape& tape, const Tensor& x, const NormParams& norm, double eps = 1e-5);

// Q/K/V projections, grouped attention, output projection.
Tensor attention_sublayer(Tape& tape, const Tensor& normed, const AttentionParams& p, const AttentionGroups& groups,
                          std::size_t heads, AttentionStats* stats = nullptr);

Tensor mlp_sublayer(Tape& tape, const Tensor& normed, const MlpParams& p);

}  // namespace vtr
