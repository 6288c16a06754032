#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vtr/tensor.hpp"

namespace vtr {

// Differentiable operations. Every op validates shapes, computes its output
// eagerly and, when `tape` tracks any input, records a backward rule that
// accumulates into the inputs' gradients.

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// a[m x k] * b[n x k]^T -> [m x n]
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);
// x[T x in] * weight[out x in]^T + bias[out]; bias may be undefined.
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor sum(Tape& tape, const Tensor& a);
Tensor reshape(Tape& tape, const Tensor& a, Shape shape);

Tensor softmax_lastdim(Tape& tape, const Tensor& x);
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
// Exact form x * Phi(x).
Tensor gelu(Tape& tape, const Tensor& x);
// Rows of a rank-2 tensor scaled to unit L2 norm; a zero row is a DegeneracyError.
Tensor l2_normalize_rows(Tape& tape, const Tensor& x);

Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(Tape& tape, std::span<const Tensor> parts);
// out[i] = x[index[i]]; backward scatter-adds.
Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::uint32_t> index);
// Unweighted mean over rows: [R x C] -> [C].
Tensor mean_rows(Tape& tape, const Tensor& x);

// Token groups for grouped self-attention. Every group attends all-to-all
// among its members. A token that belongs to several groups receives the mean
// of its per-group outputs; a token in no group receives zeros.
class AttentionGroups {
 public:
  void add(std::span<const std::uint32_t> members);
  std::size_t count() const { return offsets_.size() - 1; }
  std::span<const std::uint32_t> group(std::size_t g) const {
    return {members_.data() + offsets_[g], offsets_[g + 1] - offsets_[g]};
  }
  std::size_t max_index() const { return max_index_; }

 private:
  std::vector<std::uint32_t> members_;
  std::vector<std::size_t> offsets_{0};
  std::size_t max_index_ = 0;
};

struct AttentionStats {
  std::uint64_t score_count = 0;  // query-key dot products evaluated
  double max_row_sum_error = 0.0;
  bool non_negative = true;
};

// Multi-head scaled dot-product attention inside each group.
// q, k, v: [T x D] with D divisible by heads; returns context [T x D].
Tensor group_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                       const AttentionGroups& groups, std::size_t heads, AttentionStats* stats = nullptr);

}  // namespace vtr
