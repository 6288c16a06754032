#include "vtr/layers.hpp"

namespace vtr {

Tensor truncated_normal_tensor(Shape shape, double std, SeededRng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_values()) v = rng.truncated_normal(std);
  return t;
}

NormParams NormParams::init(std::size_t dim) {
  NormParams p{Tensor(Shape{dim}), Tensor(Shape{dim})};
  for (auto& v : p.gamma.mutable_values()) v = 1.0;
  return p;
}

void NormParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

AttentionParams AttentionParams::init(std::size_t dim, double std, bool zero_output, SeededRng& rng) {
  AttentionParams p;
  p.wq = truncated_normal_tensor({dim, dim}, std, rng);
  p.wk = truncated_normal_tensor({dim, dim}, std, rng);
  p.wv = truncated_normal_tensor({dim, dim}, std, rng);
  p.wo = zero_output ? Tensor(Shape{dim, dim}) : truncated_normal_tensor({dim, dim}, std, rng);
  p.bq = Tensor(Shape{dim});
  p.bk = Tensor(Shape{dim});
  p.bv = Tensor(Shape{dim});
  p.bo = Tensor(Shape{dim});
  return p;
}

void AttentionParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".wq", wq});
  out.push_back({prefix + ".bq", bq});
  out.push_back({prefix + ".wk", wk});
  out.push_back({prefix + ".bk", bk});
  out.push_back({prefix + ".wv", wv});
  out.push_back({prefix + ".bv", bv});
  out.push_back({prefix + ".wo", wo});
  out.push_back({prefix + ".bo", bo});
}

MlpParams MlpParams::init(std::size_t dim, std::size_t hidden, double std, SeededRng& rng) {
  MlpParams p;
  p.w1 = truncated_normal_tensor({hidden, dim}, std, rng);
  p.b1 = Tensor(Shape{hidden});
  p.w2 = truncated_normal_tensor({dim, hidden}, std, rng);
  p.b2 = Tensor(Shape{dim});
  return p;
}

void MlpParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".w1", w1});
  out.push_back({prefix + ".b1", b1});
  out.push_back({prefix + ".w2", w2});
  out.push_back({prefix + ".b2", b2});
}

Tensor apply_norm(Tape& tape, const Tensor& x, const NormParams& norm, double eps) {
  return layer_norm(tape, x, norm.gamma, norm.beta, eps);
}

Tensor attention_sublayer(Tape& tape, const Tensor& normed, const AttentionParams& p, const AttentionGroups& groups,
                          std::size_t heads, AttentionStats* stats) {
  const Tensor q = linear(tape, normed, p.wq, p.bq);
  const Tensor k = linear(tape, normed, p.wk, p.bk);
  const Tensor v = linear(tape, normed, p.wv, p.bv);
  const Tensor ctx = group_attention(tape, q, k, v, groups, heads, stats);
  return linear(tape, ctx, p.wo, p.bo);
}

Tensor mlp_sublayer(Tape& tape, const Tensor& normed, const MlpParams& p) {
  return linear(tape, gelu(tape, linear(tape, normed, p.w1, p.b1)), p.w2, p.b2);
}

}  // namespace vtr
