#include "vtr/gradient_suite.hpp"

#include <functional>
#include <map>

#include "vtr/dual_space.hpp"
#include "vtr/errors.hpp"
#include "vtr/ops.hpp"

namespace vtr {

ModelConfig ModelGradCheckConfig::tiny_model() {
  ModelConfig m;
  m.video.frames_max = 2;
  m.video.height = 8;
  m.video.width = 8;
  m.video.patch = 4;
  m.video.embed_dim = 16;
  m.video.heads = 2;
  m.video.blocks = 2;
  m.video.mlp_ratio = 2.0;
  m.text.vocab_size = 10;
  m.text.max_len = 6;
  m.text.embed_dim = 16;
  m.text.heads = 2;
  m.text.blocks = 2;
  m.text.mlp_ratio = 2.0;
  m.dual.common_dim = 8;
  return m;
}

GradCheckReport model_gradcheck(const ModelGradCheckConfig& config) {
  RetrievalModel model(config.model, config.frames, config.seed);
  SeededRng rng = SeededRng(config.seed).fork(77);
  for (const auto& p : model.parameters()) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_values()) v += config.perturb_std * rng.normal();
  }
  const auto& vc = config.model.video;
  std::vector<Tensor> clips;
  for (std::size_t b = 0; b < config.batch; ++b) {
    Tensor clip(Shape{config.frames, 3, vc.height, vc.width});
    for (double& v : clip.mutable_values()) v = rng.uniform();
    clips.push_back(clip);
  }
  std::vector<TokenSequence> captions;
  const auto vocab = config.model.text.vocab_size;
  for (std::size_t b = 0; b < config.batch; ++b) {
    TokenSequence s;
    s.ids.push_back(Vocabulary::kCls);
    const std::size_t len = 2 + rng.uniform_int(config.model.text.max_len - 1);
    while (s.ids.size() < len) s.ids.push_back(Vocabulary::kReserved + rng.uniform_int(vocab - Vocabulary::kReserved));
    captions.push_back(s);
  }
  return grad_check([&](Tape& tape) { return model.loss(tape, clips, captions); }, model.parameters(),
                    config.options);
}

namespace {

struct OpCase {
  std::vector<Shape> inputs;
  std::function<Tensor(Tape&, const std::vector<Tensor>&)> forward;
};

const std::map<std::string, OpCase>& op_cases() {
  static const std::map<std::string, OpCase> cases = {
      {"matmul", {{{3, 4}, {4, 5}}, [](Tape& t, const auto& x) { return matmul(t, x[0], x[1]); }}},
      {"matmul_nt", {{{3, 4}, {5, 4}}, [](Tape& t, const auto& x) { return matmul_nt(t, x[0], x[1]); }}},
      {"linear", {{{3, 4}, {5, 4}, {5}}, [](Tape& t, const auto& x) { return linear(t, x[0], x[1], x[2]); }}},
      {"add", {{{3, 4}, {3, 4}}, [](Tape& t, const auto& x) { return add(t, x[0], x[1]); }}},
      {"sub", {{{3, 4}, {3, 4}}, [](Tape& t, const auto& x) { return sub(t, x[0], x[1]); }}},
      {"mul", {{{3, 4}, {3, 4}}, [](Tape& t, const auto& x) { return mul(t, x[0], x[1]); }}},
      {"scale", {{{3, 4}}, [](Tape& t, const auto& x) { return scale(t, x[0], 1.7); }}},
      {"sum", {{{3, 4}}, [](Tape& t, const auto& x) { return reshape(t, sum(t, x[0]), Shape{1}); }}},
      {"reshape", {{{3, 4}}, [](Tape& t, const auto& x) { return reshape(t, x[0], Shape{2, 6}); }}},
      {"softmax", {{{3, 5}}, [](Tape& t, const auto& x) { return softmax_lastdim(t, x[0]); }}},
      {"layer_norm",
       {{{3, 6}, {6}, {6}}, [](Tape& t, const auto& x) { return layer_norm(t, x[0], x[1], x[2]); }}},
      {"gelu", {{{3, 4}}, [](Tape& t, const auto& x) { return gelu(t, x[0]); }}},
      {"l2_normalize", {{{3, 4}}, [](Tape& t, const auto& x) { return l2_normalize_rows(t, x[0]); }}},
      {"slice_rows", {{{5, 3}}, [](Tape& t, const auto& x) { return slice_rows(t, x[0], 1, 4); }}},
      {"concat_rows",
       {{{2, 3}, {3, 3}},
        [](Tape& t, const auto& x) {
          const Tensor parts[] = {x[0], x[1]};
          return concat_rows(t, parts);
        }}},
      {"gather_rows",
       {{{4, 3}},
        [](Tape& t, const auto& x) {
          const std::uint32_t index[] = {2, 0, 2, 3, 1};
          return gather_rows(t, x[0], index);
        }}},
      {"mean_rows", {{{4, 3}}, [](Tape& t, const auto& x) { return mean_rows(t, x[0]); }}},
      {"group_attention",
       {{{6, 4}, {6, 4}, {6, 4}},
        [](Tape& t, const auto& x) {
          AttentionGroups groups;
          const std::uint32_t a[] = {0, 1, 2, 3}, b[] = {2, 3, 4, 5}, c[] = {1, 5};
          groups.add(a);
          groups.add(b);
          groups.add(c);
          return group_attention(t, x[0], x[1], x[2], groups, 2);
        }}},
      {"infonce",
       {{{4, 4}},
        [](Tape& t, const auto& x) {
          // Keeps logits near unit scale so no gradient entry underflows.
          return reshape(t, infonce_loss(t, scale(t, x[0], 0.1), 0.05), Shape{1});
        }}},
  };
  return cases;
}

}  // namespace

std::vector<std::string> gradcheck_op_names() {
  std::vector<std::string> names;
  for (const auto& [name, c] : op_cases()) names.push_back(name);
  return names;
}

GradCheckReport op_gradcheck(const std::string& op, std::uint64_t seed, GradCheckOptions options) {
  const auto& cases = op_cases();
  const auto it = cases.find(op);
  if (it == cases.end()) throw ConfigError("gradcheck: unknown op '" + op + "'");
  const OpCase& c = it->second;
  SeededRng rng(seed);
  std::vector<Tensor> inputs;
  ParamList params;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    Tensor x(c.inputs[i]);
    for (double& v : x.mutable_values()) v = rng.normal();
    inputs.push_back(x);
    params.push_back({op + ".input" + std::to_string(i), x});
  }
  Tensor weights;
  auto loss = [&](Tape& tape) {
    const Tensor out = c.forward(tape, inputs);
    if (!weights.defined()) {
      weights = Tensor(out.shape());
      for (double& v : weights.mutable_values()) v = rng.normal();
    }
    return sum(tape, mul(tape, out, weights));
  };
  return grad_check(loss, params, options);
}

}  // namespace vtr
