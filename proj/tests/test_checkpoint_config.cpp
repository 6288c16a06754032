#include <gtest/gtest.h>

#include <cstring>

#include "test_util.hpp"
#include "vtr/checkpoint.hpp"
#include "vtr/config.hpp"
#include "vtr/errors.hpp"

using namespace vtr;
using vtr::testing::TempDir;

namespace {

struct Trained {
  RetrievalModel model;
  AdamState adam;
  Vocabulary vocab{{"red", "ball", "moves"}};
  TrainingState state;

  explicit Trained(std::size_t frames = 2) : model(vtr::testing::tiny_model(6), frames, 3) {
    SeededRng rng(4);
    vtr::testing::perturb(model.parameters(), 0.1, rng);
    for (const auto& p : model.parameters()) {
      Tensor t = p.tensor;
      for (double& g : t.mutable_grad()) g = rng.normal();
    }
    adam.step(model.parameters());
    state.global_step = 17;
    state.stage = 1;
    state.rng_seed = 5;
    state.rng_counter = 17;
    state.adam_step = 1;
    state.stream = {40, 68, 9};
    state.ledger = {100, 250};
  }

  Checkpoint checkpoint() const { return make_checkpoint(model, &adam, &vocab, state); }
};

Tensor embed(RetrievalModel& model, std::size_t frames) {
  SeededRng rng(9);
  const Tensor clips[] = {vtr::testing::random_clip(frames, 8, 8, rng), vtr::testing::random_clip(frames, 8, 8, rng)};
  Tape tape = Tape::inference();
  return model.embed_videos(tape, clips);
}

void put_u32(std::string& bytes, std::size_t offset, std::uint32_t v) { std::memcpy(bytes.data() + offset, &v, 4); }

}  // namespace

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  Trained t;
  TempDir dir;
  save_checkpoint(dir / "a.ckpt", t.checkpoint());
  const Checkpoint loaded = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(dir / "b.ckpt", loaded);
  EXPECT_EQ(vtr::testing::read_file(dir / "a.ckpt"), vtr::testing::read_file(dir / "b.ckpt"));
  EXPECT_EQ(loaded.state, t.state);
  EXPECT_EQ(loaded.vocab, t.vocab.tokens());
  EXPECT_EQ(vocab_from_checkpoint(loaded), t.vocab);
}

TEST(Checkpoint, HeaderLayout) {
  Trained t;
  const std::string bytes = encode_checkpoint(t.checkpoint());
  EXPECT_EQ(bytes.substr(0, 8), std::string(kCheckpointMagic.data(), 8));
  std::uint32_t version = 0, blob = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&blob, bytes.data() + 12, 4);
  EXPECT_EQ(version, kCheckpointVersion);
  EXPECT_NE(bytes.substr(16, blob).find("video.frames_max = 4"), std::string::npos);
}

TEST(Checkpoint, RestoredModelReproducesForwardOutputsBitwise) {
  Trained t;
  RetrievalModel restored = model_from_checkpoint(decode_checkpoint(encode_checkpoint(t.checkpoint())));
  EXPECT_EQ(restored.temporal_capacity(), 2u);
  EXPECT_TRUE(vtr::testing::bitwise_equal(embed(t.model, 2), embed(restored, 2)));

  AdamState adam;
  restore_optimizer(t.checkpoint(), adam);
  EXPECT_EQ(adam.step_count(), 1u);
  EXPECT_EQ(adam.moments().size(), t.adam.moments().size());
  for (const auto& [name, m] : t.adam.moments()) {
    EXPECT_EQ(adam.moments().at(name).first, m.first);
    EXPECT_EQ(adam.moments().at(name).second, m.second);
  }
}

TEST(Checkpoint, FormatAndCorruptionErrors) {
  Trained t;
  const std::string good = encode_checkpoint(t.checkpoint());

  std::string magic = good;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), FormatError);

  std::string version = good;
  put_u32(version, 8, kCheckpointVersion + 1);
  EXPECT_THROW(decode_checkpoint(version), FormatError);

  std::string blob = good;
  put_u32(blob, 12, 0x7fffffff);
  EXPECT_THROW(decode_checkpoint(blob), CorruptionError);

  for (std::size_t cut : {std::size_t{4}, std::size_t{20}, good.size() / 2, good.size() - 1})
    EXPECT_THROW(decode_checkpoint(good.substr(0, cut)), CorruptionError) << cut;
  EXPECT_THROW(decode_checkpoint(good + "x"), CorruptionError);

  TempDir dir;
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST(Checkpoint, FailedRestoreLeavesTheModelUntouched) {
  Trained source;
  Checkpoint ckpt = source.checkpoint();
  // Break the shape of the last stored parameter only.
  for (auto it = ckpt.records.rbegin(); it != ckpt.records.rend(); ++it) {
    if (it->name.rfind("param/", 0) == 0) {
      it->tensor = Tensor(Shape{1});
      break;
    }
  }
  RetrievalModel target(vtr::testing::tiny_model(6), 2, 99);
  std::vector<Tensor> before;
  for (const auto& p : target.parameters()) before.push_back(p.tensor.clone());
  EXPECT_THROW(restore_model(ckpt, target), ShapeError);
  const ParamList after = target.parameters();
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_TRUE(vtr::testing::bitwise_equal(after[i].tensor, before[i]));
}

TEST(Checkpoint, CapacityMismatchNeedsExplicitExpansion) {
  Trained small(2);
  const Checkpoint ckpt = small.checkpoint();
  EXPECT_EQ(checkpoint_frame_capacity(ckpt), 2u);
  RetrievalModel wide(vtr::testing::tiny_model(6), 4, 1);
  EXPECT_THROW(restore_model(ckpt, wide), CapacityError);
  restore_model(ckpt, wide, ExpansionMethod::kZeroPad);
  EXPECT_EQ(wide.temporal_capacity(), 4u);
  const Tensor& table = wide.video_params().time_embed;
  const Tensor& stored = small.model.video_params().time_embed;
  for (std::size_t i = 0; i < stored.size(); ++i) EXPECT_EQ(table[i], stored[i]);
  for (std::size_t i = stored.size(); i < table.size(); ++i) EXPECT_EQ(table[i], 0.0);
  EXPECT_TRUE(vtr::testing::bitwise_equal(embed(small.model, 2), embed(wide, 2)));
}

TEST(KeyValues, ParsingAndFormatting) {
  const auto kv = parse_key_values("# comment\n\nvideo.dim = 16\n  train.lr=0.5  \n");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"video.dim", "16"}));
  EXPECT_EQ(kv[1], (std::pair<std::string, std::string>{"train.lr", "0.5"}));
  EXPECT_EQ(parse_key_values(format_key_values(kv)), kv);
  try {
    parse_key_values("video.dim = 1\nnot a pair\n", "demo.conf");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("demo.conf:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_key_values("dim = 4\n"), ParseError);
}

TEST(RunConfigTest, DefaultsRoundTripThroughEntries) {
  RunConfig a;
  EXPECT_EQ(a.model.video.patch, 16u);
  EXPECT_EQ(a.model.dual.temperature, 0.05);
  EXPECT_EQ(a.train.adam.lr, 1e-5);
  EXPECT_EQ(a.schedule.stages, "1x96:500,4x24:500,8x16:500");
  a.set("video.attention_style", "original");
  a.set("train.lr", "0.000123");
  a.set("schedule.expansion", "bilinear");
  a.set("eval.direction", "v2t");
  RunConfig b;
  b.apply(a.entries());
  EXPECT_EQ(b.entries(), a.entries());
  EXPECT_EQ(b.train.adam.lr, 0.000123);
  EXPECT_EQ(b.model.video.attention_style, AttentionStyle::kOriginalDivided);
}

TEST(RunConfigTest, BadKeysAndValues) {
  RunConfig c;
  EXPECT_THROW(c.set("video.depth", "3"), ConfigError);
  EXPECT_THROW(c.set("video.dim", "sixteen"), ConfigError);
  EXPECT_THROW(c.set("video.dim", "-4"), ConfigError);
  EXPECT_THROW(c.set("dual.bias", "maybe"), ConfigError);
  EXPECT_THROW(c.set("schedule.expansion", "cubic"), ConfigError);
  EXPECT_THROW(c.set("eval.direction", "sideways"), ConfigError);
}

TEST(RunConfigTest, ValidationCatchesCapacityAndShapes) {
  RunConfig c;
  c.model.text.vocab_size = 20;
  EXPECT_NO_THROW(c.validate());
  c.schedule.stages = "4,16";
  EXPECT_THROW(c.validate(), CapacityError);
  c.schedule.stages = "4";
  c.eval.frames = 9;
  EXPECT_THROW(c.validate(), CapacityError);
  c.eval.frames = 4;
  c.model.video.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c.model.video.heads = 4;
  c.schedule.stages = "4x:3";
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RunConfigTest, FileThenOverrides) {
  TempDir dir;
  vtr::testing::write_file(dir / "run.conf", "video.dim = 32\nvideo.heads = 2\nrun.seed = 9\n");
  RunConfig c = load_run_config(dir / "run.conf");
  EXPECT_EQ(c.model.video.embed_dim, 32u);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.model.text.embed_dim, RunConfig::default_model().text.embed_dim);
  EXPECT_THROW(load_run_config(dir / "absent.conf"), IoError);
  vtr::testing::write_file(dir / "bad.conf", "video.nothing = 1\n");
  EXPECT_THROW(load_run_config(dir / "bad.conf"), ConfigError);
}

TEST(ModelEntries, RoundTrip) {
  ModelConfig m = vtr::testing::tiny_model(9);
  m.video.attention_style = AttentionStyle::kOriginalDivided;
  m.dual.bias = false;
  const ModelConfig back = model_from_entries(model_entries(m));
  EXPECT_EQ(model_entries(back), model_entries(m));
  EXPECT_THROW(model_from_entries({{"video.bogus", "1"}}), FormatError);
}
