#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <set>

#include "test_util.hpp"
#include "vit_oracle.hpp"
#include "vtr/data_synth.hpp"
#include "vtr/errors.hpp"

using namespace vtr;
using vtr::testing::TempDir;

namespace {

std::vector<double> frame_values(const Tensor& clip, std::size_t k) {
  const std::size_t n = clip.size() / clip.dim(0);
  return {clip.values().begin() + k * n, clip.values().begin() + (k + 1) * n};
}

std::multiset<std::vector<double>> frame_multiset(const Tensor& clip) {
  std::multiset<std::vector<double>> out;
  for (std::size_t k = 0; k < clip.dim(0); ++k) out.insert(frame_values(clip, k));
  return out;
}

ManifestRecord record_with(std::vector<std::string> captions) {
  ManifestRecord r;
  r.id = "x";
  r.clip_path = "x.fzc";
  r.captions = std::move(captions);
  return r;
}

}  // namespace

TEST(ClipFile, RoundTripIsExactForFloat32Values) {
  TempDir dir;
  Tensor clip(Shape{2, 3, 4, 5});
  SeededRng rng(1);
  for (double& v : clip.mutable_values()) v = static_cast<float>(rng.uniform());
  write_clip(dir / "a.fzc", clip);
  const Tensor back = read_clip(dir / "a.fzc");
  EXPECT_TRUE(vtr::testing::bitwise_equal(back, clip));
  const ClipHeader h = read_clip_header(dir / "a.fzc");
  EXPECT_EQ(h.frames, 2u);
  EXPECT_EQ(h.height, 4u);
  EXPECT_EQ(h.width, 5u);
  const std::string bytes = vtr::testing::read_file(dir / "a.fzc");
  EXPECT_EQ(bytes.size(), 8u + 5 * 4 + 2 * 3 * 4 * 5 * 4);
  EXPECT_EQ(bytes.substr(0, 8), "FZCLIP01");
}

TEST(ClipFile, Errors) {
  TempDir dir;
  const Tensor clip(Shape{1, 3, 2, 2});
  write_clip(dir / "ok.fzc", clip);
  const std::string good = vtr::testing::read_file(dir / "ok.fzc");

  vtr::testing::write_file(dir / "magic.fzc", "XXCLIP01" + good.substr(8));
  EXPECT_THROW(read_clip(dir / "magic.fzc"), FormatError);
  vtr::testing::write_file(dir / "short.fzc", good.substr(0, good.size() - 4));
  EXPECT_THROW(read_clip(dir / "short.fzc"), CorruptionError);
  vtr::testing::write_file(dir / "head.fzc", good.substr(0, 10));
  EXPECT_THROW(read_clip(dir / "head.fzc"), CorruptionError);
  std::string bad_pixel = good;
  const float two = 2.0f;
  std::memcpy(bad_pixel.data() + 28, &two, 4);
  vtr::testing::write_file(dir / "pixel.fzc", bad_pixel);
  EXPECT_THROW(read_clip(dir / "pixel.fzc"), ValidationError);
  EXPECT_THROW(read_clip(dir / "missing.fzc"), IoError);
  EXPECT_THROW(write_clip(dir / "rank.fzc", Tensor(Shape{3, 2, 2})), ShapeError);
  Tensor hot(Shape{1, 3, 1, 1}, {0.5, 1.5, 0});
  EXPECT_THROW(write_clip(dir / "hot.fzc", hot), ValidationError);
}

TEST(Manifest, FormatAndParse) {
  ManifestRecord r{"v1", ClipKind::kVideo, "clips/v1.fzc", 16, {"red square moving left slow", "a slow red square"}};
  const std::string line = format_manifest_line(r);
  EXPECT_EQ(line, "v1\tvideo\tclips/v1.fzc\t16\tred square moving left slow\ta slow red square");
  EXPECT_EQ(parse_manifest(line + "\n").front(), r);
  EXPECT_TRUE(parse_manifest("").empty());
  try {
    parse_manifest(line + "\nv2\tvideo\tclips/v2.fzc\n", "m.tsv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("m.tsv:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_manifest("i\timage\tc.fzc\t4\tcap\n"), ParseError);
  EXPECT_THROW(parse_manifest("i\tsound\tc.fzc\t1\tcap\n"), ParseError);
  EXPECT_THROW(parse_manifest("i\tvideo\tc.fzc\tx\tcap\n"), ParseError);
  r.captions.push_back("tab\there");
  EXPECT_THROW(format_manifest_line(r), ValidationError);
}

TEST(Manifest, LoadChecksClipFiles) {
  TempDir dir;
  write_manifest(dir / "empty.tsv", {});
  EXPECT_TRUE(load_manifest(dir / "empty.tsv").empty());

  std::filesystem::create_directories(dir / "clips");
  write_clip(dir / "clips/a.fzc", Tensor(Shape{4, 3, 2, 2}));
  write_manifest(dir / "ok.tsv", {{"a", ClipKind::kVideo, "clips/a.fzc", 4, {"cap"}}});
  EXPECT_EQ(load_manifest(dir / "ok.tsv").size(), 1u);
  EXPECT_EQ(load_samples(dir / "ok.tsv").front().clip.dim(0), 4u);

  write_manifest(dir / "wrong_l.tsv", {{"a", ClipKind::kVideo, "clips/a.fzc", 5, {"cap"}}});
  EXPECT_THROW(load_manifest(dir / "wrong_l.tsv"), ValidationError);
  write_manifest(dir / "dangling.tsv", {{"b", ClipKind::kVideo, "clips/b.fzc", 4, {"cap"}}});
  EXPECT_THROW(load_manifest(dir / "dangling.tsv"), DanglingReferenceError);
  EXPECT_THROW(load_manifest(dir / "absent.tsv"), IoError);
}

TEST(Manifest, ThousandRecordsRoundTrip) {
  TempDir dir;
  std::vector<ManifestRecord> records;
  for (int i = 0; i < 1000; ++i) {
    records.push_back({"id" + std::to_string(i), i % 3 ? ClipKind::kVideo : ClipKind::kImage, "c.fzc",
                       i % 3 ? static_cast<std::size_t>(1 + i % 20) : 1,
                       {"caption " + std::to_string(i), "alt " + std::to_string(i * 7)}});
  }
  write_manifest(dir / "big.tsv", records);
  EXPECT_EQ(parse_manifest(vtr::testing::read_file(dir / "big.tsv")), records);
}

TEST(Synthetic, SameSeedGivesByteIdenticalCorpus) {
  SyntheticSpec spec;
  spec.train_size = 16;
  spec.val_size = 8;
  spec.test_size = 8;
  TempDir a, b;
  const auto files = write_corpus(generate_synthetic(spec), a.path());
  EXPECT_EQ(write_corpus(generate_synthetic(spec), b.path()), files);
  for (const auto& f : files) EXPECT_EQ(vtr::testing::read_file(a / f), vtr::testing::read_file(b / f)) << f;
  EXPECT_EQ(load_manifest(a / "train.tsv").size(), 16u);
  EXPECT_EQ(Vocabulary::load(a / "vocab.txt"), corpus_vocabulary(generate_synthetic(spec)));
}

TEST(Synthetic, FactorSpaceAndSplits) {
  EXPECT_EQ(kColors.size() * kDirections.size() * kSpeeds.size(), 64u);
  EXPECT_EQ(kColors.size() * kShapes.size() * kSpeeds.size() * kDirections.size(), 256u);
  const SyntheticCorpus c = generate_synthetic(SyntheticSpec{});
  EXPECT_EQ(c.train.size(), 128u);
  EXPECT_EQ(c.val.size(), 64u);
  EXPECT_EQ(c.test.size(), 64u);
  std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> all;
  std::array<std::set<std::string>, 3> captions;
  std::size_t split = 0;
  for (const auto* items : {&c.train, &c.val, &c.test}) {
    for (const auto& item : *items) {
      const auto& f = item.factors;
      EXPECT_TRUE(all.insert({f.color, f.shape, f.direction, f.speed}).second);
      for (const auto& cap : item.sample.record.captions) captions[split].insert(cap);
      EXPECT_EQ(item.sample.record.captions.front(), video_captions(f).front());
      for (double v : item.sample.clip.values()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    }
    ++split;
  }
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j)
      for (const auto& cap : captions[i]) EXPECT_EQ(captions[j].count(cap), 0u) << cap;

  for (const auto& img : c.images) {
    EXPECT_EQ(img.sample.record.kind, ClipKind::kImage);
    EXPECT_EQ(img.sample.clip.dim(0), 1u);
    for (const auto& cap : img.sample.record.captions)
      for (const auto& word : kDirections) EXPECT_EQ(cap.find(word), std::string::npos);
  }
  SyntheticSpec too_many;
  too_many.train_size = 200;
  EXPECT_THROW(generate_synthetic(too_many), ConfigError);
}

TEST(Synthetic, OppositeDirectionsShareEverySingleFrame) {
  const SyntheticSpec spec;
  for (std::size_t speed = 0; speed < 2; ++speed)
    for (std::size_t shape = 0; shape < 4; ++shape) {
      const auto clip = [&](std::size_t d) { return render_clip({shape, shape, d, speed}, spec); };
      const Tensor left = clip(0), right = clip(1), up = clip(2), down = clip(3);
      EXPECT_EQ(frame_values(left, 0), frame_values(right, 0));
      EXPECT_EQ(frame_values(left, 0), frame_values(up, 0));
      EXPECT_EQ(frame_multiset(left), frame_multiset(right));
      EXPECT_EQ(frame_multiset(up), frame_multiset(down));
      // Order differs, so two frames are enough to tell them apart.
      EXPECT_NE(frame_values(left, 2), frame_values(right, 2));
      EXPECT_NE(frame_values(up, 2), frame_values(down, 2));
    }
}

TEST(Synthetic, SpecValidation) {
  SyntheticSpec s;
  s.frames = 6;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.height = 20;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.object_size = 2;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(ConcatCaptions, RangeAndDeterminism) {
  SeededRng rng(1);
  EXPECT_EQ(concat_captions(record_with({"only"}), 1, 3, rng), "only");
  const auto r = record_with({"a b", "c d", "e f"});
  for (int i = 0; i < 50; ++i) {
    const std::string s = concat_captions(r, 2, 2, rng);
    std::set<std::string> parts;
    for (const char* c : {"a b", "c d", "e f"})
      if (s.find(c) != std::string::npos) parts.insert(c);
    EXPECT_EQ(parts.size(), 2u) << s;
    EXPECT_EQ(s.size(), 7u);
  }
  SeededRng x(5), y(5);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(concat_captions(r, 1, 3, x), concat_captions(r, 1, 3, y));
  EXPECT_THROW(concat_captions(record_with({}), 1, 2, rng), ContractError);
}

TEST(PadShortClip, RepeatsTheLastFrame) {
  SeededRng rng(2);
  const Tensor one = vtr::testing::random_clip(1, 4, 4, rng);
  const Tensor four = pad_short_clip(one, 4);
  ASSERT_EQ(four.dim(0), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(frame_values(four, k), frame_values(one, 0));
  const Tensor three = vtr::testing::random_clip(3, 4, 4, rng);
  EXPECT_TRUE(vtr::testing::bitwise_equal(pad_short_clip(three, 2), three));
  EXPECT_EQ(frame_values(pad_short_clip(three, 5), 4), frame_values(three, 2));
}

TEST(PadShortClip, PaddedStillMatchesSingleFrameUnderSilencedTemporalPath) {
  VideoEncoderConfig config = vtr::testing::tiny_video();
  SeededRng rng(3);
  VideoEncoderParams params = VideoEncoderParams::init(config, 4, rng);
  ParamList list;
  params.collect(list);
  vtr::testing::perturb(list, 0.3, rng);
  oracle::silence_temporal(params);
  const Tensor still = vtr::testing::random_clip(1, 8, 8, rng);
  Tape tape = Tape::inference();
  const Tensor a = encode_video(tape, params, config, still, AttentionStyle::kFrozenModified);
  const Tensor b = encode_video(tape, params, config, pad_short_clip(still, 4), AttentionStyle::kFrozenModified);
  EXPECT_LE(vtr::testing::max_abs_diff(a.values(), b.values()), 1e-12);
}

TEST(SelectFrames, PicksByIndex) {
  SeededRng rng(4);
  const Tensor clip = vtr::testing::random_clip(5, 2, 2, rng);
  const std::size_t idx[] = {4, 0, 4};
  const Tensor s = select_frames(clip, idx);
  ASSERT_EQ(s.dim(0), 3u);
  EXPECT_EQ(frame_values(s, 0), frame_values(clip, 4));
  EXPECT_EQ(frame_values(s, 1), frame_values(clip, 0));
  const std::size_t bad[] = {5};
  EXPECT_THROW(select_frames(clip, bad), ContractError);
}
