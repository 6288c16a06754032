#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <json.hpp>

#include "test_util.hpp"

#ifndef VTR_CLI_PATH
#error "VTR_CLI_PATH must name the vtr executable"
#endif

namespace fs = std::filesystem;
using vtr::testing::read_file;
using vtr::testing::TempDir;

namespace {

constexpr const char* kTinyConfig = R"(# small enough for a unit test
synth.train_size = 16
synth.val_size = 8
synth.test_size = 8
synth.frames = 8
synth.object_size = 4
video.frames_max = 4
video.patch = 16
video.dim = 8
video.heads = 2
video.blocks = 1
video.init_std = 0.1
text.max_len = 8
text.dim = 8
text.heads = 2
text.blocks = 1
dual.common_dim = 8
train.lr = 1e-3
train.eval_every_epochs = 0
train.log_every = 1
schedule.stages = 2x4:3
eval.frames = 2
eval.stride = 2
)";

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override { vtr::testing::write_file(dir / "tiny.conf", kTinyConfig); }

  Result run(const std::string& args) {
    const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string(VTR_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
  }

  std::string conf() const { return "--config " + (dir / "tiny.conf").string(); }
  std::string path(const std::string& name) const { return (dir / name).string(); }

  // gen + train with the tiny config; returns the training directory.
  std::string gen_and_train(const std::string& tag, const std::string& train_flags = "") {
    EXPECT_EQ(run("gen " + conf() + " --seed 5 --out " + path(tag + "_data")).code, 0);
    const Result t = run("train " + conf() + " --seed 5 --data " + path(tag + "_data") + " --out " +
                         path(tag + "_run") + " " + train_flags);
    EXPECT_EQ(t.code, 0) << t.err;
    return path(tag + "_run");
  }

  TempDir dir;
};

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = 0; (pos = text.find(needle, pos)) != std::string::npos; pos += needle.size()) ++n;
  return n;
}

std::vector<std::string> tree(const fs::path& root) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root).string());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("gen").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("gen --out " + path("g") + " --set no.such=1").code, 2);
  EXPECT_EQ(run("gen --out " + path("g") + " --set video.dim").code, 2);
  vtr::testing::write_file(dir / "broken.conf", "this is not a pair\n");
  const Result r = run("gen --out " + path("g") + " --config " + path("broken.conf"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(":1"), std::string::npos) << r.err;
}

TEST_F(Cli, GenTwiceGivesIdenticalTrees) {
  ASSERT_EQ(run("gen --seed 7 --out " + path("a")).code, 0);
  ASSERT_EQ(run("gen --seed 7 --out " + path("b")).code, 0);
  const auto files = tree(dir / "a");
  EXPECT_EQ(files, tree(dir / "b"));
  for (const auto& f : files) EXPECT_EQ(read_file(dir / "a" / f), read_file(dir / "b" / f)) << f;
  // Default corpus: 128 / 64 / 64 videos.
  EXPECT_EQ(count(read_file(dir / "a/train.tsv"), "\n"), 128u);
  EXPECT_EQ(count(read_file(dir / "a/test.tsv"), "\n"), 64u);
  const std::string manifest = read_file(dir / "a/MANIFEST");
  for (const char* f : {"train.tsv", "val.tsv", "test.tsv", "images.tsv", "vocab.txt", "MANIFEST"})
    EXPECT_NE(manifest.find(std::string(f) + "\n"), std::string::npos) << f;
  EXPECT_EQ(count(manifest, "\n"), files.size());
}

TEST_F(Cli, EffectiveConfigFollowsPrecedence) {
  vtr::testing::write_file(dir / "p.conf", std::string(kTinyConfig) + "run.seed = 11\ntrain.lr = 0.5\n");
  const Result r = run("gen --config " + path("p.conf") + " --set train.lr=0.25 --set run.seed=12 --seed 13 --out " +
                       path("p"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("# effective config\n", 0), 0u);
  EXPECT_NE(r.out.find("train.lr = 0.25\n"), std::string::npos);
  EXPECT_NE(r.out.find("run.seed = 13\n"), std::string::npos);
  EXPECT_NE(r.out.find("video.dim = 8\n"), std::string::npos);
  EXPECT_NE(r.out.find("dual.temperature = 0.05\n"), std::string::npos);
}

TEST_F(Cli, TrainWritesArtifactsAndRejectsBadSchedulesEarly) {
  const std::string run_dir = gen_and_train("t", "--schedule 1x4:2,2x4:2 --expansion bilinear");
  const std::string log = read_file(fs::path(run_dir) / "train.log");
  EXPECT_EQ(count(log, "expansion:"), 1u);
  EXPECT_NE(log.find("method bilinear"), std::string::npos);
  for (const char* f : {"stage0.ckpt", "final.ckpt", "metrics.jsonl", "ledger.json", "train.conf", "MANIFEST"})
    EXPECT_TRUE(fs::exists(fs::path(run_dir) / f)) << f;

  const Result bad = run("train " + conf() + " --data " + path("t_data") + " --out " + path("bad") +
                         " --schedule 4,1");
  EXPECT_EQ(bad.code, 2);
  EXPECT_FALSE(fs::exists(dir / "bad/final.ckpt"));
  EXPECT_EQ(run("train " + conf() + " --data " + path("t_data") + " --out " + path("bad") + " --frames 8").code, 2);
  EXPECT_EQ(run("train " + conf() + " --data " + path("t_data") + " --out " + path("bad") +
                " --frames 2 --schedule 2").code, 2);
  EXPECT_EQ(run("train " + conf() + " --data " + path("missing") + " --out " + path("bad")).code, 1);
}

TEST_F(Cli, SingleFrameAndJointTraining) {
  const std::string single = gen_and_train("s", "--frames 1");
  EXPECT_NE(read_file(fs::path(single) / "train.log").find("frames 1 "), std::string::npos);
  const Result joint = run("train " + conf() + " --data " + path("s_data") + " --out " + path("joint") +
                           " --joint --set schedule.image_batch=4");
  ASSERT_EQ(joint.code, 0) << joint.err;
  const std::string log = read_file(dir / "joint/train.log");
  EXPECT_NE(log.find("[I]"), std::string::npos);
  EXPECT_NE(log.find("[V]"), std::string::npos);
}

TEST_F(Cli, EvalReportsBothDirectionsAndEchoesCallCounts) {
  const std::string run_dir = gen_and_train("e");
  const Result r = run("eval " + conf() + " --data " + path("e_data") + " --checkpoint " + run_dir +
                       "/final.ckpt --direction both --stride 1 --out " + path("eval"));
  ASSERT_EQ(r.code, 0) << r.err;
  // 8 frames in 2 segments, stride 1: 4 passes.
  EXPECT_NE(r.out.find("encoder calls t2v: 40 = t 8 + v 8 x passes 4; similarity entries 64"), std::string::npos)
      << r.out;
  EXPECT_NE(r.out.find("encoder calls v2t: 40"), std::string::npos);
  std::istringstream lines(read_file(dir / "eval/reports.jsonl"));
  std::vector<std::string> directions;
  for (std::string line; std::getline(lines, line);) {
    const auto j = nlohmann::json::parse(line);
    directions.push_back(j["direction"]);
    EXPECT_EQ(j["encoder_calls"].get<int>(), 40);
  }
  EXPECT_EQ(directions, (std::vector<std::string>{"t2v", "v2t"}));
}

TEST_F(Cli, EvalOnOnePairGalleryAndZeroShotLabel) {
  const std::string run_dir = gen_and_train("o");
  const std::string test = read_file(dir / "o_data/test.tsv");
  vtr::testing::write_file(dir / "o_data/one.tsv", test.substr(0, test.find('\n') + 1));
  const Result r = run("eval " + conf() + " --data " + path("o_data") + " --set data.test=one.tsv --checkpoint " +
                       run_dir + "/final.ckpt --zero-shot --direction t2v --out " + path("one"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(read_file(dir / "one/reports.jsonl"));
  EXPECT_EQ(j["r1"].get<double>(), 100.0);
  EXPECT_EQ(j["medr"].get<double>(), 1.0);
  EXPECT_EQ(j["label"], "zero-shot");
}

TEST_F(Cli, CapacityMismatchIsExplicit) {
  const std::string run_dir = gen_and_train("c", "--schedule 1x4:2,2x4:2");
  const Result r = run("eval " + conf() + " --data " + path("c_data") + " --checkpoint " + run_dir +
                       "/stage0.ckpt --frames 2 --out " + path("cap"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("capacity"), std::string::npos) << r.err;
}

TEST_F(Cli, EndToEndRunIsBitwiseReproducible) {
  std::vector<std::string> ckpts, reports;
  for (const char* tag : {"x", "y"}) {
    const std::string run_dir = gen_and_train(tag);
    ASSERT_EQ(run("eval " + conf() + " --data " + path(std::string(tag) + "_data") + " --checkpoint " + run_dir +
                  "/final.ckpt --out " + path(std::string(tag) + "_eval")).code, 0);
    ckpts.push_back(read_file(fs::path(run_dir) / "final.ckpt"));
    reports.push_back(read_file(dir / (std::string(tag) + "_eval") / "reports.jsonl"));
  }
  EXPECT_FALSE(ckpts[0].empty());
  EXPECT_EQ(ckpts[0], ckpts[1]);
  EXPECT_EQ(reports[0], reports[1]);
}

TEST_F(Cli, ResumeMatchesUninterruptedTraining) {
  const std::string full = gen_and_train("r", "--schedule 1x4:2,2x4:3");
  ASSERT_EQ(run("train " + conf() + " --seed 5 --data " + path("r_data") + " --out " + path("part") +
                " --schedule 1x4:2,2x4:3 --max-steps 3").code, 0);
  EXPECT_TRUE(fs::exists(dir / "part/step3.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "part/final.ckpt"));
  const Result r = run("train " + conf() + " --seed 5 --data " + path("r_data") + " --out " + path("part") +
                       " --schedule 1x4:2,2x4:3 --resume " + path("part/step3.ckpt"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(dir / "part/final.ckpt"), read_file(fs::path(full) / "final.ckpt"));
}

TEST_F(Cli, EmbedWritesOneLinePerItem) {
  const std::string run_dir = gen_and_train("m");
  ASSERT_EQ(run("embed " + conf() + " --data " + path("m_data") + " --checkpoint " + run_dir + "/final.ckpt --out " +
                path("emb")).code, 0);
  EXPECT_EQ(count(read_file(dir / "emb/text_embeddings.jsonl"), "\n"), 8u);
  EXPECT_EQ(count(read_file(dir / "emb/video_embeddings.jsonl"), "\n"), 8u);
}

TEST_F(Cli, GradcheckExitCodes) {
  const Result pass = run("gradcheck --op layer_norm");
  EXPECT_EQ(pass.code, 0) << pass.out;
  EXPECT_EQ(run("gradcheck --op layer_norm --tol 1e-14").code, 1);
  EXPECT_EQ(run("gradcheck --op no_such_op").code, 2);
  const Result full = run("gradcheck --out " + path("gc"));
  EXPECT_EQ(full.code, 0) << full.out;
  const auto j = nlohmann::json::parse(read_file(dir / "gc/gradcheck.json"));
  EXPECT_TRUE(j.is_object());
  EXPECT_EQ(run("gradcheck --tol 1e-12").code, 1);
}
