#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vtr/checkpoint.hpp"
#include "vtr/config.hpp"
#include "vtr/data_synth.hpp"
#include "vtr/model.hpp"

namespace vtr {

// 1 + #{j : s_j > s_c} + #{j < c : s_j == s_c}
std::size_t rank_of_correct(std::span<const double> scores, std::size_t correct);

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k);
double median_rank(std::span<const std::size_t> ranks);
double gmean_recall(double r1, double r5, double r10);

enum class Direction { kTextToVideo, kVideoToText };
std::string to_string(Direction direction);

// Ranks of the matched item for every query of a [t x v] similarity matrix
// whose diagonal holds the pairs: rows for t2v, columns for v2t.
std::vector<std::size_t> ranks_from_similarity(const Tensor& similarity, Direction direction);

struct RetrievalReport {
  Direction direction = Direction::kTextToVideo;
  std::size_t texts = 0;
  std::size_t videos = 0;
  std::vector<std::size_t> ranks;
  double r1 = 0.0;
  double r5 = 0.0;
  double r10 = 0.0;
  double medr = 0.0;
  double gmean = 0.0;
  std::uint64_t encoder_calls = 0;
  std::size_t passes = 0;
  std::string label;  // "zero-shot" for checkpoint-only evaluation

  static RetrievalReport from_ranks(Direction direction, std::vector<std::size_t> ranks, std::size_t texts,
                                    std::size_t videos);
};

bool operator==(const RetrievalReport& a, const RetrievalReport& b);

struct EvalOptions {
  std::size_t frames = 4;
  std::size_t stride = 2;
  bool paragraph = false;  // concatenate several captions per query
  std::size_t paragraph_min = 2;
  std::size_t paragraph_max = 3;
  std::uint64_t seed = 0;  // paragraph sampling only
  std::size_t chunk = 32;  // clips per encoder batch
};

EvalOptions eval_options(const EvalConfig& config, std::uint64_t seed);

// Text and video embeddings for a gallery where item i pairs caption i with
// clip i. Each caption is encoded once; each clip once per test pass, and the
// projected pass embeddings are averaged and then normalized.
struct GalleryEmbeddings {
  Tensor texts;   // [t x C]
  Tensor videos;  // [v x C]
  std::uint64_t video_passes = 0;  // summed over clips
  std::size_t max_passes = 0;
  EncoderCalls calls;
};

std::vector<std::string> gallery_captions(const std::vector<ClipSample>& gallery, const EvalOptions& options);

GalleryEmbeddings embed_gallery(RetrievalModel& model, const std::vector<ClipSample>& gallery,
                                const std::vector<std::string>& captions, const Vocabulary& vocab,
                                const EvalOptions& options);

// Throws ContractError if the encoder-call counters disagree with t + v * passes.
std::vector<RetrievalReport> evaluate(RetrievalModel& model, const std::vector<ClipSample>& gallery,
                                      const Vocabulary& vocab, const EvalOptions& options, EvalDirection direction);

// evaluate() on a model rebuilt from the checkpoint with no adaptation.
std::vector<RetrievalReport> zero_shot_evaluate(const Checkpoint& ckpt, const std::vector<ClipSample>& gallery,
                                                const EvalOptions& options, EvalDirection direction);

std::string format_report_table(std::span<const RetrievalReport> reports);
// {"direction", "t", "v", "r1", "r5", "r10", "medr", "gmean", "encoder_calls"} plus "passes" and "label".
std::string report_json(const RetrievalReport& report);

}  // namespace vtr
