#include "vtr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "vtr/errors.hpp"
#include "vtr/ops.hpp"
#include "vtr/sampling.hpp"

namespace vtr {

std::size_t rank_of_correct(std::span<const double> scores, std::size_t correct) {
  if (scores.empty()) throw ContractError("rank_of_correct: empty score list");
  if (correct >= scores.size()) {
    throw ContractError("rank_of_correct: index " + std::to_string(correct) + " outside " +
                        std::to_string(scores.size()) + " scores");
  }
  const double target = scores[correct];
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > target || (j < correct && scores[j] == target)) ++rank;
  }
  return rank;
}

double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw ContractError("recall_at_k: no ranks");
  if (k == 0) throw ContractError("recall_at_k: k must be at least 1");
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double median_rank(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw ContractError("median_rank: no ranks");
  std::vector<std::size_t> sorted(ranks.begin(), ranks.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  if (n % 2 == 1) return static_cast<double>(sorted[n / 2]);
  return (static_cast<double>(sorted[n / 2 - 1]) + static_cast<double>(sorted[n / 2])) / 2.0;
}

double gmean_recall(double r1, double r5, double r10) {
  if (r1 < 0.0 || r5 < 0.0 || r10 < 0.0) throw ContractError("gmean_recall: recalls must be non-negative");
  if (r1 == 0.0 || r5 == 0.0 || r10 == 0.0) return 0.0;
  return std::cbrt(r1 * r5 * r10);
}

std::string to_string(Direction direction) { return direction == Direction::kTextToVideo ? "t2v" : "v2t"; }

std::vector<std::size_t> ranks_from_similarity(const Tensor& similarity, Direction direction) {
  if (similarity.rank() != 2 || similarity.dim(0) != similarity.dim(1) || similarity.dim(0) == 0) {
    throw ShapeError("ranks_from_similarity: expected a non-empty square matrix, got " +
                     shape_string(similarity.shape()));
  }
  const std::size_t n = similarity.dim(0);
  std::vector<std::size_t> ranks(n);
  std::vector<double> scores(n);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t j = 0; j < n; ++j)
      scores[j] = direction == Direction::kTextToVideo ? similarity.at(q, j) : similarity.at(j, q);
    ranks[q] = rank_of_correct(scores, q);
  }
  return ranks;
}

RetrievalReport RetrievalReport::from_ranks(Direction direction, std::vector<std::size_t> ranks, std::size_t texts,
                                            std::size_t videos) {
  RetrievalReport r;
  r.direction = direction;
  r.texts = texts;
  r.videos = videos;
  r.r1 = recall_at_k(ranks, 1);
  r.r5 = recall_at_k(ranks, 5);
  r.r10 = recall_at_k(ranks, 10);
  r.medr = median_rank(ranks);
  r.gmean = gmean_recall(r.r1, r.r5, r.r10);
  r.ranks = std::move(ranks);
  return r;
}

bool operator==(const RetrievalReport& a, const RetrievalReport& b) {
  return a.direction == b.direction && a.texts == b.texts && a.videos == b.videos && a.ranks == b.ranks &&
         a.r1 == b.r1 && a.r5 == b.r5 && a.r10 == b.r10 && a.medr == b.medr && a.gmean == b.gmean &&
         a.encoder_calls == b.encoder_calls && a.passes == b.passes && a.label == b.label;
}

EvalOptions eval_options(const EvalConfig& config, std::uint64_t seed) {
  EvalOptions o;
  o.frames = config.frames;
  o.stride = config.stride;
  o.paragraph = config.paragraph;
  o.paragraph_min = config.paragraph_min;
  o.paragraph_max = config.paragraph_max;
  o.seed = seed;
  return o;
}

std::vector<std::string> gallery_captions(const std::vector<ClipSample>& gallery, const EvalOptions& options) {
  std::vector<std::string> out;
  out.reserve(gallery.size());
  SeededRng rng = SeededRng(options.seed).fork(0x7a7a);
  for (const auto& item : gallery) {
    if (item.record.captions.empty()) throw ContractError("gallery item '" + item.record.id + "' has no captions");
    out.push_back(options.paragraph
                      ? concat_captions(item.record, options.paragraph_min, options.paragraph_max, rng)
                      : item.record.captions.front());
  }
  return out;
}

GalleryEmbeddings embed_gallery(RetrievalModel& model, const std::vector<ClipSample>& gallery,
                                const std::vector<std::string>& captions, const Vocabulary& vocab,
                                const EvalOptions& options) {
  if (gallery.empty()) throw ContractError("evaluate: empty gallery");
  if (options.frames == 0 || options.stride == 0 || options.chunk == 0) {
    throw ContractError("evaluate: frames, stride and chunk must be positive");
  }
  if (options.frames > model.temporal_capacity()) {
    throw CapacityError("evaluate: " + std::to_string(options.frames) + " frames requested but the model covers " +
                        std::to_string(model.temporal_capacity()));
  }
  Tape tape = Tape::inference();
  const EncoderCalls before = model.calls();
  GalleryEmbeddings out;

  std::vector<TokenSequence> tokens;
  tokens.reserve(captions.size());
  for (const auto& c : captions) tokens.push_back(tokenize(c, vocab, model.config().text.max_len));
  std::vector<Tensor> text_parts;
  for (std::size_t lo = 0; lo < tokens.size(); lo += options.chunk) {
    const std::size_t hi = std::min(tokens.size(), lo + options.chunk);
    text_parts.push_back(model.project_texts(tape, std::span(tokens).subspan(lo, hi - lo)));
  }
  out.texts = l2_normalize_rows(tape, concat_rows(tape, text_parts));

  const std::size_t v = gallery.size(), c = model.config().dual.common_dim;
  std::vector<Tensor> clips;
  std::vector<std::vector<std::vector<std::size_t>>> passes;
  clips.reserve(v);
  for (const auto& item : gallery) {
    clips.push_back(pad_short_clip(item.clip, options.frames));
    passes.push_back(sample_test_frames(clips.back().dim(0), options.frames, options.stride));
    out.max_passes = std::max(out.max_passes, passes.back().size());
    out.video_passes += passes.back().size();
  }
  std::vector<double> sums(v * c, 0.0);
  for (std::size_t j = 0; j < out.max_passes; ++j) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < v; ++i)
      if (j < passes[i].size()) members.push_back(i);
    for (std::size_t lo = 0; lo < members.size(); lo += options.chunk) {
      const std::size_t hi = std::min(members.size(), lo + options.chunk);
      std::vector<Tensor> batch;
      for (std::size_t k = lo; k < hi; ++k) batch.push_back(select_frames(clips[members[k]], passes[members[k]][j]));
      const Tensor projected = model.project_videos(tape, batch);
      for (std::size_t k = lo; k < hi; ++k)
        for (std::size_t d = 0; d < c; ++d) sums[members[k] * c + d] += projected.at(k - lo, d);
    }
  }
  for (std::size_t i = 0; i < v; ++i) {
    const double n = static_cast<double>(passes[i].size());
    for (std::size_t d = 0; d < c; ++d) sums[i * c + d] /= n;
  }
  out.videos = l2_normalize_rows(tape, Tensor(Shape{v, c}, std::move(sums)));
  out.calls.text = model.calls().text - before.text;
  out.calls.video = model.calls().video - before.video;
  return out;
}

std::vector<RetrievalReport> evaluate(RetrievalModel& model, const std::vector<ClipSample>& gallery,
                                      const Vocabulary& vocab, const EvalOptions& options, EvalDirection direction) {
  const auto captions = gallery_captions(gallery, options);
  const GalleryEmbeddings g = embed_gallery(model, gallery, captions, vocab, options);
  const std::size_t t = captions.size(), v = gallery.size();
  if (g.calls.text != t || g.calls.video != g.video_passes) {
    throw ContractError("evaluate: encoder was invoked " + std::to_string(g.calls.text) + " + " +
                        std::to_string(g.calls.video) + " times, expected " + std::to_string(t) + " + " +
                        std::to_string(g.video_passes));
  }
  Tape tape = Tape::inference();
  const Tensor similarity = similarity_matrix(tape, g.texts, g.videos);
  std::vector<RetrievalReport> reports;
  for (Direction d : {Direction::kTextToVideo, Direction::kVideoToText}) {
    if (direction == EvalDirection::kTextToVideo && d != Direction::kTextToVideo) continue;
    if (direction == EvalDirection::kVideoToText && d != Direction::kVideoToText) continue;
    auto r = RetrievalReport::from_ranks(d, ranks_from_similarity(similarity, d), t, v);
    r.encoder_calls = g.calls.text + g.calls.video;
    r.passes = g.max_passes;
    reports.push_back(std::move(r));
  }
  return reports;
}

std::vector<RetrievalReport> zero_shot_evaluate(const Checkpoint& ckpt, const std::vector<ClipSample>& gallery,
                                                const EvalOptions& options, EvalDirection direction) {
  RetrievalModel model = model_from_checkpoint(ckpt);
  auto reports = evaluate(model, gallery, vocab_from_checkpoint(ckpt), options, direction);
  for (auto& r : reports) r.label = "zero-shot";
  return reports;
}

std::string format_report_table(std::span<const RetrievalReport> reports) {
  std::string out = "dir  label         t     v    R@1    R@5   R@10   MedR  gmean  enc_calls\n";
  char line[160];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-4s %-10s %5zu %5zu %6.1f %6.1f %6.1f %6.1f %6.1f %10llu\n",
                  to_string(r.direction).c_str(), r.label.empty() ? "-" : r.label.c_str(), r.texts, r.videos, r.r1,
                  r.r5, r.r10, r.medr, r.gmean, static_cast<unsigned long long>(r.encoder_calls));
    out += line;
  }
  return out;
}

std::string report_json(const RetrievalReport& r) {
  nlohmann::ordered_json j;
  j["direction"] = to_string(r.direction);
  j["t"] = r.texts;
  j["v"] = r.videos;
  j["r1"] = r.r1;
  j["r5"] = r.r5;
  j["r10"] = r.r10;
  j["medr"] = r.medr;
  j["gmean"] = r.gmean;
  j["encoder_calls"] = r.encoder_calls;
  j["passes"] = r.passes;
  j["label"] = r.label;
  return j.dump();
}

}  // namespace vtr
