#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vtr/model.hpp"
#include "vtr/optimizer.hpp"
#include "vtr/rng.hpp"

namespace vtr {

// Segment k of a length-L clip split into M parts covers [floor(kL/M), floor((k+1)L/M)).
std::size_t segment_begin(std::size_t length, std::size_t frames, std::size_t k);

// One uniform pick per segment; strictly increasing.
std::vector<std::size_t> sample_training_frames(std::size_t length, std::size_t frames, SeededRng& rng);

// Pass j takes offset j*stride inside every segment (clamped to the segment's
// last frame); passes continue while the offset is below the shortest segment.
std::vector<std::vector<std::size_t>> sample_test_frames(std::size_t length, std::size_t frames, std::size_t stride);

struct CurriculumStage {
  std::size_t frames = 1;
  std::size_t steps = 1;
  std::size_t batch_size = 16;
  ExpansionMethod expansion = ExpansionMethod::kZeroPad;

  friend bool operator==(const CurriculumStage&, const CurriculumStage&) = default;
};

struct CurriculumSchedule {
  std::vector<CurriculumStage> stages;

  void validate() const;
  std::size_t total_steps() const;
  std::size_t max_frames() const;

  // "FxB:S,FxB:S,..." where the batch (xB) and step (:S) parts are optional and
  // fall back to the given defaults. Example: "1x96:500,4x24:500,8x16:500".
  static CurriculumSchedule parse(std::string_view text, std::size_t default_steps, std::size_t default_batch,
                                  ExpansionMethod expansion);
  std::string to_string() const;
};

// Per-frame-count batch sizes 96 / 24 / 16 for 1 / 4 / 8 frames.
std::size_t default_batch_for_frames(std::size_t frames);

// Patch tokens consumed per stage.
struct ComputeLedger {
  std::vector<std::uint64_t> patch_tokens;

  void add(std::size_t stage, std::uint64_t tokens);
  std::uint64_t total() const;
};

// Patch tokens a schedule will consume: steps * batch * frames * N, summed.
std::uint64_t planned_patch_tokens(const CurriculumSchedule& schedule, std::size_t patches_per_frame);

struct CurriculumState {
  std::size_t stage = 0;
  ComputeLedger ledger;
};

struct ExpansionEvent {
  std::size_t from_stage = 0;
  std::size_t to_stage = 0;
  std::size_t from_frames = 0;
  std::size_t to_frames = 0;
  ExpansionMethod method = ExpansionMethod::kZeroPad;
  bool expanded = false;
};

// Moves to the next stage: grows the temporal embeddings to the stage's frame
// count with its expansion method and clears the Adam moments of that table.
// Other moments are kept.
ExpansionEvent curriculum_advance(CurriculumState& state, const CurriculumSchedule& schedule, RetrievalModel& model,
                                  AdamState& adam);

enum class BatchSource { kImage, kVideo };

struct BatchPlan {
  bool use_images = false;
  bool use_videos = true;
  std::size_t image_batch = 96;
  std::size_t video_batch = 24;
};

struct Batch {
  BatchSource source = BatchSource::kVideo;
  std::vector<std::size_t> indices;
};

// Strict image/video alternation starting with images when both sources are
// enabled. Each source walks its own per-epoch shuffled order; epoch e of a
// source is shuffled by a generator forked from (seed, source, e).
class BatchStream {
 public:
  struct State {
    std::uint64_t image_cursor = 0;
    std::uint64_t video_cursor = 0;
    std::uint64_t turn = 0;
    friend bool operator==(const State&, const State&) = default;
  };

  BatchStream(std::size_t image_count, std::size_t video_count, BatchPlan plan, std::uint64_t seed);

  Batch next();
  BatchSource peek_source() const;

  const BatchPlan& plan() const { return plan_; }
  void set_video_batch(std::size_t size) { plan_.video_batch = size; }
  std::uint64_t video_epoch() const;

  const State& state() const { return state_; }
  void restore(const State& state) { state_ = state; }

 private:
  std::size_t draw(BatchSource source, std::uint64_t& cursor, std::size_t count);

  std::size_t image_count_;
  std::size_t video_count_;
  BatchPlan plan_;
  std::uint64_t seed_;
  State state_;
  std::vector<std::size_t> order_cache_[2];
  std::uint64_t cached_epoch_[2] = {UINT64_MAX, UINT64_MAX};
};

}  // namespace vtr
