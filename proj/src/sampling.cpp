#include "vtr/sampling.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>
#include <sstream>

#include "vtr/errors.hpp"

namespace vtr {

namespace {

void check_lengths(std::size_t length, std::size_t frames) {
  if (frames == 0) throw ContractError("frame sampling: M must be at least 1");
  if (length < frames) {
    throw ContractError("frame sampling: clip has " + std::to_string(length) + " frames but " +
                        std::to_string(frames) + " are requested; pad the clip first");
  }
}

}  // namespace

std::size_t segment_begin(std::size_t length, std::size_t frames, std::size_t k) { return k * length / frames; }

std::vector<std::size_t> sample_training_frames(std::size_t length, std::size_t frames, SeededRng& rng) {
  check_lengths(length, frames);
  std::vector<std::size_t> picks(frames);
  for (std::size_t k = 0; k < frames; ++k) {
    const std::size_t lo = segment_begin(length, frames, k), hi = segment_begin(length, frames, k + 1);
    picks[k] = lo + static_cast<std::size_t>(rng.uniform_int(hi - lo));
  }
  return picks;
}

std::vector<std::vector<std::size_t>> sample_test_frames(std::size_t length, std::size_t frames, std::size_t stride) {
  check_lengths(length, frames);
  if (stride == 0) throw ContractError("frame sampling: stride must be at least 1");
  std::size_t shortest = length;
  for (std::size_t k = 0; k < frames; ++k)
    shortest = std::min(shortest, segment_begin(length, frames, k + 1) - segment_begin(length, frames, k));
  std::vector<std::vector<std::size_t>> passes;
  for (std::size_t offset = 0; offset < shortest; offset += stride) {
    std::vector<std::size_t> picks(frames);
    for (std::size_t k = 0; k < frames; ++k) {
      const std::size_t lo = segment_begin(length, frames, k), hi = segment_begin(length, frames, k + 1);
      picks[k] = std::min(lo + offset, hi - 1);
    }
    passes.push_back(std::move(picks));
  }
  return passes;
}

void CurriculumSchedule::validate() const {
  if (stages.empty()) throw ConfigError("schedule: at least one stage is required");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    if (s.frames == 0) throw ConfigError("schedule: stage " + std::to_string(i) + " has zero frames");
    if (s.steps == 0) throw ConfigError("schedule: stage " + std::to_string(i) + " has zero steps");
    if (s.batch_size == 0) throw ConfigError("schedule: stage " + std::to_string(i) + " has zero batch size");
    if (i > 0 && s.frames < stages[i - 1].frames) {
      throw ConfigError("schedule: frame counts must not decrease (stage " + std::to_string(i) + ")");
    }
  }
}

std::size_t CurriculumSchedule::total_steps() const {
  std::size_t n = 0;
  for (const auto& s : stages) n += s.steps;
  return n;
}

std::size_t CurriculumSchedule::max_frames() const {
  std::size_t m = 0;
  for (const auto& s : stages) m = std::max(m, s.frames);
  return m;
}

std::size_t default_batch_for_frames(std::size_t frames) {
  if (frames <= 1) return 96;
  if (frames <= 4) return 24;
  return 16;
}

namespace {

std::size_t parse_count(std::string_view text, std::string_view what, std::string_view item) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc{} || ptr != end) {
    throw ConfigError("schedule: bad " + std::string(what) + " in stage '" + std::string(item) + "'");
  }
  return value;
}

}  // namespace

CurriculumSchedule CurriculumSchedule::parse(std::string_view text, std::size_t default_steps,
                                             std::size_t default_batch, ExpansionMethod expansion) {
  CurriculumSchedule schedule;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string_view::npos ? text.npos : comma - start);
    if (item.empty()) throw ConfigError("schedule: empty stage in '" + std::string(text) + "'");
    CurriculumStage stage;
    stage.expansion = expansion;
    auto head = item;
    if (const auto colon = item.find(':'); colon != std::string_view::npos) {
      stage.steps = parse_count(item.substr(colon + 1), "step count", item);
      head = item.substr(0, colon);
    } else {
      stage.steps = default_steps;
    }
    if (const auto x = head.find('x'); x != std::string_view::npos) {
      stage.batch_size = parse_count(head.substr(x + 1), "batch size", item);
      head = head.substr(0, x);
      stage.frames = parse_count(head, "frame count", item);
    } else {
      stage.frames = parse_count(head, "frame count", item);
      stage.batch_size = default_batch > 0 ? default_batch : default_batch_for_frames(stage.frames);
    }
    schedule.stages.push_back(stage);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  schedule.validate();
  return schedule;
}

std::string CurriculumSchedule::to_string() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i) out << ',';
    out << stages[i].frames << 'x' << stages[i].batch_size << ':' << stages[i].steps;
  }
  return out.str();
}

void ComputeLedger::add(std::size_t stage, std::uint64_t tokens) {
  if (patch_tokens.size() <= stage) patch_tokens.resize(stage + 1, 0);
  patch_tokens[stage] += tokens;
}

std::uint64_t ComputeLedger::total() const {
  return std::accumulate(patch_tokens.begin(), patch_tokens.end(), std::uint64_t{0});
}

std::uint64_t planned_patch_tokens(const CurriculumSchedule& schedule, std::size_t patches_per_frame) {
  std::uint64_t total = 0;
  for (const auto& s : schedule.stages)
    total += static_cast<std::uint64_t>(s.steps) * s.batch_size * s.frames * patches_per_frame;
  return total;
}

ExpansionEvent curriculum_advance(CurriculumState& state, const CurriculumSchedule& schedule, RetrievalModel& model,
                                  AdamState& adam) {
  if (state.stage + 1 >= schedule.stages.size()) {
    throw ContractError("curriculum_advance: no stage after " + std::to_string(state.stage));
  }
  const auto& next = schedule.stages[state.stage + 1];
  ExpansionEvent event;
  event.from_stage = state.stage;
  event.to_stage = state.stage + 1;
  event.from_frames = model.temporal_capacity();
  event.to_frames = std::max(next.frames, event.from_frames);
  event.method = next.expansion;
  if (event.to_frames > event.from_frames) {
    model.expand_temporal(event.to_frames, next.expansion);
    adam.reset("video.time_embed");
    event.expanded = true;
  }
  state.stage = event.to_stage;
  return event;
}

BatchStream::BatchStream(std::size_t image_count, std::size_t video_count, BatchPlan plan, std::uint64_t seed)
    : image_count_(image_count), video_count_(video_count), plan_(plan), seed_(seed) {
  if (!plan_.use_images && !plan_.use_videos) throw ConfigError("batch plan: both sources disabled");
  if (plan_.use_images && image_count_ == 0) throw ConfigError("batch plan: image source is empty");
  if (plan_.use_videos && video_count_ == 0) throw ConfigError("batch plan: video source is empty");
  if ((plan_.use_images && plan_.image_batch == 0) || (plan_.use_videos && plan_.video_batch == 0)) {
    throw ConfigError("batch plan: batch sizes must be positive");
  }
}

BatchSource BatchStream::peek_source() const {
  if (!plan_.use_images) return BatchSource::kVideo;
  if (!plan_.use_videos) return BatchSource::kImage;
  return state_.turn % 2 == 0 ? BatchSource::kImage : BatchSource::kVideo;
}

std::size_t BatchStream::draw(BatchSource source, std::uint64_t& cursor, std::size_t count) {
  const auto slot = static_cast<std::size_t>(source);
  const std::uint64_t epoch = cursor / count;
  if (cached_epoch_[slot] != epoch) {
    auto& order = order_cache_[slot];
    order.resize(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SeededRng rng = SeededRng(seed_).fork(slot * 0x10000000ULL + epoch);
    rng.shuffle(std::span<std::size_t>(order));
    cached_epoch_[slot] = epoch;
  }
  return order_cache_[slot][cursor++ % count];
}

Batch BatchStream::next() {
  Batch batch;
  batch.source = peek_source();
  if (batch.source == BatchSource::kImage) {
    for (std::size_t i = 0; i < plan_.image_batch; ++i)
      batch.indices.push_back(draw(BatchSource::kImage, state_.image_cursor, image_count_));
  } else {
    for (std::size_t i = 0; i < plan_.video_batch; ++i)
      batch.indices.push_back(draw(BatchSource::kVideo, state_.video_cursor, video_count_));
  }
  ++state_.turn;
  return batch;
}

std::uint64_t BatchStream::video_epoch() const { return video_count_ ? state_.video_cursor / video_count_ : 0; }

}  // namespace vtr
