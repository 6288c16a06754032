#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vtr/checkpoint.hpp"
#include "vtr/config.hpp"
#include "vtr/data_synth.hpp"
#include "vtr/retrieval.hpp"
#include "vtr/sampling.hpp"

namespace vtr {

struct TrainingData {
  std::vector<ClipSample> videos;
  std::vector<ClipSample> images;  // only needed for joint training
  std::vector<ClipSample> val;     // only needed for validation during training
  Vocabulary vocab;
};

// Reads the manifests and vocabulary named by `data`.
TrainingData load_training_data(const DataConfig& data, bool with_images, bool with_val);

// Builds the same data in memory from a generated corpus.
TrainingData training_data_from_corpus(const SyntheticCorpus& corpus);

struct TrainerOptions {
  CurriculumSchedule schedule;
  AdamConfig adam;
  bool joint = false;
  std::size_t image_batch = 96;
  std::size_t log_every = 1;
  std::size_t eval_every_epochs = 0;
  std::size_t eval_stride = 2;
  std::size_t caption_min = 1;
  std::size_t caption_max = 1;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;  // empty: nothing is written
  std::ostream* echo = nullptr;   // receives a copy of every log line
};

TrainerOptions trainer_options(const RunConfig& config);

struct MetricRecord {
  std::uint64_t step = 0;
  std::size_t stage = 0;
  BatchSource source = BatchSource::kVideo;
  std::size_t frames = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
  std::uint64_t patch_tokens_cum = 0;
};

std::string metric_json(const MetricRecord& record);

struct ValidationRecord {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  std::size_t frames = 0;
  RetrievalReport report;  // t2v on the validation split
};

// One training run: alternating or pure-video batches, staged frame counts
// with temporal expansion at stage boundaries, Adam updates.
//
// Per-step randomness (frame picks, caption picks) comes from a generator
// forked from (seed, global step) and batch order from per-epoch shuffles,
// so a run resumed from any checkpoint replays the uninterrupted run exactly.
class Trainer {
 public:
  Trainer(RetrievalModel& model, const TrainingData& data, TrainerOptions options);

  // Loads parameters, optimizer moments and loop state.
  void resume(const Checkpoint& ckpt);

  bool done() const { return global_step_ >= options_.schedule.total_steps(); }
  std::uint64_t global_step() const { return global_step_; }
  std::size_t stage() const { return curriculum_.stage; }

  // One optimizer step, preceded by a stage transition when the previous
  // stage's budget is spent.
  MetricRecord step();

  // Steps until the schedule is exhausted or `max_steps` more steps ran.
  // Writes metrics, validation records, stage-boundary and final checkpoints
  // under out_dir when it is set.
  void run(std::uint64_t max_steps = UINT64_MAX);

  TrainingState state() const;
  Checkpoint checkpoint() const;
  const ComputeLedger& ledger() const { return curriculum_.ledger; }
  const std::vector<MetricRecord>& metrics() const { return metrics_; }
  const std::vector<ExpansionEvent>& events() const { return events_; }
  const std::vector<ValidationRecord>& validation() const { return validation_; }
  // Files written under out_dir, relative to it.
  const std::vector<std::string>& produced() const { return produced_; }

 private:
  std::uint64_t stage_end(std::size_t stage) const;
  void maybe_advance();
  void validate_epoch(std::uint64_t epoch);
  void write_checkpoint(const std::string& name);
  void log_line(const std::string& line);
  void note_file(const std::string& name);

  RetrievalModel& model_;
  const TrainingData& data_;
  TrainerOptions options_;
  AdamState adam_;
  BatchStream stream_;
  CurriculumState curriculum_;
  std::uint64_t global_step_ = 0;
  std::vector<MetricRecord> metrics_;
  std::vector<ExpansionEvent> events_;
  std::vector<ValidationRecord> validation_;
  std::vector<std::string> produced_;
  std::ofstream metrics_out_;
  std::ofstream log_out_;
  bool resumed_ = false;
};

}  // namespace vtr
