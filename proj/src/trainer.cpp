#include "vtr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <json.hpp>

#include "vtr/errors.hpp"

namespace vtr {

TrainingData load_training_data(const DataConfig& data, bool with_images, bool with_val) {
  TrainingData out;
  out.vocab = Vocabulary::load(data.path(data.vocab));
  out.videos = load_samples(data.path(data.train));
  if (out.videos.empty()) throw ConfigError("training manifest " + data.path(data.train).string() + " is empty");
  if (with_images) out.images = load_samples(data.path(data.images));
  if (with_val) out.val = load_samples(data.path(data.val));
  return out;
}

TrainingData training_data_from_corpus(const SyntheticCorpus& corpus) {
  TrainingData out;
  out.vocab = corpus_vocabulary(corpus);
  for (const auto& item : corpus.train) out.videos.push_back(item.sample);
  for (const auto& item : corpus.images) out.images.push_back(item.sample);
  for (const auto& item : corpus.val) out.val.push_back(item.sample);
  return out;
}

TrainerOptions trainer_options(const RunConfig& config) {
  TrainerOptions o;
  o.schedule = config.curriculum();
  o.adam = config.train.adam;
  o.joint = config.schedule.joint;
  o.image_batch = config.schedule.image_batch;
  o.log_every = config.train.log_every;
  o.eval_every_epochs = config.train.eval_every_epochs;
  o.eval_stride = config.eval.stride;
  o.caption_min = config.train.caption_min;
  o.caption_max = config.train.caption_max;
  o.seed = config.seed;
  o.out_dir = config.out;
  return o;
}

std::string metric_json(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["stage"] = r.stage;
  j["loss"] = r.loss;
  j["wall_ms"] = r.wall_ms;
  j["patch_tokens_cum"] = r.patch_tokens_cum;
  j["source"] = r.source == BatchSource::kImage ? "I" : "V";
  j["frames"] = r.frames;
  return j.dump();
}

namespace {

BatchPlan make_plan(const TrainerOptions& o) {
  o.schedule.validate();
  BatchPlan plan;
  plan.use_images = o.joint;
  plan.use_videos = true;
  plan.image_batch = o.image_batch;
  plan.video_batch = o.schedule.stages.front().batch_size;
  return plan;
}

}  // namespace

Trainer::Trainer(RetrievalModel& model, const TrainingData& data, TrainerOptions options)
    : model_(model),
      data_(data),
      options_(std::move(options)),
      adam_(options_.adam),
      stream_(data.images.size(), data.videos.size(), make_plan(options_), mix64(options_.seed ^ 0x5eedba7c4ULL)) {
  if (options_.log_every == 0) throw ConfigError("trainer: log_every must be positive");
  if (options_.caption_min == 0 || options_.caption_min > options_.caption_max) {
    throw ConfigError("trainer: caption range must satisfy 1 <= min <= max");
  }
  const std::size_t first = options_.schedule.stages.front().frames;
  if (model_.temporal_capacity() < first) {
    throw CapacityError("trainer: the first stage uses " + std::to_string(first) +
                        " frames but the model covers " + std::to_string(model_.temporal_capacity()));
  }
  if (options_.schedule.max_frames() > model_.config().video.frames_max) {
    throw CapacityError("trainer: schedule needs " + std::to_string(options_.schedule.max_frames()) +
                        " frames but frames_max is " + std::to_string(model_.config().video.frames_max));
  }
}

void Trainer::resume(const Checkpoint& ckpt) {
  const auto& s = ckpt.state;
  if (s.stage >= options_.schedule.stages.size()) {
    throw ConfigError("trainer: checkpoint stage " + std::to_string(s.stage) + " is not in the schedule");
  }
  restore_model(ckpt, model_);
  restore_optimizer(ckpt, adam_);
  stream_.restore(s.stream);
  stream_.set_video_batch(options_.schedule.stages[s.stage].batch_size);
  curriculum_.stage = s.stage;
  curriculum_.ledger.patch_tokens = s.ledger;
  global_step_ = s.global_step;
  resumed_ = true;
}

std::uint64_t Trainer::stage_end(std::size_t stage) const {
  std::uint64_t end = 0;
  for (std::size_t i = 0; i <= stage; ++i) end += options_.schedule.stages[i].steps;
  return end;
}

void Trainer::maybe_advance() {
  const auto& stages = options_.schedule.stages;
  while (curriculum_.stage + 1 < stages.size() && global_step_ >= stage_end(curriculum_.stage)) {
    const ExpansionEvent e = curriculum_advance(curriculum_, options_.schedule, model_, adam_);
    stream_.set_video_batch(stages[curriculum_.stage].batch_size);
    events_.push_back(e);
    log_line("expansion: stage " + std::to_string(e.from_stage) + " -> " + std::to_string(e.to_stage) +
             ", frames " + std::to_string(e.from_frames) + " -> " + std::to_string(e.to_frames) + ", method " +
             to_string(e.method) + (e.expanded ? "" : " (no change)") + " at step " + std::to_string(global_step_));
  }
}

MetricRecord Trainer::step() {
  if (done()) throw ContractError("trainer: schedule already finished");
  maybe_advance();
  const auto step_start = std::chrono::steady_clock::now();
  const auto& stage = options_.schedule.stages[curriculum_.stage];
  SeededRng rng = SeededRng(options_.seed).fork(global_step_);
  const Batch batch = stream_.next();
  const bool images = batch.source == BatchSource::kImage;
  const std::size_t frames = images ? 1 : stage.frames;
  const auto& pool = images ? data_.images : data_.videos;

  std::vector<Tensor> clips;
  std::vector<TokenSequence> captions;
  clips.reserve(batch.indices.size());
  captions.reserve(batch.indices.size());
  for (std::size_t idx : batch.indices) {
    const ClipSample& sample = pool[idx];
    const Tensor clip = pad_short_clip(sample.clip, frames);
    clips.push_back(select_frames(clip, sample_training_frames(clip.dim(0), frames, rng)));
    captions.push_back(tokenize(concat_captions(sample.record, options_.caption_min, options_.caption_max, rng),
                                data_.vocab, model_.config().text.max_len));
  }

  Tape tape;
  const Tensor loss = model_.loss(tape, clips, captions);
  const ParamList params = model_.parameters();
  zero_grads(params);
  tape.backward(loss);
  adam_.step(params);

  const std::uint64_t tokens =
      static_cast<std::uint64_t>(clips.size()) * frames * model_.config().video.patches_per_frame();
  curriculum_.ledger.add(curriculum_.stage, tokens);

  MetricRecord r;
  r.step = global_step_;
  r.stage = curriculum_.stage;
  r.source = batch.source;
  r.frames = frames;
  r.loss = loss.item();
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - step_start).count();
  r.patch_tokens_cum = curriculum_.ledger.total();
  ++global_step_;
  metrics_.push_back(r);
  return r;
}

void Trainer::note_file(const std::string& name) {
  if (std::find(produced_.begin(), produced_.end(), name) == produced_.end()) produced_.push_back(name);
}

void Trainer::log_line(const std::string& line) {
  if (options_.echo) *options_.echo << line << '\n';
  if (options_.out_dir.empty()) return;
  if (!log_out_.is_open()) {
    log_out_.open(options_.out_dir / "train.log", std::ios::app);
    if (!log_out_) throw IoError("cannot write " + (options_.out_dir / "train.log").string());
    note_file("train.log");
  }
  log_out_ << line << '\n';
  log_out_.flush();
}

void Trainer::write_checkpoint(const std::string& name) {
  if (options_.out_dir.empty()) return;
  save_checkpoint(options_.out_dir / name, checkpoint());
  note_file(name);
  log_line("checkpoint " + name + " at step " + std::to_string(global_step_));
}

void Trainer::validate_epoch(std::uint64_t epoch) {
  if (options_.eval_every_epochs == 0 || data_.val.empty() || epoch % options_.eval_every_epochs != 0) return;
  EvalOptions eo;
  eo.frames = options_.schedule.stages[curriculum_.stage].frames;
  eo.stride = options_.eval_stride;
  eo.seed = options_.seed;
  auto reports = evaluate(model_, data_.val, data_.vocab, eo, EvalDirection::kTextToVideo);
  ValidationRecord v{epoch, global_step_, eo.frames, reports.front()};
  validation_.push_back(v);
  char line[200];
  std::snprintf(line, sizeof line, "val epoch %llu step %llu frames %zu: R@1 %.1f R@5 %.1f R@10 %.1f MedR %.1f",
                static_cast<unsigned long long>(epoch), static_cast<unsigned long long>(global_step_), eo.frames,
                v.report.r1, v.report.r5, v.report.r10, v.report.medr);
  log_line(line);
  if (!options_.out_dir.empty()) {
    std::ofstream out(options_.out_dir / "val.jsonl", std::ios::app);
    if (!out) throw IoError("cannot write " + (options_.out_dir / "val.jsonl").string());
    nlohmann::ordered_json j = nlohmann::ordered_json::parse(report_json(v.report));
    j["epoch"] = epoch;
    j["step"] = global_step_;
    j["frames"] = eo.frames;
    out << j.dump() << '\n';
    note_file("val.jsonl");
  }
}

void Trainer::run(std::uint64_t max_steps) {
  if (!options_.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(options_.out_dir, ec);
    if (ec) throw IoError("cannot create " + options_.out_dir.string() + ": " + ec.message());
    if (!metrics_out_.is_open()) {
      // A fresh run starts its logs over; a resumed run appends.
      if (!resumed_) {
        for (const char* name : {"metrics.jsonl", "train.log", "val.jsonl"}) std::filesystem::remove(options_.out_dir / name, ec);
      }
      metrics_out_.open(options_.out_dir / "metrics.jsonl", std::ios::app);
      if (!metrics_out_) throw IoError("cannot write " + (options_.out_dir / "metrics.jsonl").string());
      note_file("metrics.jsonl");
    }
  }
  const auto& stages = options_.schedule.stages;
  for (std::uint64_t n = 0; n < max_steps && !done(); ++n) {
    const std::uint64_t epoch_before = stream_.video_epoch();
    const MetricRecord r = step();
    if (r.step % options_.log_every == 0 || done()) {
      if (metrics_out_.is_open()) metrics_out_ << metric_json(r) << '\n';
      char line[160];
      std::snprintf(line, sizeof line, "step %llu stage %zu [%c] frames %zu loss %.6f tokens %llu",
                    static_cast<unsigned long long>(r.step), r.stage, r.source == BatchSource::kImage ? 'I' : 'V',
                    r.frames, r.loss, static_cast<unsigned long long>(r.patch_tokens_cum));
      log_line(line);
    }
    if (stream_.video_epoch() > epoch_before) validate_epoch(stream_.video_epoch());
    if (!done() && curriculum_.stage + 1 < stages.size() && global_step_ == stage_end(curriculum_.stage)) {
      write_checkpoint("stage" + std::to_string(curriculum_.stage) + ".ckpt");
    }
  }
  if (metrics_out_.is_open()) metrics_out_.flush();
  if (done() && !options_.out_dir.empty()) {
    write_checkpoint("final.ckpt");
    nlohmann::ordered_json j;
    j["patch_tokens_per_stage"] = curriculum_.ledger.patch_tokens;
    j["patch_tokens_total"] = curriculum_.ledger.total();
    j["planned_patch_tokens"] =
        planned_patch_tokens(options_.schedule, model_.config().video.patches_per_frame());
    j["schedule"] = options_.schedule.to_string();
    std::ofstream out(options_.out_dir / "ledger.json");
    if (!out) throw IoError("cannot write " + (options_.out_dir / "ledger.json").string());
    out << j.dump(2) << '\n';
    note_file("ledger.json");
  }
}

TrainingState Trainer::state() const {
  TrainingState s;
  s.global_step = global_step_;
  s.stage = curriculum_.stage;
  s.rng_seed = options_.seed;
  s.rng_counter = global_step_;
  s.adam_step = adam_.step_count();
  s.stream = stream_.state();
  s.ledger = curriculum_.ledger.patch_tokens;
  return s;
}

Checkpoint Trainer::checkpoint() const { return make_checkpoint(model_, &adam_, &data_.vocab, state()); }

}  // namespace vtr
