#include "vtr/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "vtr/errors.hpp"
#include "vtr/trainer.hpp"

namespace vtr {

RunConfig desk_profile() {
  RunConfig c;
  auto& v = c.model.video;
  v.frames_max = 8;
  v.height = 32;
  v.width = 32;
  v.patch = 16;
  v.embed_dim = 32;
  v.heads = 2;
  v.blocks = 1;
  // At 0.02 the left/right embeddings start nearly identical and training
  // stalls on a symmetric plateau near 50% R@1.
  v.init_std = 0.1;
  auto& t = c.model.text;
  t.max_len = 12;
  t.embed_dim = 32;
  t.heads = 2;
  t.blocks = 1;
  t.init_std = 0.1;
  c.model.dual.common_dim = 32;
  c.train.adam.lr = 1e-3;
  c.train.eval_every_epochs = 0;
  c.schedule.stages = "4x24:1000";
  c.eval.stride = 2;
  c.eval.direction = EvalDirection::kTextToVideo;
  c.seed = 1;
  return c;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median: no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

ArmSummary summarize(const std::string& arm, std::vector<ArmResult> runs) {
  ArmSummary s;
  s.arm = arm;
  std::vector<double> r1, gm, tok;
  for (const auto& r : runs) {
    r1.push_back(r.t2v.r1);
    gm.push_back(r.t2v.gmean);
    tok.push_back(static_cast<double>(r.patch_tokens));
  }
  s.median_r1 = median(r1);
  s.median_gmean = median(gm);
  s.median_tokens = median(tok);
  s.runs = std::move(runs);
  return s;
}

std::vector<std::string> ablation_names() {
  return {"frames", "curriculum", "expansion", "expansion-from-1", "attention"};
}

std::vector<ArmSpec> ablation_arms(const std::string& name) {
  const std::string one_to_four = "1x24:500,4x24:500";
  const std::string two_to_four = "2x24:500,4x24:500";
  auto methods = [](const std::string& schedule) {
    return std::vector<ArmSpec>{{"zero_pad", schedule, ExpansionMethod::kZeroPad},
                                {"nearest", schedule, ExpansionMethod::kNearest},
                                {"bilinear", schedule, ExpansionMethod::kBilinear}};
  };
  if (name == "frames") return {{"1-frame", "1x24:1000"}, {"4-frame", "4x24:1000"}};
  if (name == "curriculum") return {{"4-scratch", "4x24:1000"}, {"1=>4", one_to_four}};
  if (name == "expansion") return methods(two_to_four);
  // From a single row, nearest and bilinear copy it into every slot and the
  // frames start out interchangeable.
  if (name == "expansion-from-1") return methods(one_to_four);
  if (name == "attention") {
    return {{"frozen", "4x24:1000", ExpansionMethod::kZeroPad, AttentionStyle::kFrozenModified},
            {"original", "4x24:1000", ExpansionMethod::kZeroPad, AttentionStyle::kOriginalDivided}};
  }
  throw ConfigError("unknown ablation '" + name + "'");
}

ExperimentRunner::ExperimentRunner(RunConfig base) : base_(std::move(base)) {}

std::string ExperimentRunner::cache_key(const ArmSpec& arm, std::uint64_t seed) const {
  const CurriculumSchedule s = CurriculumSchedule::parse(arm.schedule, 500, 24, arm.expansion);
  // The expansion method only matters when a stage boundary exists.
  const std::string method = s.stages.size() > 1 ? to_string(arm.expansion) : "-";
  return s.to_string() + "|" + method + "|" + to_string(arm.style) + "|" + std::to_string(seed);
}

const ArmResult& ExperimentRunner::run(const ArmSpec& arm, std::uint64_t seed) {
  const std::string key = cache_key(arm, seed);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;

  RunConfig config = base_;
  config.schedule.stages = arm.schedule;
  config.schedule.expansion = arm.expansion;
  config.model.video.attention_style = arm.style;
  config.seed = seed;
  config.out.clear();
  config.data.synth.seed = seed;
  const SyntheticCorpus corpus = generate_synthetic(config.data.synth);
  const TrainingData data = training_data_from_corpus(corpus);
  config.model.text.vocab_size = data.vocab.size();
  const CurriculumSchedule schedule = config.curriculum();
  config.eval.frames = schedule.stages.back().frames;
  config.validate();

  RetrievalModel model(config.model, schedule.stages.front().frames, seed);
  TrainerOptions options = trainer_options(config);
  options.eval_every_epochs = 0;
  const auto start = std::chrono::steady_clock::now();
  Trainer trainer(model, data, options);
  trainer.run();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::vector<ClipSample> gallery;
  for (const auto& item : corpus.test) gallery.push_back(item.sample);
  const auto reports = evaluate(model, gallery, data.vocab, eval_options(config.eval, seed), EvalDirection::kTextToVideo);

  ArmResult r;
  r.arm = arm.name;
  r.seed = seed;
  r.eval_frames = config.eval.frames;
  r.t2v = reports.front();
  r.patch_tokens = trainer.ledger().total();
  r.steps = trainer.global_step();
  r.expansions = trainer.events().size();
  r.train_seconds = seconds;
  r.final_loss = trainer.metrics().empty() ? 0.0 : trainer.metrics().back().loss;
  ++trained_;
  if (verbose) {
    std::fprintf(stderr, "  %-10s seed %llu  R@1 %5.1f  gmean %5.1f  tokens %llu  %.1fs\n", arm.name.c_str(),
                 static_cast<unsigned long long>(seed), r.t2v.r1, r.t2v.gmean,
                 static_cast<unsigned long long>(r.patch_tokens), seconds);
  }
  return cache_.emplace(key, std::move(r)).first->second;
}

ArmSummary ExperimentRunner::run_seeds(const ArmSpec& arm, const std::vector<std::uint64_t>& seeds) {
  std::vector<ArmResult> runs;
  for (auto seed : seeds) {
    ArmResult r = run(arm, seed);
    r.arm = arm.name;
    runs.push_back(std::move(r));
  }
  return summarize(arm.name, std::move(runs));
}

std::string arm_result_json(const ArmResult& r) {
  nlohmann::ordered_json j;
  j["arm"] = r.arm;
  j["seed"] = r.seed;
  j["eval_frames"] = r.eval_frames;
  j["r1"] = r.t2v.r1;
  j["r5"] = r.t2v.r5;
  j["r10"] = r.t2v.r10;
  j["medr"] = r.t2v.medr;
  j["gmean"] = r.t2v.gmean;
  j["patch_tokens"] = r.patch_tokens;
  j["steps"] = r.steps;
  j["expansions"] = r.expansions;
  j["train_seconds"] = r.train_seconds;
  j["final_loss"] = r.final_loss;
  return j.dump();
}

std::string summary_table(const std::vector<ArmSummary>& summaries) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << std::left << std::setw(12) << "arm" << std::right << std::setw(7) << "seeds" << std::setw(10) << "med R@1"
     << std::setw(12) << "med gmean" << std::setw(16) << "med tokens" << "\n";
  for (const auto& s : summaries) {
    os << std::left << std::setw(12) << s.arm << std::right << std::setw(7) << s.runs.size() << std::setw(10)
       << s.median_r1 << std::setw(12) << s.median_gmean << std::setw(16) << std::setprecision(0) << s.median_tokens
       << std::setprecision(1) << "\n";
  }
  return os.str();
}

ZeroShotResult zero_shot_protocol(const RunConfig& base, std::uint64_t source_seed, std::uint64_t target_seed) {
  RunConfig config = base;
  config.seed = source_seed;
  config.out.clear();
  config.data.synth.seed = source_seed;
  const SyntheticCorpus source = generate_synthetic(config.data.synth);
  const TrainingData data = training_data_from_corpus(source);
  config.model.text.vocab_size = data.vocab.size();
  config.validate();
  const CurriculumSchedule schedule = config.curriculum();

  RetrievalModel model(config.model, schedule.stages.front().frames, source_seed);
  TrainerOptions options = trainer_options(config);
  options.eval_every_epochs = 0;
  Trainer trainer(model, data, options);
  trainer.run();

  SyntheticSpec target_spec = config.data.synth;
  target_spec.seed = target_seed;
  const SyntheticCorpus target = generate_synthetic(target_spec);
  std::vector<ClipSample> source_gallery, target_gallery;
  for (const auto& item : source.test) source_gallery.push_back(item.sample);
  for (const auto& item : target.test) target_gallery.push_back(item.sample);

  const EvalOptions eval = eval_options(config.eval, source_seed);
  ZeroShotResult out;
  out.source = evaluate(model, source_gallery, data.vocab, eval, EvalDirection::kTextToVideo).front();
  out.target = zero_shot_evaluate(trainer.checkpoint(), target_gallery, eval, EvalDirection::kTextToVideo).front();
  return out;
}

}  // namespace vtr
