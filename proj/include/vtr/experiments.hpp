#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vtr/config.hpp"
#include "vtr/retrieval.hpp"

namespace vtr {

// Small model and optimizer settings under which every ablation arm trains
// in well under a minute on one core.
RunConfig desk_profile();

// One training recipe. The base config supplies everything not named here.
struct ArmSpec {
  std::string name;
  std::string schedule;  // "FxB:S,..."
  ExpansionMethod expansion = ExpansionMethod::kZeroPad;
  AttentionStyle style = AttentionStyle::kFrozenModified;
};

struct ArmResult {
  std::string arm;
  std::uint64_t seed = 0;
  std::size_t eval_frames = 0;
  RetrievalReport t2v;  // on the held-out test split
  std::uint64_t patch_tokens = 0;
  std::uint64_t steps = 0;
  std::size_t expansions = 0;
  double train_seconds = 0.0;
  double final_loss = 0.0;
};

struct ArmSummary {
  std::string arm;
  std::vector<ArmResult> runs;
  double median_r1 = 0.0;
  double median_gmean = 0.0;
  double median_tokens = 0.0;
};

double median(std::vector<double> values);
ArmSummary summarize(const std::string& arm, std::vector<ArmResult> runs);

// Named groups of arms: "frames", "curriculum", "expansion", "attention".
std::vector<std::string> ablation_names();
std::vector<ArmSpec> ablation_arms(const std::string& name);

// Trains one arm on a corpus generated from the run seed, then evaluates on
// the test split with as many frames as the last stage used. Identical
// (recipe, seed) pairs are trained once per runner.
class ExperimentRunner {
 public:
  explicit ExperimentRunner(RunConfig base = desk_profile());

  const RunConfig& base() const { return base_; }
  const ArmResult& run(const ArmSpec& arm, std::uint64_t seed);
  ArmSummary run_seeds(const ArmSpec& arm, const std::vector<std::uint64_t>& seeds);

  std::size_t trained() const { return trained_; }
  bool verbose = false;

 private:
  std::string cache_key(const ArmSpec& arm, std::uint64_t seed) const;

  RunConfig base_;
  std::map<std::string, ArmResult> cache_;
  std::size_t trained_ = 0;
};

std::string arm_result_json(const ArmResult& result);
std::string summary_table(const std::vector<ArmSummary>& summaries);

// Trains on the corpus of `source_seed` and evaluates, without further
// updates, on the test split of the corpus generated from `target_seed`.
struct ZeroShotResult {
  RetrievalReport source;
  RetrievalReport target;
};
ZeroShotResult zero_shot_protocol(const RunConfig& config, std::uint64_t source_seed, std::uint64_t target_seed);

}  // namespace vtr
