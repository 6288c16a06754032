#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vtr/data_synth.hpp"
#include "vtr/model.hpp"
#include "vtr/optimizer.hpp"
#include "vtr/sampling.hpp"

namespace vtr {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Line-based "section.key = value" text. Blank lines and lines starting with
// '#' are skipped. Malformed lines raise ParseError with the line number.
KeyValues parse_key_values(std::string_view text, const std::string& source = "<memory>");
std::string format_key_values(const KeyValues& entries);

struct DataConfig {
  std::filesystem::path dir;  // corpus root written by `gen`
  std::string train = "train.tsv";
  std::string val = "val.tsv";
  std::string test = "test.tsv";
  std::string images = "images.tsv";
  std::string vocab = "vocab.txt";
  SyntheticSpec synth;

  std::filesystem::path path(const std::string& name) const { return dir / name; }
};

struct ScheduleConfig {
  std::string stages = "1x96:500,4x24:500,8x16:500";
  ExpansionMethod expansion = ExpansionMethod::kZeroPad;
  bool joint = false;
  std::size_t image_batch = 96;
};

struct TrainConfig {
  AdamConfig adam;
  std::size_t log_every = 1;
  std::size_t eval_every_epochs = 1;  // 0 disables validation during training
  std::size_t caption_min = 1;        // caption concatenation range per training sample
  std::size_t caption_max = 1;
};

enum class EvalDirection { kTextToVideo, kVideoToText, kBoth };
std::string to_string(EvalDirection direction);
EvalDirection parse_eval_direction(std::string_view text);

struct EvalConfig {
  std::size_t frames = 4;
  std::size_t stride = 2;
  EvalDirection direction = EvalDirection::kBoth;
  bool paragraph = false;
  std::size_t paragraph_min = 2;
  std::size_t paragraph_max = 3;
};

struct RunConfig {
  ModelConfig model = default_model();
  DataConfig data;
  ScheduleConfig schedule;
  TrainConfig train;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::filesystem::path out;

  static ModelConfig default_model();

  // Throws ConfigError on an unknown key or an unparsable value.
  void set(const std::string& key, const std::string& value);
  void apply(const KeyValues& entries);
  KeyValues entries() const;

  CurriculumSchedule curriculum() const;
  // Cross-field checks: model shapes, schedule syntax, schedule frames and
  // evaluation frames within the model's frame capacity.
  void validate() const;
};

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

// Model section only; used inside checkpoints.
KeyValues model_entries(const ModelConfig& model);
ModelConfig model_from_entries(const KeyValues& entries);

}  // namespace vtr
