#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vtr/model.hpp"
#include "vtr/optimizer.hpp"
#include "vtr/sampling.hpp"
#include "vtr/text_encoder.hpp"

namespace vtr {

// Layout (little-endian):
//   8-byte magic, u32 version, u32 blob length, blob (UTF-8 "key = value" lines),
//   u64 record count, then per record: u32 name length, name, u32 rank,
//   u64 dims[rank], f64 payload.
inline constexpr std::array<char, 8> kCheckpointMagic = {'V', 'T', 'R', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingState {
  std::uint64_t global_step = 0;
  std::size_t stage = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
  std::uint64_t adam_step = 0;
  BatchStream::State stream;
  std::vector<std::uint64_t> ledger;  // patch tokens per stage

  friend bool operator==(const TrainingState&, const TrainingState&) = default;
};

struct Checkpoint {
  ModelConfig model;
  std::vector<std::string> vocab;  // non-reserved tokens in id order; may be empty
  TrainingState state;
  // "param/<name>", "adam.m/<name>", "adam.v/<name>"
  std::vector<NamedTensor> records;

  const Tensor* find(std::string_view name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// FormatError on bad magic or version; CorruptionError on truncation, bad
// lengths or trailing bytes.
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const RetrievalModel& model, const AdamState* adam, const Vocabulary* vocab,
                           const TrainingState& state);

// Frame capacity recorded in the checkpoint's temporal embedding table.
std::size_t checkpoint_frame_capacity(const Checkpoint& ckpt);

// Copies parameters into `model`. Every parameter is validated before any is
// written. A smaller stored temporal table is a CapacityError unless `expand`
// names the method used to grow it to the model's capacity.
void restore_model(const Checkpoint& ckpt, RetrievalModel& model, std::optional<ExpansionMethod> expand = {});
void restore_optimizer(const Checkpoint& ckpt, AdamState& adam);

// A model built from the stored config and capacity, with parameters restored.
RetrievalModel model_from_checkpoint(const Checkpoint& ckpt);
Vocabulary vocab_from_checkpoint(const Checkpoint& ckpt);

}  // namespace vtr
