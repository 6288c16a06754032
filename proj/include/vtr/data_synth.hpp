#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vtr/rng.hpp"
#include "vtr/tensor.hpp"
#include "vtr/text_encoder.hpp"

namespace vtr {

enum class ClipKind { kImage, kVideo };
std::string to_string(ClipKind kind);

// Raw clip file: "FZCLIP01", u32 version, u32 M, u32 C=3, u32 H, u32 W, then
// M*3*H*W little-endian float32 values in [0, 1].
inline constexpr std::array<char, 8> kClipMagic = {'F', 'Z', 'C', 'L', 'I', 'P', '0', '1'};
inline constexpr std::uint32_t kClipVersion = 1;

struct ClipHeader {
  std::uint32_t version = kClipVersion;
  std::uint32_t frames = 0;
  std::uint32_t channels = 3;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
};

void write_clip(const std::filesystem::path& path, const Tensor& clip);
Tensor read_clip(const std::filesystem::path& path);
ClipHeader read_clip_header(const std::filesystem::path& path);

struct ManifestRecord {
  std::string id;
  ClipKind kind = ClipKind::kVideo;
  std::string clip_path;  // relative paths resolve against the manifest's directory
  std::size_t num_frames = 1;
  std::vector<std::string> captions;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

// Tab-separated: id, kind, clip_path, L, caption...
std::string format_manifest_line(const ManifestRecord& record);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
// Parses and validates every record: clip files must exist and their headers
// must agree with kind and L.
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path);
// Parse only, no file checks.
std::vector<ManifestRecord> parse_manifest(std::string_view text, const std::string& source = "<memory>");
std::filesystem::path resolve_clip_path(const std::filesystem::path& manifest, const ManifestRecord& record);

// A record together with its decoded pixels.
struct ClipSample {
  ManifestRecord record;
  Tensor clip;  // [L x 3 x H x W]
};

std::vector<ClipSample> load_samples(const std::filesystem::path& manifest);

// Factor-grounded moving-shape corpus. Each clip shows one shape of one colour
// oscillating along one axis (triangle wave, one full period over the clip) so
// that opposite directions visit the same positions in a different order.
struct SyntheticSpec {
  std::size_t train_size = 128;
  std::size_t val_size = 64;
  std::size_t test_size = 64;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t frames = 16;
  std::size_t object_size = 8;
  std::uint64_t seed = 7;

  void validate() const;
};

inline constexpr std::array<std::string_view, 8> kColors = {"red",  "green",   "blue",  "yellow",
                                                            "cyan", "magenta", "white", "orange"};
inline constexpr std::array<std::string_view, 4> kShapes = {"square", "ring", "cross", "diamond"};
inline constexpr std::array<std::string_view, 4> kDirections = {"left", "right", "up", "down"};
inline constexpr std::array<std::string_view, 2> kSpeeds = {"slow", "fast"};

struct ClipFactors {
  std::size_t color = 0;
  std::size_t shape = 0;
  std::size_t direction = 0;
  std::size_t speed = 0;

  friend bool operator==(const ClipFactors&, const ClipFactors&) = default;
};

// Caption variants for a video; the first is "<color> <shape> moving <direction> <speed>".
std::vector<std::string> video_captions(const ClipFactors& f);
// Motion words omitted.
std::vector<std::string> image_captions(const ClipFactors& f);

Tensor render_clip(const ClipFactors& f, const SyntheticSpec& spec);

struct SyntheticItem {
  ClipFactors factors;
  ClipSample sample;
};

struct SyntheticCorpus {
  std::vector<SyntheticItem> train;
  std::vector<SyntheticItem> val;
  std::vector<SyntheticItem> test;
  std::vector<SyntheticItem> images;  // frame-0 renders of training appearances
};

// Split assignment is by appearance group (colour, shape, speed) so every
// split holds all four directions of each of its groups.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

// Vocabulary over the training and image captions.
Vocabulary corpus_vocabulary(const SyntheticCorpus& corpus);

// Writes clips, train/val/test/images manifests and vocab.txt under `dir`;
// returns the produced files relative to `dir`.
std::vector<std::string> write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

// k uniform in [lo, hi] intersected with [1, |captions|]; k distinct captions
// in sampled order joined by single spaces.
std::string concat_captions(const ManifestRecord& record, std::size_t lo, std::size_t hi, SeededRng& rng);

// Repeats the last frame until the clip has at least `frames` frames.
Tensor pad_short_clip(const Tensor& clip, std::size_t frames);

// Frames picked by index from a [L x 3 x H x W] clip.
Tensor select_frames(const Tensor& clip, std::span<const std::size_t> indices);

}  // namespace vtr
