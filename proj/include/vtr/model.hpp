#pragma once

#include <cstdint>
#include <span>

#include "vtr/dual_space.hpp"
#include "vtr/spacetime_encoder.hpp"
#include "vtr/text_encoder.hpp"

namespace vtr {

struct ModelConfig {
  VideoEncoderConfig video;
  TextEncoderConfig text;
  DualSpaceConfig dual;

  void validate() const;
};

// Encoder invocations, counted per clip (per test pass) and per caption.
struct EncoderCalls {
  std::uint64_t video = 0;
  std::uint64_t text = 0;
};

// Video encoder, text encoder and the two projections into the common space.
class RetrievalModel {
 public:
  RetrievalModel(ModelConfig config, std::size_t initial_frames, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  AttentionStyle style() const { return config_.video.attention_style; }
  std::size_t temporal_capacity() const { return video_.temporal_capacity(); }

  // Every trainable tensor, in a stable order with stable names.
  ParamList parameters() const;

  const VideoEncoderParams& video_params() const { return video_; }
  VideoEncoderParams& video_params() { return video_; }
  const TextEncoderParams& text_params() const { return text_; }
  TextEncoderParams& text_params() { return text_; }
  const DualSpaceParams& dual_params() const { return dual_; }
  DualSpaceParams& dual_params() { return dual_; }

  // Projected (not normalized) embeddings.
  Tensor project_videos(Tape& tape, std::span<const Tensor> clips, EncoderStats* stats = nullptr);
  Tensor project_texts(Tape& tape, std::span<const TokenSequence> captions);

  // Unit-norm embeddings in the common space.
  Tensor embed_videos(Tape& tape, std::span<const Tensor> clips, EncoderStats* stats = nullptr);
  Tensor embed_texts(Tape& tape, std::span<const TokenSequence> captions);

  // Symmetric contrastive loss for a batch of matched (clip, caption) pairs.
  Tensor loss(Tape& tape, std::span<const Tensor> clips, std::span<const TokenSequence> captions,
              InfoNceTerms* terms = nullptr);

  void expand_temporal(std::size_t target, ExpansionMethod method);

  const EncoderCalls& calls() const { return calls_; }
  void reset_calls() { calls_ = {}; }

  // Flags every parameter for gradient tracking.
  void mark_trainable();

 private:
  ModelConfig config_;
  VideoEncoderParams video_;
  TextEncoderParams text_;
  DualSpaceParams dual_;
  EncoderCalls calls_;
};

}  // namespace vtr
