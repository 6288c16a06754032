#include "vtr/model.hpp"

#include "vtr/errors.hpp"

namespace vtr {

void ModelConfig::validate() const {
  video.validate();
  text.validate();
  dual.validate();
}

RetrievalModel::RetrievalModel(ModelConfig config, std::size_t initial_frames, std::uint64_t seed)
    : config_(std::move(config)) {
  config_.validate();
  SeededRng root(seed);
  SeededRng video_rng = root.fork(1), text_rng = root.fork(2), dual_rng = root.fork(3);
  video_ = VideoEncoderParams::init(config_.video, initial_frames, video_rng);
  text_ = TextEncoderParams::init(config_.text, text_rng);
  dual_ = DualSpaceParams::init(config_.dual, config_.video.embed_dim, config_.text.embed_dim, dual_rng);
  mark_trainable();
}

void RetrievalModel::mark_trainable() {
  for (auto& p : parameters()) p.tensor.set_requires_grad(true);
}

ParamList RetrievalModel::parameters() const {
  ParamList out;
  video_.collect(out);
  text_.collect(out);
  dual_.collect(out);
  return out;
}

Tensor RetrievalModel::project_videos(Tape& tape, std::span<const Tensor> clips, EncoderStats* stats) {
  const Tensor raw = encode_video_batch(tape, video_, config_.video, clips, style(), stats);
  calls_.video += clips.size();
  return project(tape, dual_, raw, Modality::kVideo);
}

Tensor RetrievalModel::project_texts(Tape& tape, std::span<const TokenSequence> captions) {
  const Tensor raw = encode_text_batch(tape, text_, config_.text, captions);
  calls_.text += captions.size();
  return project(tape, dual_, raw, Modality::kText);
}

Tensor RetrievalModel::embed_videos(Tape& tape, std::span<const Tensor> clips, EncoderStats* stats) {
  return l2_normalize_rows(tape, project_videos(tape, clips, stats));
}

Tensor RetrievalModel::embed_texts(Tape& tape, std::span<const TokenSequence> captions) {
  return l2_normalize_rows(tape, project_texts(tape, captions));
}

Tensor RetrievalModel::loss(Tape& tape, std::span<const Tensor> clips, std::span<const TokenSequence> captions,
                            InfoNceTerms* terms) {
  if (clips.size() != captions.size()) {
    throw ShapeError("loss: " + std::to_string(clips.size()) + " clips vs " + std::to_string(captions.size()) +
                     " captions");
  }
  const Tensor x = embed_videos(tape, clips);
  const Tensor y = embed_texts(tape, captions);
  return infonce_loss(tape, similarity_matrix(tape, x, y), dual_.temperature, terms);
}

void RetrievalModel::expand_temporal(std::size_t target, ExpansionMethod method) {
  if (target > config_.video.frames_max) {
    throw CapacityError("cannot expand temporal embeddings to " + std::to_string(target) + " frames; frames_max is " +
                        std::to_string(config_.video.frames_max));
  }
  video_.time_embed = expand_temporal_embeddings(video_.time_embed, target, method);
  mark_trainable();
}

}  // namespace vtr
