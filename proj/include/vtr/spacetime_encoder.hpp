#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vtr/layers.hpp"

namespace vtr {

enum class AttentionStyle {
  kOriginalDivided,  // spatial residual rooted at the temporal output
  kFrozenModified,   // spatial residual rooted at the block input
};

enum class ExpansionMethod { kZeroPad, kNearest, kBilinear };

std::string to_string(AttentionStyle style);
AttentionStyle parse_attention_style(std::string_view text);
std::string to_string(ExpansionMethod method);
ExpansionMethod parse_expansion_method(std::string_view text);

struct VideoEncoderConfig {
  std::size_t frames_max = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t patch = 8;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t blocks = 4;
  double mlp_ratio = 4.0;
  AttentionStyle attention_style = AttentionStyle::kFrozenModified;
  double init_std = 0.02;

  std::size_t patches_per_frame() const { return (height / patch) * (width / patch); }
  std::size_t patch_dim() const { return 3 * patch * patch; }
  std::size_t mlp_hidden() const;
  void validate() const;
};

struct BlockParams {
  AttentionParams temporal;
  AttentionParams spatial;
  MlpParams mlp;
  NormParams norm_time;
  NormParams norm_space;
  NormParams norm_mlp;

  void collect(ParamList& out, const std::string& prefix) const;
};

struct VideoEncoderParams {
  Tensor patch_kernel;  // [D x 3PP], channel-major patch layout
  Tensor patch_bias;    // [D]
  Tensor space_embed;   // [N x D]
  Tensor time_embed;    // [m x D], m = trained frame capacity
  Tensor cls;           // [1 x D]
  std::vector<BlockParams> blocks;
  NormParams final_norm;

  static VideoEncoderParams init(const VideoEncoderConfig& config, std::size_t frame_capacity, SeededRng& rng);
  std::size_t temporal_capacity() const { return time_embed.dim(0); }
  void collect(ParamList& out, const std::string& prefix = "video") const;
};

// Row layout of a batch of B clips with M frames and N patches each: the B CLS
// tokens come first, then patch (b, m, p) at row B + (b*M + m)*N + p. A single
// clip is therefore [CLS, frame 0 patches, frame 1 patches, ...].
struct TokenLayout {
  std::size_t batch = 1;
  std::size_t frames = 1;
  std::size_t patches = 1;

  std::size_t patch_tokens() const { return batch * frames * patches; }
  std::size_t total() const { return batch + patch_tokens(); }
  std::size_t cls_row(std::size_t b) const { return b; }
  std::size_t patch_row(std::size_t b, std::size_t m, std::size_t p) const {
    return batch + (b * frames + m) * patches + p;
  }
};

struct EncoderStats {
  AttentionStats temporal;
  AttentionStats spatial;
};

// clips: each [M x 3 x H x W] with the same M. Returns [B*M*N x D] in (b, m, p)
// row order; equivalent to a stride-P convolution.
Tensor patch_embed(Tape& tape, const VideoEncoderParams& params, const VideoEncoderConfig& config,
                   std::span<const Tensor> clips);

// Adds E_space[p] + E_time[m] to every patch token and prepends the CLS
// tokens. Throws CapacityError when M exceeds the temporal table.
Tensor add_positional_and_cls(Tape& tape, const VideoEncoderParams& params, const Tensor& patch_tokens,
                              const TokenLayout& layout);

Tensor spacetime_block(Tape& tape, const Tensor& x, const BlockParams& block, const TokenLayout& layout,
                       AttentionStyle style, std::size_t heads, EncoderStats* stats = nullptr);

// Full token sequence after the final norm, [total x D].
Tensor encode_video_tokens(Tape& tape, const VideoEncoderParams& params, const VideoEncoderConfig& config,
                           std::span<const Tensor> clips, AttentionStyle style, EncoderStats* stats = nullptr);

// CLS embeddings of a batch, [B x D].
Tensor encode_video_batch(Tape& tape, const VideoEncoderParams& params, const VideoEncoderConfig& config,
                          std::span<const Tensor> clips, AttentionStyle style, EncoderStats* stats = nullptr);

// Single clip [M x 3 x H x W] -> [D]. An image is the M = 1 case.
Tensor encode_video(Tape& tape, const VideoEncoderParams& params, const VideoEncoderConfig& config,
                    const Tensor& clip, AttentionStyle style);
// image [3 x H x W], routed through encode_video as a one-frame clip.
Tensor encode_image(Tape& tape, const VideoEncoderParams& params, const VideoEncoderConfig& config,
                    const Tensor& image, AttentionStyle style);

// Grows a temporal embedding table from m to `target` rows. Nearest and
// bilinear use the align-corners source coordinate s = i(m-1)/(target-1).
Tensor expand_temporal_embeddings(const Tensor& time_embed, std::size_t target, ExpansionMethod method);

}  // namespace vtr
