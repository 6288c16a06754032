#include "vtr/spacetime_encoder.hpp"

#include <cmath>

#include "vtr/errors.hpp"

namespace vtr {

std::string to_string(AttentionStyle style) {
  switch (style) {
    case AttentionStyle::kOriginalDivided:
      return "original";
    case AttentionStyle::kFrozenModified:
      return "frozen";
  }
  throw ConfigError("unknown attention style");
}

AttentionStyle parse_attention_style(std::string_view text) {
  if (text == "original" || text == "original_divided") return AttentionStyle::kOriginalDivided;
  if (text == "frozen" || text == "frozen_modified") return AttentionStyle::kFrozenModified;
  throw ConfigError("unknown attention style '" + std::string(text) + "' (expected original or frozen)");
}

std::string to_string(ExpansionMethod method) {
  switch (method) {
    case ExpansionMethod::kZeroPad:
      return "zero_pad";
    case ExpansionMethod::kNearest:
      return "nearest";
    case ExpansionMethod::kBilinear:
      return "bilinear";
  }
  throw ConfigError("unknown expansion method");
}

ExpansionMethod parse_expansion_method(std::string_view text) {
  if (text == "zero_pad" || text == "zero-pad" || text == "zeros") return ExpansionMethod::kZeroPad;
  if (text == "nearest") return ExpansionMethod::kNearest;
  if (text == "bilinear") return ExpansionMethod::kBilinear;
  throw ConfigError("unknown expansion method '" + std::string(text) + "' (expected zero_pad, nearest or bilinear)");
}

std::size_t VideoEncoderConfig::mlp_hidden() const {
  return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(embed_dim)));
}

void VideoEncoderConfig::validate() const {
  if (patch == 0 || height == 0 || width == 0) throw ConfigError("video: patch and resolution must be positive");
  if (height % patch != 0 || width % patch != 0) {
    throw ShapeError("video: resolution " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by patch size " + std::to_string(patch));
  }
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("video: embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (blocks == 0) throw ConfigError("video: at least one block is required");
  if (frames_max == 0) throw ConfigError("video: frames_max must be positive");
  if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) throw ConfigError("video: mlp_ratio must be positive");
}

void BlockParams::collect(ParamList& out, const std::string& prefix) const {
  temporal.collect(out, prefix + ".temporal");
  spatial.collect(out, prefix + ".spatial");
  mlp.collect(out, prefix + ".mlp");
  norm_time.collect(out, prefix + ".norm_time");
  norm_space.collect(out, prefix + ".norm_space");
  norm_mlp.collect(out, prefix + ".norm_mlp");
}

VideoEncoderParams VideoEncoderParams::init(const VideoEncoderConfig& config, std::size_t frame_capacity,
                                            SeededRng& rng) {
  config.validate();
  if (frame_capacity == 0 || frame_capacity > config.frames_max) {
    throw CapacityError("video: initial frame capacity " + std::to_string(frame_capacity) + " outside [1, " +
                        std::to_string(config.frames_max) + "]");
  }
  const std::size_t d = config.embed_dim;
  const double std = config.init_std;
  VideoEncoderParams p;
  p.patch_kernel = truncated_normal_tensor({d, config.patch_dim()}, std, rng);
  p.patch_bias = Tensor(Shape{d});
  p.space_embed = truncated_normal_tensor({config.patches_per_frame(), d}, std, rng);
  p.time_embed = truncated_normal_tensor({frame_capacity, d}, std, rng);
  p.cls = truncated_normal_tensor({1, d}, std, rng);
  for (std::size_t b = 0; b < config.blocks; ++b) {
    BlockParams block;
    block.temporal = AttentionParams::init(d, std, /*zero_output=*/true, rng);
    block.spatial = AttentionParams::init(d, std, false, rng);
    block.mlp = MlpParams::init(d, config.mlp_hidden(), std, rng);
    block.norm_time = NormParams::init(d);
    block.norm_space = NormParams::init(d);
    block.norm_mlp = NormParams::init(d);
    p.blocks.push_back(std::move(block));
  }
  p.final_norm = NormParams::init(d);
  return p;
}

void VideoEncoderParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".patch_kernel", patch_kernel});
  out.push_back({prefix + ".patch_bias", patch_bias});
  out.push_back({prefix + ".space_embed", space_embed});
  out.push_back({prefix + ".time_embed", time_embed});
  out.push_back({prefix + ".cls", cls});
  for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(out, prefix + ".block" + std::to_string(b));
  final_norm.collect(out, prefix + ".final_norm");
}

namespace {

std::size_t common_frame_count(const VideoEncoderConfig& config, std::span<const Tensor> clips) {
  if (clips.empty()) throw ShapeError("video: empty clip batch");
  const std::size_t frames = clips.front().rank() == 4 ? clips.front().dim(0) : 0;
  for (const auto& clip : clips) {
    const Shape expected{frames, 3, config.height, config.width};
    if (frames == 0 || clip.shape() != expected) {
      throw ShapeError("video: clip shape " + shape_string(clip.shape()) + " does not match [M x 3 x " +
                       std::to_string(config.height) + " x " + std::to_string(config.width) +
                       "] with a common M in the batch");
    }
  }
  return frames;
}

}  // namespace

Tensor patch_embed(Tape& tape, const VideoEncoderParams& params, const VideoEncoderConfig& config,
                   std::span<const Tensor> clips) {
  config.validate();
  const std::size_t frames = common_frame_count(config, clips);
  const std::size_t p = config.patch, h = config.height, w = config.width;
  const std::size_t across = w / p, n = config.patches_per_frame(), pd = config.patch_dim();
  Tensor patches(Shape{clips.size() * frames * n, pd});
  auto out = patches.mutable_values();
  std::size_t row = 0;
  for (const auto& clip : clips) {
    const auto px = clip.values();
    for (std::size_t m = 0; m < frames; ++m) {
      for (std::size_t pi = 0; pi < n; ++pi, ++row) {
        const std::size_t y0 = (pi / across) * p, x0 = (pi % across) * p;
        double* dst = out.data() + row * pd;
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t dy = 0; dy < p; ++dy)
            for (std::size_t dx = 0; dx < p; ++dx)
              dst[(c * p + dy) * p + dx] = px[((m * 3 + c) * h + y0 + dy) * w + x0 + dx];
      }
    }
  }
  return linear(tape, patches, params.patch_kernel, params.patch_bias);
}

Tensor add_positional_and_cls(Tape& tape, const VideoEncoderParams& params, const Tensor& patch_tokens,
                              const TokenLayout& layout) {
  if (layout.frames > params.temporal_capacity()) {
    throw CapacityError("video: clip has " + std::to_string(layout.frames) +
                        " frames but the temporal embedding covers " + std::to_string(params.temporal_capacity()) +
                        "; expand the temporal embeddings first");
  }
  if (layout.patches != params.space_embed.dim(0) || patch_tokens.rank() != 2 ||
      patch_tokens.dim(0) != layout.patch_tokens()) {
    throw ShapeError("video: patch tokens " + shape_string(patch_tokens.shape()) + " do not match layout");
  }
  std::vector<std::uint32_t> space_index, time_index;
  space_index.reserve(layout.patch_tokens());
  time_index.reserve(layout.patch_tokens());
  for (std::size_t b = 0; b < layout.batch; ++b)
    for (std::size_t m = 0; m < layout.frames; ++m)
      for (std::size_t p = 0; p < layout.patches; ++p) {
        space_index.push_back(static_cast<std::uint32_t>(p));
        time_index.push_back(static_cast<std::uint32_t>(m));
      }
  const Tensor with_space = add(tape, patch_tokens, gather_rows(tape, params.space_embed, space_index));
  const Tensor with_time = add(tape, with_space, gather_rows(tape, params.time_embed, time_index));
  const std::vector<std::uint32_t> cls_index(layout.batch, 0);
  const Tensor parts[] = {gather_rows(tape, params.cls, cls_index), with_time};
  return concat_rows(tape, parts);
}

namespace {

AttentionGroups temporal_groups(const TokenLayout& layout) {
  // Indices relative to the first patch row.
  AttentionGroups groups;
  std::vector<std::uint32_t> members(layout.frames);
  for (std::size_t b = 0; b < layout.batch; ++b)
    for (std::size_t p = 0; p < layout.patches; ++p) {
      for (std::size_t m = 0; m < layout.frames; ++m)
        members[m] = static_cast<std::uint32_t>(layout.patch_row(b, m, p) - layout.batch);
      groups.add(members);
    }
  return groups;
}

AttentionGroups spatial_groups(const TokenLayout& layout) {
  AttentionGroups groups;
  std::vector<std::uint32_t> members(layout.patches + 1);
  for (std::size_t b = 0; b < layout.batch; ++b)
    for (std::size_t m = 0; m < layout.frames; ++m) {
      members[0] = static_cast<std::uint32_t>(layout.cls_row(b));
      for (std::size_t p = 0; p < layout.patches; ++p)
        members[p + 1] = static_cast<std::uint32_t>(layout.patch_row(b, m, p));
      groups.add(members);
    }
  return groups;
}

}  // namespace

Tensor spacetime_block(Tape& tape, const Tensor& x, const BlockParams& block, const TokenLayout& layout,
                       AttentionStyle style, std::size_t heads, EncoderStats* stats) {
  if (x.rank() != 2 || x.dim(0) != layout.total()) {
    throw ShapeError("spacetime_block: input " + shape_string(x.shape()) + " does not hold " +
                     std::to_string(layout.total()) + " tokens");
  }
  if (style != AttentionStyle::kOriginalDivided && style != AttentionStyle::kFrozenModified) {
    throw ConfigError("spacetime_block: unknown attention style");
  }
  // Temporal attention over patch tokens only; CLS passes through.
  const Tensor cls = slice_rows(tape, x, 0, layout.batch);
  const Tensor patches = slice_rows(tape, x, layout.batch, layout.total());
  const Tensor time_out = attention_sublayer(tape, apply_norm(tape, patches, block.norm_time), block.temporal,
                                             temporal_groups(layout), heads, stats ? &stats->temporal : nullptr);
  const Tensor parts[] = {cls, add(tape, patches, time_out)};
  const Tensor z_time = concat_rows(tape, parts);

  // Spatial attention per frame; each frame sees its own copy of CLS and the
  // per-frame CLS outputs are averaged.
  const Tensor space_out = attention_sublayer(tape, apply_norm(tape, z_time, block.norm_space), block.spatial,
                                              spatial_groups(layout), heads, stats ? &stats->spatial : nullptr);
  const Tensor& residual = style == AttentionStyle::kOriginalDivided ? z_time : x;
  const Tensor z_space = add(tape, residual, space_out);
  return add(tape, z_space, mlp_sublayer(tape, apply_norm(tape, z_space, block.norm_mlp), block.mlp));
}

namespace {

Tensor run_blocks(Tape& tape, const VideoEncoderParams& params, const VideoEncoderConfig& config,
                  std::span<const Tensor> clips, AttentionStyle style, EncoderStats* stats, TokenLayout& layout) {
  const Tensor patches = patch_embed(tape, params, config, clips);
  layout = TokenLayout{clips.size(), clips.front().dim(0), config.patches_per_frame()};
  Tensor x = add_positional_and_cls(tape, params, patches, layout);
  for (const auto& block : params.blocks) x = spacetime_block(tape, x, block, layout, style, config.heads, stats);
  return x;
}

}  // namespace

Tensor encode_video_tokens(Tape& tape, const VideoEncoderParams& params, const VideoEncoderConfig& config,
                           std::span<const Tensor> clips, AttentionStyle style, EncoderStats* stats) {
  TokenLayout layout;
  const Tensor x = run_blocks(tape, params, config, clips, style, stats, layout);
  return apply_norm(tape, x, params.final_norm);
}

Tensor encode_video_batch(Tape& tape, const VideoEncoderParams& params, const VideoEncoderConfig& config,
                          std::span<const Tensor> clips, AttentionStyle style, EncoderStats* stats) {
  TokenLayout layout;
  const Tensor x = run_blocks(tape, params, config, clips, style, stats, layout);
  // Normalization is row-wise, so normalizing only the CLS rows is exact.
  return apply_norm(tape, slice_rows(tape, x, 0, layout.batch), params.final_norm);
}

Tensor encode_video(Tape& tape, const VideoEncoderParams& params, const VideoEncoderConfig& config,
                    const Tensor& clip, AttentionStyle style) {
  if (clip.rank() != 4 || clip.dim(0) < 1) throw ShapeError("encode_video: expected [M x 3 x H x W] clip");
  const Tensor batch[] = {clip};
  return reshape(tape, encode_video_batch(tape, params, config, batch, style), Shape{config.embed_dim});
}

Tensor encode_image(Tape& tape, const VideoEncoderParams& params, const VideoEncoderConfig& config,
                    const Tensor& image, AttentionStyle style) {
  if (image.rank() != 3) throw ShapeError("encode_image: expected [3 x H x W], got " + shape_string(image.shape()));
  Shape as_clip{1};
  as_clip.insert(as_clip.end(), image.shape().begin(), image.shape().end());
  return encode_video(tape, params, config, Tensor(as_clip, {image.values().begin(), image.values().end()}), style);
}

Tensor expand_temporal_embeddings(const Tensor& time_embed, std::size_t target, ExpansionMethod method) {
  if (time_embed.rank() != 2) throw ShapeError("expand_temporal_embeddings: expected [m x D] table");
  const std::size_t m = time_embed.dim(0), d = time_embed.dim(1);
  if (target < m) {
    throw ContractError("expand_temporal_embeddings: cannot shrink " + std::to_string(m) + " rows to " +
                        std::to_string(target));
  }
  const auto src = time_embed.values();
  Tensor out(Shape{target, d});
  auto dst = out.mutable_values();
  if (method == ExpansionMethod::kZeroPad) {
    std::copy(src.begin(), src.end(), dst.begin());
    return out;
  }
  // Source coordinate s = i*(m-1)/(target-1) kept as the exact rational num/den.
  const std::size_t den = target > 1 ? target - 1 : 1;
  for (std::size_t i = 0; i < target; ++i) {
    const std::size_t num = (target > 1 && m > 1) ? i * (m - 1) : 0;
    const std::size_t lo = num / den, rem = num % den;
    double* row = dst.data() + i * d;
    if (method == ExpansionMethod::kNearest) {
      const std::size_t pick = (2 * num + den) / (2 * den);  // round half up
      std::copy_n(src.begin() + pick * d, d, row);
    } else if (method == ExpansionMethod::kBilinear) {
      if (rem == 0) {
        std::copy_n(src.begin() + lo * d, d, row);
      } else {
        const double frac = static_cast<double>(rem) / static_cast<double>(den);
        for (std::size_t j = 0; j < d; ++j) row[j] = (1.0 - frac) * src[lo * d + j] + frac * src[(lo + 1) * d + j];
      }
    } else {
      throw ConfigError("expand_temporal_embeddings: unknown method");
    }
  }
  return out;
}

}  // namespace vtr
