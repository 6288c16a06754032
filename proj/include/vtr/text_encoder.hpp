#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vtr/layers.hpp"

namespace vtr {

class Vocabulary {
 public:
  static constexpr std::uint32_t kPad = 0;
  static constexpr std::uint32_t kCls = 1;
  static constexpr std::uint32_t kUnk = 2;
  static constexpr std::uint32_t kReserved = 3;

  Vocabulary() = default;
  // Non-reserved tokens in id order; duplicates are rejected.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size() + kReserved; }
  std::uint32_t id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token(std::uint32_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // One token per line; line k holds id k + 3.
  std::string serialize() const;
  static Vocabulary deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

// Lowercases and splits on whitespace; every punctuation character is its own word.
std::vector<std::string> split_words(std::string_view text);

// Keeps words with count >= min_count, ordered by (-count, word).
Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t min_count);

struct TokenSequence {
  std::vector<std::uint32_t> ids;  // ids[0] == CLS; PAD only as a suffix

  std::size_t length() const { return ids.size(); }
  // Count of non-PAD ids.
  std::size_t real_length() const;
};

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len = 32);

struct TextEncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t max_len = 32;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  double mlp_ratio = 4.0;
  double init_std = 0.02;

  std::size_t mlp_hidden() const;
  void validate() const;
};

struct TextBlockParams {
  AttentionParams attention;
  MlpParams mlp;
  NormParams norm_attention;
  NormParams norm_mlp;

  void collect(ParamList& out, const std::string& prefix) const;
};

struct TextEncoderParams {
  Tensor token_embed;  // [vocab x D_text]
  Tensor pos_embed;    // [max_len x D_text]
  std::vector<TextBlockParams> blocks;
  NormParams final_norm;

  static TextEncoderParams init(const TextEncoderConfig& config, SeededRng& rng);
  void collect(ParamList& out, const std::string& prefix = "text") const;
};

// [B x D_text] CLS embeddings. PAD positions never act as keys.
Tensor encode_text_batch(Tape& tape, const TextEncoderParams& params, const TextEncoderConfig& config,
                         std::span<const TokenSequence> sequences);

Tensor encode_text(Tape& tape, const TextEncoderParams& params, const TextEncoderConfig& config,
                   const TokenSequence& sequence);

}  // namespace vtr
