#include "vtr/text_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "vtr/errors.hpp"

namespace vtr {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw FormatError("vocabulary: empty token at id " + std::to_string(i + kReserved));
    if (!index_.emplace(tokens_[i], static_cast<std::uint32_t>(i + kReserved)).second) {
      throw FormatError("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
}

std::uint32_t Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.contains(std::string(token)); }

const std::string& Vocabulary::token(std::uint32_t id) const {
  static const std::string reserved[] = {"[PAD]", "[CLS]", "[UNK]"};
  if (id < kReserved) return reserved[id];
  if (id - kReserved >= tokens_.size()) throw ContractError("vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[id - kReserved];
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::deserialize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    const auto stop = end == std::string_view::npos ? text.size() : end;
    tokens.emplace_back(text.substr(start, stop - start));
    start = stop + 1;
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  out << serialize();
  if (!out) throw IoError("failed writing vocabulary " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocabulary " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      words.emplace_back(1, raw);
    } else {
      current += static_cast<char>(std::tolower(c));
    }
  }
  flush();
  return words;
}

Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t min_count) {
  if (corpus.empty()) throw ContractError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& caption : corpus)
    for (auto& w : split_words(caption)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [word, count] : counts)
    if (count >= min_count) kept.emplace_back(word, count);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [word, count] : kept) tokens.push_back(word);
  return Vocabulary(std::move(tokens));
}

std::size_t TokenSequence::real_length() const {
  return static_cast<std::size_t>(std::count_if(ids.begin(), ids.end(), [](auto id) { return id != Vocabulary::kPad; }));
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  if (max_len == 0) throw ContractError("tokenize: max_len must be positive");
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kCls);
  for (const auto& w : split_words(text)) {
    if (seq.ids.size() >= max_len) break;
    seq.ids.push_back(vocab.id(w));
  }
  return seq;
}

std::size_t TextEncoderConfig::mlp_hidden() const {
  return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(embed_dim)));
}

void TextEncoderConfig::validate() const {
  if (vocab_size <= Vocabulary::kReserved - 1) throw ConfigError("text: vocab_size must cover the reserved ids");
  if (max_len == 0) throw ConfigError("text: max_len must be positive");
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("text: embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
                      std::to_string(heads));
  }
  if (blocks == 0) throw ConfigError("text: at least one block is required");
  if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) throw ConfigError("text: mlp_ratio must be positive");
}

void TextBlockParams::collect(ParamList& out, const std::string& prefix) const {
  attention.collect(out, prefix + ".attention");
  mlp.collect(out, prefix + ".mlp");
  norm_attention.collect(out, prefix + ".norm_attention");
  norm_mlp.collect(out, prefix + ".norm_mlp");
}

TextEncoderParams TextEncoderParams::init(const TextEncoderConfig& config, SeededRng& rng) {
  config.validate();
  const std::size_t d = config.embed_dim;
  TextEncoderParams p;
  p.token_embed = truncated_normal_tensor({config.vocab_size, d}, config.init_std, rng);
  p.pos_embed = truncated_normal_tensor({config.max_len, d}, config.init_std, rng);
  for (std::size_t b = 0; b < config.blocks; ++b) {
    TextBlockParams block;
    block.attention = AttentionParams::init(d, config.init_std, false, rng);
    block.mlp = MlpParams::init(d, config.mlp_hidden(), config.init_std, rng);
    block.norm_attention = NormParams::init(d);
    block.norm_mlp = NormParams::init(d);
    p.blocks.push_back(std::move(block));
  }
  p.final_norm = NormParams::init(d);
  return p;
}

void TextEncoderParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".token_embed", token_embed});
  out.push_back({prefix + ".pos_embed", pos_embed});
  for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].collect(out, prefix + ".block" + std::to_string(b));
  final_norm.collect(out, prefix + ".final_norm");
}

Tensor encode_text_batch(Tape& tape, const TextEncoderParams& params, const TextEncoderConfig& config,
                         std::span<const TokenSequence> sequences) {
  if (sequences.empty()) throw ShapeError("encode_text: empty batch");
  const std::size_t table_len = params.pos_embed.dim(0);
  std::vector<std::uint32_t> token_ids, positions, cls_rows;
  AttentionGroups groups;
  std::vector<std::uint32_t> members;
  for (const auto& seq : sequences) {
    if (seq.ids.empty() || seq.ids.front() != Vocabulary::kCls) {
      throw ContractError("encode_text: sequence must start with CLS");
    }
    if (seq.ids.size() > table_len) {
      throw ShapeError("encode_text: sequence of length " + std::to_string(seq.ids.size()) +
                       " exceeds positional table of " + std::to_string(table_len));
    }
    const auto base = static_cast<std::uint32_t>(token_ids.size());
    cls_rows.push_back(base);
    members.clear();
    bool padding = false;
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
      const auto id = seq.ids[i];
      if (id >= params.token_embed.dim(0)) throw ContractError("encode_text: token id " + std::to_string(id) + " out of vocabulary");
      if (id == Vocabulary::kPad) {
        padding = true;
      } else {
        if (padding) throw ContractError("encode_text: PAD before a real token");
        members.push_back(base + static_cast<std::uint32_t>(i));
      }
      token_ids.push_back(id);
      positions.push_back(static_cast<std::uint32_t>(i));
    }
    groups.add(members);
  }
  Tensor x = add(tape, gather_rows(tape, params.token_embed, token_ids), gather_rows(tape, params.pos_embed, positions));
  for (const auto& block : params.blocks) {
    x = add(tape, x, attention_sublayer(tape, apply_norm(tape, x, block.norm_attention), block.attention, groups,
                                        config.heads));
    x = add(tape, x, mlp_sublayer(tape, apply_norm(tape, x, block.norm_mlp), block.mlp));
  }
  return apply_norm(tape, gather_rows(tape, x, cls_rows), params.final_norm);
}

Tensor encode_text(Tape& tape, const TextEncoderParams& params, const TextEncoderConfig& config,
                   const TokenSequence& sequence) {
  const TokenSequence batch[] = {sequence};
  return reshape(tape, encode_text_batch(tape, params, config, batch), Shape{config.embed_dim});
}

}  // namespace vtr
