#include "vtr/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "vtr/config.hpp"
#include "vtr/errors.hpp"

namespace vtr {

namespace {

constexpr std::string_view kParam = "param/";
constexpr std::string_view kMomentFirst = "adam.m/";
constexpr std::string_view kMomentSecond = "adam.v/";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  std::string_view take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw CorruptionError("checkpoint " + source_ + ": truncated while reading " + what + " at byte " +
                            std::to_string(pos_));
    }
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint64_t uint(int width, const char* what) {
    const auto raw = take(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[i])) << (8 * i);
    return v;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& source() const { return source_; }

 private:
  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string join_u64(const std::vector<std::uint64_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& text, const std::string& key) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc{} || ptr != end) {
    throw CorruptionError("checkpoint: bad value '" + text + "' for " + key);
  }
  return v;
}

std::string encode_blob(const Checkpoint& c) {
  KeyValues kv = model_entries(c.model);
  std::string tokens;
  for (std::size_t i = 0; i < c.vocab.size(); ++i) {
    if (i) tokens += ' ';
    tokens += c.vocab[i];
  }
  kv.emplace_back("vocab.tokens", tokens);
  const auto& s = c.state;
  kv.emplace_back("state.global_step", std::to_string(s.global_step));
  kv.emplace_back("state.stage", std::to_string(s.stage));
  kv.emplace_back("state.rng_seed", std::to_string(s.rng_seed));
  kv.emplace_back("state.rng_counter", std::to_string(s.rng_counter));
  kv.emplace_back("state.adam_step", std::to_string(s.adam_step));
  kv.emplace_back("state.image_cursor", std::to_string(s.stream.image_cursor));
  kv.emplace_back("state.video_cursor", std::to_string(s.stream.video_cursor));
  kv.emplace_back("state.turn", std::to_string(s.stream.turn));
  kv.emplace_back("state.ledger", join_u64(s.ledger));
  return format_key_values(kv);
}

void decode_blob(std::string_view blob, Checkpoint& c, const std::string& source) {
  KeyValues entries;
  try {
    entries = parse_key_values(blob, source + " config blob");
  } catch (const ParseError& e) {
    throw CorruptionError(std::string("checkpoint: ") + e.what());
  }
  KeyValues model;
  std::map<std::string, std::string> rest;
  for (auto& [k, v] : entries) {
    if (k.starts_with("video.") || k.starts_with("text.") || k.starts_with("dual.")) {
      model.emplace_back(k, v);
    } else {
      rest[k] = v;
    }
  }
  try {
    c.model = model_from_entries(model);
  } catch (const Error& e) {
    throw CorruptionError("checkpoint " + source + ": " + e.what());
  }
  auto need = [&](const std::string& key) -> const std::string& {
    const auto it = rest.find(key);
    if (it == rest.end()) throw CorruptionError("checkpoint " + source + ": missing " + key);
    return it->second;
  };
  c.vocab.clear();
  std::istringstream tokens(need("vocab.tokens"));
  for (std::string t; tokens >> t;) c.vocab.push_back(t);
  auto& s = c.state;
  s.global_step = parse_u64(need("state.global_step"), "state.global_step");
  s.stage = parse_u64(need("state.stage"), "state.stage");
  s.rng_seed = parse_u64(need("state.rng_seed"), "state.rng_seed");
  s.rng_counter = parse_u64(need("state.rng_counter"), "state.rng_counter");
  s.adam_step = parse_u64(need("state.adam_step"), "state.adam_step");
  s.stream.image_cursor = parse_u64(need("state.image_cursor"), "state.image_cursor");
  s.stream.video_cursor = parse_u64(need("state.video_cursor"), "state.video_cursor");
  s.stream.turn = parse_u64(need("state.turn"), "state.turn");
  s.ledger.clear();
  const std::string& ledger = need("state.ledger");
  std::size_t start = 0;
  while (start < ledger.size()) {
    auto comma = ledger.find(',', start);
    if (comma == std::string::npos) comma = ledger.size();
    s.ledger.push_back(parse_u64(ledger.substr(start, comma - start), "state.ledger"));
    start = comma + 1;
  }
}

}  // namespace

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& r : records)
    if (r.name == name) return &r.tensor;
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  put_u32(out, kCheckpointVersion);
  const std::string blob = encode_blob(ckpt);
  put_u32(out, static_cast<std::uint32_t>(blob.size()));
  out += blob;
  put_u64(out, ckpt.records.size());
  for (const auto& r : ckpt.records) {
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    put_u32(out, static_cast<std::uint32_t>(r.tensor.rank()));
    for (auto d : r.tensor.shape()) put_u64(out, d);
    for (double v : r.tensor.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
  Reader in(bytes, source);
  const auto magic = in.take(kCheckpointMagic.size(), "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw FormatError("checkpoint " + source + ": bad magic");
  }
  const auto version = in.uint(4, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint " + source + ": unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  const auto blob_len = in.uint(4, "config length");
  decode_blob(in.take(blob_len, "config blob"), c, source);
  const auto count = in.uint(8, "record count");
  // Every record needs at least 8 header bytes.
  if (count > in.remaining() / 8) throw CorruptionError("checkpoint " + source + ": record count exceeds file size");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = in.uint(4, "record name length");
    std::string name(in.take(name_len, "record name"));
    const auto rank = in.uint(4, "record rank");
    if (rank > 8) throw CorruptionError("checkpoint " + source + ": record '" + name + "' has rank " +
                                        std::to_string(rank));
    Shape shape;
    std::uint64_t volume = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      const auto dim = in.uint(8, "record dims");
      if (dim != 0 && volume > in.remaining() / dim) {
        throw CorruptionError("checkpoint " + source + ": record '" + name + "' is larger than the file");
      }
      volume *= dim;
      shape.push_back(static_cast<std::size_t>(dim));
    }
    if (volume > in.remaining() / 8) {
      throw CorruptionError("checkpoint " + source + ": truncated payload of record '" + name + "'");
    }
    const auto payload = in.take(static_cast<std::size_t>(volume) * 8, "record payload");
    std::vector<double> values(volume);
    for (std::size_t k = 0; k < values.size(); ++k) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[8 * k + b])) << (8 * b);
      values[k] = std::bit_cast<double>(bits);
    }
    c.records.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  if (in.remaining() != 0) {
    throw CorruptionError("checkpoint " + source + ": " + std::to_string(in.remaining()) + " trailing bytes");
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str(), path.string());
}

Checkpoint make_checkpoint(const RetrievalModel& model, const AdamState* adam, const Vocabulary* vocab,
                           const TrainingState& state) {
  Checkpoint c;
  c.model = model.config();
  if (vocab) c.vocab = vocab->tokens();
  c.state = state;
  for (const auto& p : model.parameters()) c.records.push_back({std::string(kParam) + p.name, p.tensor.clone()});
  if (adam) {
    c.state.adam_step = adam->step_count();
    for (const auto& [name, m] : adam->moments()) {
      c.records.push_back({std::string(kMomentFirst) + name, Tensor(Shape{m.first.size()}, m.first)});
      c.records.push_back({std::string(kMomentSecond) + name, Tensor(Shape{m.second.size()}, m.second)});
    }
  }
  return c;
}

std::size_t checkpoint_frame_capacity(const Checkpoint& ckpt) {
  const Tensor* t = ckpt.find(std::string(kParam) + "video.time_embed");
  if (!t || t->rank() != 2) throw FormatError("checkpoint: no temporal embedding table");
  return t->dim(0);
}

void restore_model(const Checkpoint& ckpt, RetrievalModel& model, std::optional<ExpansionMethod> expand) {
  const std::size_t capacity = model.temporal_capacity();
  std::vector<std::pair<Tensor, Tensor>> plan;  // destination, source
  Tensor time_embed;
  for (const auto& p : model.parameters()) {
    const Tensor* src = ckpt.find(std::string(kParam) + p.name);
    if (!src) throw FormatError("checkpoint: missing parameter '" + p.name + "'");
    Tensor value = *src;
    if (p.name == "video.time_embed" && value.rank() == 2 && value.dim(0) != capacity) {
      if (value.dim(0) > capacity || !expand) {
        throw CapacityError("checkpoint: temporal embeddings cover " + std::to_string(value.dim(0)) +
                            " frames but the model expects " + std::to_string(capacity) +
                            (value.dim(0) < capacity ? "; request an expansion method to grow them" : ""));
      }
      value = expand_temporal_embeddings(value, capacity, *expand);
    }
    if (value.shape() != p.tensor.shape()) {
      throw ShapeError("checkpoint: parameter '" + p.name + "' is " + shape_string(value.shape()) +
                       " but the model expects " + shape_string(p.tensor.shape()));
    }
    plan.emplace_back(p.tensor, value);
  }
  for (auto& [dst, src] : plan) {
    auto out = dst.mutable_values();
    const auto in = src.values();
    std::copy(in.begin(), in.end(), out.begin());
  }
}

void restore_optimizer(const Checkpoint& ckpt, AdamState& adam) {
  std::map<std::string, AdamState::Moments> moments;
  for (const auto& r : ckpt.records) {
    const std::string_view name = r.name;
    if (name.starts_with(kMomentFirst)) {
      const auto& v = r.tensor.values();
      moments[std::string(name.substr(kMomentFirst.size()))].first.assign(v.begin(), v.end());
    } else if (name.starts_with(kMomentSecond)) {
      const auto& v = r.tensor.values();
      moments[std::string(name.substr(kMomentSecond.size()))].second.assign(v.begin(), v.end());
    }
  }
  for (const auto& [name, m] : moments) {
    if (m.first.size() != m.second.size()) {
      throw CorruptionError("checkpoint: moment arrays of '" + name + "' differ in length");
    }
  }
  adam.moments() = std::move(moments);
  adam.set_step_count(ckpt.state.adam_step);
}

RetrievalModel model_from_checkpoint(const Checkpoint& ckpt) {
  RetrievalModel model(ckpt.model, checkpoint_frame_capacity(ckpt), 0);
  restore_model(ckpt, model);
  return model;
}

Vocabulary vocab_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.vocab.empty()) throw FormatError("checkpoint: no vocabulary stored");
  return Vocabulary(ckpt.vocab);
}

}  // namespace vtr
