#include "vtr/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "vtr/errors.hpp"

namespace vtr {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (value.empty() || ec != std::errc{} || ptr != end) {
    throw ConfigError("config: bad value '" + value + "' for " + key);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("config: bad boolean '" + value + "' for " + key);
}

struct Field {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

Field size_field(std::string key, std::size_t& ref) {
  return {key, [&ref] { return std::to_string(ref); },
          [&ref, key](const std::string& v) { ref = parse_number<std::size_t>(key, v); }};
}

Field u64_field(std::string key, std::uint64_t& ref) {
  return {key, [&ref] { return std::to_string(ref); },
          [&ref, key](const std::string& v) { ref = parse_number<std::uint64_t>(key, v); }};
}

Field double_field(std::string key, double& ref) {
  return {key, [&ref] { return format_double(ref); },
          [&ref, key](const std::string& v) { ref = parse_number<double>(key, v); }};
}

Field bool_field(std::string key, bool& ref) {
  return {key, [&ref] { return std::string(ref ? "true" : "false"); },
          [&ref, key](const std::string& v) { ref = parse_bool(key, v); }};
}

Field string_field(std::string key, std::string& ref) {
  return {key, [&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }};
}

Field path_field(std::string key, std::filesystem::path& ref) {
  return {key, [&ref] { return ref.string(); }, [&ref](const std::string& v) { ref = v; }};
}

void add_model_fields(std::vector<Field>& f, ModelConfig& m) {
  auto& v = m.video;
  f.push_back(size_field("video.frames_max", v.frames_max));
  f.push_back(size_field("video.height", v.height));
  f.push_back(size_field("video.width", v.width));
  f.push_back(size_field("video.patch", v.patch));
  f.push_back(size_field("video.dim", v.embed_dim));
  f.push_back(size_field("video.heads", v.heads));
  f.push_back(size_field("video.blocks", v.blocks));
  f.push_back(double_field("video.mlp_ratio", v.mlp_ratio));
  f.push_back({"video.attention_style", [&v] { return to_string(v.attention_style); },
               [&v](const std::string& s) { v.attention_style = parse_attention_style(s); }});
  f.push_back(double_field("video.init_std", v.init_std));
  auto& t = m.text;
  f.push_back(size_field("text.vocab_size", t.vocab_size));
  f.push_back(size_field("text.max_len", t.max_len));
  f.push_back(size_field("text.dim", t.embed_dim));
  f.push_back(size_field("text.heads", t.heads));
  f.push_back(size_field("text.blocks", t.blocks));
  f.push_back(double_field("text.mlp_ratio", t.mlp_ratio));
  f.push_back(double_field("text.init_std", t.init_std));
  auto& d = m.dual;
  f.push_back(size_field("dual.common_dim", d.common_dim));
  f.push_back(double_field("dual.temperature", d.temperature));
  f.push_back(bool_field("dual.bias", d.bias));
  f.push_back(double_field("dual.init_std", d.init_std));
}

std::vector<Field> run_fields(RunConfig& c) {
  std::vector<Field> f;
  add_model_fields(f, c.model);
  f.push_back(path_field("data.dir", c.data.dir));
  f.push_back(string_field("data.train", c.data.train));
  f.push_back(string_field("data.val", c.data.val));
  f.push_back(string_field("data.test", c.data.test));
  f.push_back(string_field("data.images", c.data.images));
  f.push_back(string_field("data.vocab", c.data.vocab));
  auto& s = c.data.synth;
  f.push_back(size_field("synth.train_size", s.train_size));
  f.push_back(size_field("synth.val_size", s.val_size));
  f.push_back(size_field("synth.test_size", s.test_size));
  f.push_back(size_field("synth.height", s.height));
  f.push_back(size_field("synth.width", s.width));
  f.push_back(size_field("synth.frames", s.frames));
  f.push_back(size_field("synth.object_size", s.object_size));
  f.push_back(u64_field("synth.seed", s.seed));
  f.push_back(string_field("schedule.stages", c.schedule.stages));
  f.push_back({"schedule.expansion", [&c] { return to_string(c.schedule.expansion); },
               [&c](const std::string& v) { c.schedule.expansion = parse_expansion_method(v); }});
  f.push_back(bool_field("schedule.joint", c.schedule.joint));
  f.push_back(size_field("schedule.image_batch", c.schedule.image_batch));
  auto& a = c.train.adam;
  f.push_back(double_field("train.lr", a.lr));
  f.push_back(double_field("train.beta1", a.beta1));
  f.push_back(double_field("train.beta2", a.beta2));
  f.push_back(double_field("train.eps", a.eps));
  f.push_back(double_field("train.weight_decay", a.weight_decay));
  f.push_back(double_field("train.grad_clip", a.grad_clip));
  f.push_back(size_field("train.log_every", c.train.log_every));
  f.push_back(size_field("train.eval_every_epochs", c.train.eval_every_epochs));
  f.push_back(size_field("train.caption_min", c.train.caption_min));
  f.push_back(size_field("train.caption_max", c.train.caption_max));
  f.push_back(size_field("eval.frames", c.eval.frames));
  f.push_back(size_field("eval.stride", c.eval.stride));
  f.push_back({"eval.direction", [&c] { return to_string(c.eval.direction); },
               [&c](const std::string& v) { c.eval.direction = parse_eval_direction(v); }});
  f.push_back(bool_field("eval.paragraph", c.eval.paragraph));
  f.push_back(size_field("eval.paragraph_min", c.eval.paragraph_min));
  f.push_back(size_field("eval.paragraph_max", c.eval.paragraph_max));
  f.push_back(u64_field("run.seed", c.seed));
  f.push_back(path_field("run.out", c.out));
  return f;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

KeyValues parse_key_values(std::string_view text, const std::string& source) {
  KeyValues out;
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    ++line_no;
    const auto end = text.find('\n', start);
    const auto raw = text.substr(start, end == std::string_view::npos ? text.npos : end - start);
    start = end == std::string_view::npos ? text.size() : end + 1;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    const auto where = source + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ParseError(where + ": expected 'section.key = value'");
    const auto key = trim(line.substr(0, eq));
    if (key.empty() || key.find('.') == std::string_view::npos || key.find(' ') != std::string_view::npos) {
      throw ParseError(where + ": key must look like section.key");
    }
    out.emplace_back(std::string(key), std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

std::string format_key_values(const KeyValues& entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  return out;
}

std::string to_string(EvalDirection direction) {
  switch (direction) {
    case EvalDirection::kTextToVideo:
      return "t2v";
    case EvalDirection::kVideoToText:
      return "v2t";
    case EvalDirection::kBoth:
      return "both";
  }
  throw ConfigError("unknown evaluation direction");
}

EvalDirection parse_eval_direction(std::string_view text) {
  if (text == "t2v") return EvalDirection::kTextToVideo;
  if (text == "v2t") return EvalDirection::kVideoToText;
  if (text == "both") return EvalDirection::kBoth;
  throw ConfigError("unknown evaluation direction '" + std::string(text) + "' (expected t2v, v2t or both)");
}

ModelConfig RunConfig::default_model() {
  ModelConfig m;
  m.video.patch = 16;
  m.video.blocks = 12;
  m.text.blocks = 2;
  m.text.max_len = 12;
  return m;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (auto& field : run_fields(*this)) {
    if (field.key == key) {
      field.set(value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

void RunConfig::apply(const KeyValues& entries) {
  for (const auto& [k, v] : entries) set(k, v);
}

KeyValues RunConfig::entries() const {
  RunConfig copy = *this;
  KeyValues out;
  for (const auto& field : run_fields(copy)) out.emplace_back(field.key, field.get());
  return out;
}

CurriculumSchedule RunConfig::curriculum() const {
  return CurriculumSchedule::parse(schedule.stages, 500, 0, schedule.expansion);
}

void RunConfig::validate() const {
  ModelConfig m = model;
  // The vocabulary size is usually filled in from the corpus later.
  if (m.text.vocab_size == 0) m.text.vocab_size = Vocabulary::kReserved + 1;
  m.validate();
  const CurriculumSchedule sched = curriculum();
  if (sched.max_frames() > model.video.frames_max) {
    throw CapacityError("config: schedule needs " + std::to_string(sched.max_frames()) +
                        " frames but video.frames_max is " + std::to_string(model.video.frames_max));
  }
  if (eval.frames == 0 || eval.frames > model.video.frames_max) {
    throw CapacityError("config: eval.frames must lie in [1, video.frames_max]");
  }
  if (eval.stride == 0) throw ConfigError("config: eval.stride must be positive");
  if (eval.paragraph_min == 0 || eval.paragraph_min > eval.paragraph_max) {
    throw ConfigError("config: need 1 <= eval.paragraph_min <= eval.paragraph_max");
  }
  if (train.caption_min == 0 || train.caption_min > train.caption_max) {
    throw ConfigError("config: need 1 <= train.caption_min <= train.caption_max");
  }
  if (!(train.adam.lr > 0.0)) throw ConfigError("config: train.lr must be positive");
  if (train.log_every == 0) throw ConfigError("config: train.log_every must be positive");
  if (schedule.joint && schedule.image_batch == 0) throw ConfigError("config: schedule.image_batch must be positive");
  data.synth.validate();
  if (data.synth.height != model.video.height || data.synth.width != model.video.width) {
    throw ConfigError("config: synthetic frames are " + std::to_string(data.synth.height) + "x" +
                      std::to_string(data.synth.width) + " but the video encoder expects " +
                      std::to_string(model.video.height) + "x" + std::to_string(model.video.width));
  }
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  base.apply(parse_key_values(read_text(path), path.string()));
  return base;
}

KeyValues model_entries(const ModelConfig& model) {
  ModelConfig copy = model;
  std::vector<Field> fields;
  add_model_fields(fields, copy);
  KeyValues out;
  for (const auto& field : fields) out.emplace_back(field.key, field.get());
  return out;
}

ModelConfig model_from_entries(const KeyValues& entries) {
  ModelConfig model;
  std::vector<Field> fields;
  add_model_fields(fields, model);
  for (const auto& [k, v] : entries) {
    bool found = false;
    for (auto& field : fields) {
      if (field.key == k) {
        field.set(v);
        found = true;
        break;
      }
    }
    if (!found) throw FormatError("model config: unknown key '" + k + "'");
  }
  return model;
}

}  // namespace vtr
