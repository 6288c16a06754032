#include "vtr/data_synth.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "vtr/errors.hpp"

namespace vtr {

std::string to_string(ClipKind kind) { return kind == ClipKind::kImage ? "image" : "video"; }

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

constexpr std::size_t kHeaderBytes = 8 + 5 * 4;

ClipHeader parse_header(const unsigned char* p, const std::filesystem::path& path) {
  if (std::memcmp(p, kClipMagic.data(), kClipMagic.size()) != 0) {
    throw FormatError("clip " + path.string() + ": bad magic");
  }
  ClipHeader h;
  h.version = get_u32(p + 8);
  h.frames = get_u32(p + 12);
  h.channels = get_u32(p + 16);
  h.height = get_u32(p + 20);
  h.width = get_u32(p + 24);
  if (h.version != kClipVersion) throw FormatError("clip " + path.string() + ": unsupported version " + std::to_string(h.version));
  if (h.channels != 3) throw FormatError("clip " + path.string() + ": expected 3 channels");
  if (h.frames == 0 || h.height == 0 || h.width == 0) throw FormatError("clip " + path.string() + ": empty dimensions");
  return h;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("failed reading " + path.string());
  return buf.str();
}

}  // namespace

void write_clip(const std::filesystem::path& path, const Tensor& clip) {
  if (clip.rank() != 4 || clip.dim(1) != 3) {
    throw ShapeError("write_clip: expected [M x 3 x H x W], got " + shape_string(clip.shape()));
  }
  std::string bytes(kClipMagic.begin(), kClipMagic.end());
  put_u32(bytes, kClipVersion);
  put_u32(bytes, static_cast<std::uint32_t>(clip.dim(0)));
  put_u32(bytes, 3);
  put_u32(bytes, static_cast<std::uint32_t>(clip.dim(2)));
  put_u32(bytes, static_cast<std::uint32_t>(clip.dim(3)));
  for (double v : clip.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("write_clip: pixel value outside [0, 1]");
    put_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write clip " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing clip " + path.string());
}

ClipHeader read_clip_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open clip " + path.string());
  unsigned char head[kHeaderBytes];
  in.read(reinterpret_cast<char*>(head), kHeaderBytes);
  if (in.gcount() != static_cast<std::streamsize>(kHeaderBytes)) {
    throw CorruptionError("clip " + path.string() + ": truncated header");
  }
  const ClipHeader h = parse_header(head, path);
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  const std::size_t expected = kHeaderBytes + std::size_t{4} * h.frames * 3 * h.height * h.width;
  if (size != expected) {
    throw CorruptionError("clip " + path.string() + ": payload is " + std::to_string(size) + " bytes, header implies " +
                          std::to_string(expected));
  }
  return h;
}

Tensor read_clip(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < kHeaderBytes) throw CorruptionError("clip " + path.string() + ": truncated header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const ClipHeader h = parse_header(p, path);
  const std::size_t count = std::size_t{h.frames} * 3 * h.height * h.width;
  if (bytes.size() != kHeaderBytes + 4 * count) {
    throw CorruptionError("clip " + path.string() + ": payload length does not match header");
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float f = std::bit_cast<float>(get_u32(p + kHeaderBytes + 4 * i));
    if (!(f >= 0.0f && f <= 1.0f)) throw ValidationError("clip " + path.string() + ": pixel value outside [0, 1]");
    values[i] = f;
  }
  return Tensor(Shape{h.frames, 3, h.height, h.width}, std::move(values));
}

std::string format_manifest_line(const ManifestRecord& r) {
  auto check = [&](const std::string& field) {
    if (field.find_first_of("\t\n\r") != std::string::npos) {
      throw ValidationError("manifest record '" + r.id + "': field contains a tab or newline");
    }
  };
  check(r.id);
  check(r.clip_path);
  std::string line = r.id + '\t' + to_string(r.kind) + '\t' + r.clip_path + '\t' + std::to_string(r.num_frames);
  for (const auto& c : r.captions) {
    check(c);
    line += '\t';
    line += c;
  }
  return line;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& r : records) out << format_manifest_line(r) << '\n';
  if (!out) throw IoError("failed writing manifest " + path.string());
}

std::vector<ManifestRecord> parse_manifest(std::string_view text, const std::string& source) {
  std::vector<ManifestRecord> records;
  std::size_t line_no = 0, start = 0;
  while (start < text.size()) {
    ++line_no;
    const auto end = text.find('\n', start);
    std::string_view line = text.substr(start, end == std::string_view::npos ? text.npos : end - start);
    start = end == std::string_view::npos ? text.size() : end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t f = 0;
    for (;;) {
      const auto tab = line.find('\t', f);
      fields.emplace_back(line.substr(f, tab == std::string_view::npos ? line.npos : tab - f));
      if (tab == std::string_view::npos) break;
      f = tab + 1;
    }
    const auto where = source + ":" + std::to_string(line_no);
    if (fields.size() < 5) throw ParseError(where + ": expected id, kind, clip_path, L and at least one caption");
    ManifestRecord r;
    r.id = fields[0];
    if (r.id.empty()) throw ParseError(where + ": empty id");
    if (fields[1] == "image") {
      r.kind = ClipKind::kImage;
    } else if (fields[1] == "video") {
      r.kind = ClipKind::kVideo;
    } else {
      throw ParseError(where + ": unknown kind '" + fields[1] + "'");
    }
    r.clip_path = fields[2];
    const auto& l = fields[3];
    const auto [ptr, ec] = std::from_chars(l.data(), l.data() + l.size(), r.num_frames);
    if (l.empty() || ec != std::errc{} || ptr != l.data() + l.size() || r.num_frames == 0) {
      throw ParseError(where + ": bad frame count '" + l + "'");
    }
    if (r.kind == ClipKind::kImage && r.num_frames != 1) throw ParseError(where + ": image records must have L = 1");
    r.captions.assign(fields.begin() + 4, fields.end());
    for (const auto& c : r.captions)
      if (c.empty()) throw ParseError(where + ": empty caption");
    records.push_back(std::move(r));
  }
  return records;
}

std::filesystem::path resolve_clip_path(const std::filesystem::path& manifest, const ManifestRecord& record) {
  const std::filesystem::path p(record.clip_path);
  return p.is_absolute() ? p : manifest.parent_path() / p;
}

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("manifest " + path.string() + " does not exist");
  auto records = parse_manifest(read_file(path), path.string());
  for (const auto& r : records) {
    const auto clip = resolve_clip_path(path, r);
    if (!std::filesystem::exists(clip)) {
      throw DanglingReferenceError("manifest " + path.string() + ": record '" + r.id + "' refers to missing clip " +
                                   clip.string());
    }
    const ClipHeader h = read_clip_header(clip);
    if (h.frames != r.num_frames) {
      throw ValidationError("manifest " + path.string() + ": record '" + r.id + "' declares L = " +
                            std::to_string(r.num_frames) + " but the clip has " + std::to_string(h.frames) + " frames");
    }
  }
  return records;
}

std::vector<ClipSample> load_samples(const std::filesystem::path& manifest) {
  std::vector<ClipSample> samples;
  for (auto& r : load_manifest(manifest)) {
    Tensor clip = read_clip(resolve_clip_path(manifest, r));
    samples.push_back({std::move(r), std::move(clip)});
  }
  return samples;
}

void SyntheticSpec::validate() const {
  if (frames < 4 || frames % 4 != 0) throw ConfigError("synthetic: frames per clip must be a positive multiple of 4");
  if (object_size < 4) throw ConfigError("synthetic: object_size must be at least 4");
  // The fast triangle wave swings 4 * 3 pixels either side of centre.
  const std::size_t span = object_size + 2 * 12;
  if (height < span || width < span) {
    throw ConfigError("synthetic: frame must be at least " + std::to_string(span) + " pixels on each side");
  }
}

std::vector<std::string> video_captions(const ClipFactors& f) {
  const std::string c(kColors.at(f.color)), s(kShapes.at(f.shape)), d(kDirections.at(f.direction)),
      v(kSpeeds.at(f.speed));
  const std::string adverb = f.speed == 0 ? "slowly" : "quickly";
  return {c + " " + s + " moving " + d + " " + v, "a " + v + " " + c + " " + s + " goes " + d,
          "the " + c + " " + s + " moves " + d + " " + adverb};
}

std::vector<std::string> image_captions(const ClipFactors& f) {
  const std::string c(kColors.at(f.color)), s(kShapes.at(f.shape));
  return {c + " " + s, "a " + c + " " + s, "the " + c + " " + s};
}

namespace {

constexpr double kPalette[8][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0},
                                   {0, 1, 1}, {1, 0, 1}, {1, 1, 1}, {1, 0.5, 0}};

bool shape_covers(std::size_t shape, std::size_t u, std::size_t v, std::size_t size) {
  const auto centred = [size](std::size_t a) {
    return std::abs(static_cast<long>(2 * a + 1) - static_cast<long>(size));
  };
  const std::size_t t = size / 4;
  switch (shape) {
    case 0:  // square
      return true;
    case 1:  // ring
      return u < t || v < t || u >= size - t || v >= size - t;
    case 2:  // cross
      return centred(u) <= static_cast<long>(t) || centred(v) <= static_cast<long>(t);
    case 3:  // diamond
      return centred(u) + centred(v) <= static_cast<long>(size);
  }
  return false;
}

// One full period over `frames`, unit amplitude, starting at 0 and rising.
long triangle_offset(std::size_t k, std::size_t frames, long amplitude) {
  const long quarter = static_cast<long>(frames / 4);
  const long i = static_cast<long>(k);
  long tri;
  if (i <= quarter) {
    tri = i;
  } else if (i <= 3 * quarter) {
    tri = 2 * quarter - i;
  } else {
    tri = i - 4 * quarter;
  }
  return tri * amplitude / quarter;
}

}  // namespace

Tensor render_clip(const ClipFactors& f, const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width, size = spec.object_size;
  const long step = f.speed == 0 ? 2 : 3;
  const long amplitude = step * 4;
  const long x0 = static_cast<long>(w - size) / 2, y0 = static_cast<long>(h - size) / 2;
  Tensor clip(Shape{spec.frames, 3, h, w});
  auto px = clip.mutable_values();
  for (std::size_t k = 0; k < spec.frames; ++k) {
    const long off = triangle_offset(k, spec.frames, amplitude);
    long x = x0, y = y0;
    switch (f.direction) {
      case 0: x -= off; break;  // left
      case 1: x += off; break;  // right
      case 2: y -= off; break;  // up
      case 3: y += off; break;  // down
    }
    for (std::size_t v = 0; v < size; ++v)
      for (std::size_t u = 0; u < size; ++u) {
        if (!shape_covers(f.shape, u, v, size)) continue;
        const auto row = static_cast<std::size_t>(y) + v, col = static_cast<std::size_t>(x) + u;
        for (std::size_t c = 0; c < 3; ++c) px[((k * 3 + c) * h + row) * w + col] = kPalette[f.color][c];
      }
  }
  return clip;
}

Tensor select_frames(const Tensor& clip, std::span<const std::size_t> indices) {
  if (clip.rank() != 4) throw ShapeError("select_frames: expected [L x 3 x H x W], got " + shape_string(clip.shape()));
  if (indices.empty()) throw ContractError("select_frames: no frames requested");
  const std::size_t frame = clip.size() / clip.dim(0);
  std::vector<double> out;
  out.reserve(indices.size() * frame);
  const auto src = clip.values();
  for (auto i : indices) {
    if (i >= clip.dim(0)) throw ContractError("select_frames: frame " + std::to_string(i) + " out of range");
    out.insert(out.end(), src.begin() + i * frame, src.begin() + (i + 1) * frame);
  }
  return Tensor(Shape{indices.size(), clip.dim(1), clip.dim(2), clip.dim(3)}, std::move(out));
}

Tensor pad_short_clip(const Tensor& clip, std::size_t frames) {
  if (clip.rank() != 4 || clip.dim(0) == 0) throw ShapeError("pad_short_clip: expected [L x 3 x H x W]");
  const std::size_t length = clip.dim(0);
  if (length >= frames) return clip;
  std::vector<std::size_t> idx(frames);
  for (std::size_t i = 0; i < frames; ++i) idx[i] = std::min(i, length - 1);
  return select_frames(clip, idx);
}

namespace {

SyntheticItem make_item(const std::string& split, std::size_t n, const ClipFactors& f, const SyntheticSpec& spec,
                        ClipKind kind) {
  char id[32];
  std::snprintf(id, sizeof id, "%s_%04zu", split.c_str(), n);
  SyntheticItem item;
  item.factors = f;
  auto& r = item.sample.record;
  r.id = id;
  r.kind = kind;
  r.clip_path = "clips/" + split + "/" + r.id + ".fzc";
  if (kind == ClipKind::kVideo) {
    item.sample.clip = render_clip(f, spec);
    r.captions = video_captions(f);
  } else {
    const std::size_t first[] = {0};
    item.sample.clip = select_frames(render_clip(f, spec), first);
    r.captions = image_captions(f);
  }
  r.num_frames = item.sample.clip.dim(0);
  return item;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SeededRng rng(spec.seed);
  // Slot (colour + shape + speed) mod 4 gives a Latin partition of the 64
  // appearance groups; the seed decides which slots are train/val/test.
  std::array<std::size_t, 4> slot_split = {0, 0, 1, 2};
  rng.shuffle(std::span<std::size_t>(slot_split));
  std::array<std::vector<ClipFactors>, 3> groups;
  for (std::size_t c = 0; c < kColors.size(); ++c)
    for (std::size_t s = 0; s < kShapes.size(); ++s)
      for (std::size_t v = 0; v < kSpeeds.size(); ++v) groups[slot_split[(c + s + v) % 4]].push_back({c, s, 0, v});

  const std::array<std::size_t, 3> sizes = {spec.train_size, spec.val_size, spec.test_size};
  const std::array<std::string, 3> names = {"train", "val", "test"};
  SyntheticCorpus corpus;
  std::array<std::vector<SyntheticItem>*, 3> out = {&corpus.train, &corpus.val, &corpus.test};
  for (std::size_t split = 0; split < 3; ++split) {
    auto& g = groups[split];
    const std::size_t available = g.size() * kDirections.size();
    if (sizes[split] > available) {
      throw ConfigError("synthetic: " + names[split] + " size " + std::to_string(sizes[split]) + " exceeds the " +
                        std::to_string(available) + " unique factor combinations available");
    }
    rng.shuffle(std::span<ClipFactors>(g));
    std::size_t n = 0;
    for (const auto& base : g) {
      for (std::size_t d = 0; d < kDirections.size() && n < sizes[split]; ++d, ++n) {
        ClipFactors f = base;
        f.direction = d;
        out[split]->push_back(make_item(names[split], n, f, spec, ClipKind::kVideo));
      }
    }
  }
  // Appearance-only stills from the training groups, one per (colour, shape).
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::size_t n = 0;
  for (const auto& item : corpus.train) {
    const auto key = std::make_pair(item.factors.color, item.factors.shape);
    if (!seen.insert(key).second) continue;
    ClipFactors f = item.factors;
    f.direction = 0;
    corpus.images.push_back(make_item("image", n++, f, spec, ClipKind::kImage));
  }
  return corpus;
}

Vocabulary corpus_vocabulary(const SyntheticCorpus& corpus) {
  std::vector<std::string> captions;
  for (const auto* items : {&corpus.train, &corpus.images})
    for (const auto& item : *items)
      captions.insert(captions.end(), item.sample.record.captions.begin(), item.sample.record.captions.end());
  return build_vocab(captions, 1);
}

std::vector<std::string> write_corpus(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::vector<std::string> produced;
  std::error_code ec;
  const std::pair<const char*, const std::vector<SyntheticItem>*> splits[] = {
      {"train", &corpus.train}, {"val", &corpus.val}, {"test", &corpus.test}, {"images", &corpus.images}};
  for (const auto& [name, items] : splits) {
    std::vector<ManifestRecord> records;
    for (const auto& item : *items) {
      const auto path = dir / item.sample.record.clip_path;
      std::filesystem::create_directories(path.parent_path(), ec);
      if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
      write_clip(path, item.sample.clip);
      produced.push_back(item.sample.record.clip_path);
      records.push_back(item.sample.record);
    }
    write_manifest(dir / (std::string(name) + ".tsv"), records);
    produced.push_back(std::string(name) + ".tsv");
  }
  corpus_vocabulary(corpus).save(dir / "vocab.txt");
  produced.push_back("vocab.txt");
  return produced;
}

std::string concat_captions(const ManifestRecord& record, std::size_t lo, std::size_t hi, SeededRng& rng) {
  const std::size_t n = record.captions.size();
  if (n == 0) throw ContractError("concat_captions: record '" + record.id + "' has no captions");
  lo = std::clamp<std::size_t>(lo, 1, n);
  hi = std::clamp<std::size_t>(hi, lo, n);
  const auto k = static_cast<std::size_t>(rng.uniform_range(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  std::string out;
  for (std::size_t i = 0; i < k; ++i) {
    if (i) out += ' ';
    out += record.captions[order[i]];
  }
  return out;
}

}  // namespace vtr
