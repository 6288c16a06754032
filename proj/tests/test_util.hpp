#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <unistd.h>

#include "vtr/model.hpp"
#include "vtr/rng.hpp"
#include "vtr/tensor.hpp"

namespace vtr::testing {

inline Tensor random_tensor(Shape shape, SeededRng& rng, double std = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_values()) v = std * rng.normal();
  return t;
}

inline Tensor random_clip(std::size_t frames, std::size_t h, std::size_t w, SeededRng& rng) {
  Tensor t(Shape{frames, 3, h, w});
  for (double& v : t.mutable_values()) v = rng.uniform();
  return t;
}

inline void perturb(const ParamList& params, double std, SeededRng& rng) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_values()) v += std * rng.normal();
  }
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.values(), y = b.values();
  return std::equal(x.begin(), x.end(), y.begin());
}

// 8x8 frames, 4x4 patches, D=8.
inline VideoEncoderConfig tiny_video() {
  VideoEncoderConfig c;
  c.frames_max = 4;
  c.height = 8;
  c.width = 8;
  c.patch = 4;
  c.embed_dim = 8;
  c.heads = 2;
  c.blocks = 2;
  c.mlp_ratio = 2.0;
  return c;
}

inline TextEncoderConfig tiny_text(std::size_t vocab) {
  TextEncoderConfig c;
  c.vocab_size = vocab;
  c.max_len = 8;
  c.embed_dim = 8;
  c.heads = 2;
  c.blocks = 1;
  c.mlp_ratio = 2.0;
  return c;
}

inline ModelConfig tiny_model(std::size_t vocab = 12) {
  ModelConfig m;
  m.video = tiny_video();
  m.text = tiny_text(vocab);
  m.dual.common_dim = 6;
  return m;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("vtr_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace vtr::testing
