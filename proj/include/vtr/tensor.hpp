#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vtr {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_volume(const Shape& shape);

namespace detail {

struct Storage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major float64 array. Copies of a Tensor share storage; use clone()
// for an independent value. A tensor produced by a recorded op is owned by the
// tape's graph and must not be mutated.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t row, std::size_t col) const;
  double operator[](std::size_t i) const { return values()[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  Tensor clone() const;
  bool shares_storage(const Tensor& other) const { return impl_ == other.impl_; }
  bool all_finite() const;

  const std::shared_ptr<detail::Storage>& storage() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Storage> impl) : impl_(std::move(impl)) {}
  friend class Tape;

  std::shared_ptr<detail::Storage> impl_;
};

// Records differentiable operations in execution order and replays their
// backward rules in reverse. A tape constructed with recording disabled makes
// every op a plain forward computation.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  static Tape inference() { return Tape(false); }

  bool recording() const { return recording_; }
  std::size_t size() const { return records_.size(); }

  // True when an op over these inputs must be recorded.
  bool tracks(std::initializer_list<const Tensor*> inputs) const;

  void record(const Tensor& output, std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and replays every record once, newest first.
  // Intermediate gradients are reset at the start; leaf gradients accumulate,
  // so calling backward twice doubles them.
  void backward(const Tensor& loss);

  void clear() { records_.clear(); }

 private:
  struct Record {
    std::shared_ptr<detail::Storage> output;
    std::function<void()> backward;
  };
  bool recording_;
  std::vector<Record> records_;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

}  // namespace vtr
