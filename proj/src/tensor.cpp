#include "vtr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vtr/errors.hpp"

namespace vtr {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_volume(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) return;  // rank-0 scalar
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : impl_(std::make_shared<detail::Storage>()) {
  check_shape(shape);
  impl_->data.assign(shape_volume(shape), 0.0);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<detail::Storage>()) {
  check_shape(shape);
  if (shape_volume(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_string(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  return s[axis];
}

std::size_t Tensor::size() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::values() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->data;
}

std::span<double> Tensor::mutable_values() {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->data;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  const auto& s = shape();
  if (s.size() != 2) throw ShapeError("at(row, col) needs a rank-2 tensor, got " + shape_string(s));
  return impl_->data[row * s[1] + col];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!impl_) throw ContractError("use of undefined tensor");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!impl_) throw ContractError("use of undefined tensor");
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  if (!impl_) return {};
  return Tensor(impl_->shape, impl_->data);
}

bool Tensor::all_finite() const {
  return std::all_of(values().begin(), values().end(), [](double v) { return std::isfinite(v); });
}

bool Tape::tracks(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void Tape::record(const Tensor& output, std::function<void()> backward) {
  output.impl_->requires_grad = true;
  records_.push_back({output.impl_, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward needs a scalar loss, got " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) throw ContractError("loss is not reachable from any tracked parameter");
  for (auto& r : records_) {
    r.output->grad.assign(r.output->data.size(), 0.0);
  }
  loss.impl_->ensure_grad();
  loss.impl_->grad[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backward();
}

}  // namespace vtr
