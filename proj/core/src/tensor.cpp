#include "cleardr/tensor.hpp"

#include <cmath>
#include <utility>

#include "cleardr/error.hpp"

namespace cleardr {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor " + shape_.str() + " needs " + std::to_string(shape_.size()) + " elements, got " +
                     std::to_string(data_.size()));
  }
}

bool Tensor::all_finite() const noexcept {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

KernelBank::KernelBank(std::size_t out_channels, std::size_t in_channels, std::size_t kh, std::size_t kw)
    : weights(Shape{out_channels, in_channels, kh, kw}), bias(out_channels, 0.0f) {
  if (out_channels == 0 || in_channels == 0 || kh == 0 || kw == 0) {
    throw ShapeError("kernel bank extents must be positive, got " + weights.shape().str());
  }
}

KernelBank::KernelBank(Tensor w, std::vector<float> b) : weights(std::move(w)), bias(std::move(b)) {
  const Shape& s = weights.shape();
  if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
    throw ShapeError("kernel bank extents must be positive, got " + s.str());
  }
  if (bias.size() != s.n) {
    throw ShapeError("kernel bank " + s.str() + " needs " + std::to_string(s.n) + " biases, got " +
                     std::to_string(bias.size()));
  }
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

double norm2(std::span<const float> a) { return std::sqrt(dot(a, a)); }

}  // namespace cleardr
