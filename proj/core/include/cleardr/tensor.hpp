#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cleardr {

// Extents of a dense (batch, channel, height, width) tensor.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t size() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const;
};

// Dense 4-D float tensor, row-major (n, c, h, w).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept { return data_[index(n, c, h, w)]; }
  float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[index(n, c, h, w)];
  }

  // Pointer to the first element of plane (n, c).
  float* plane(std::size_t n, std::size_t c) noexcept { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const float* plane(std::size_t n, std::size_t c) const noexcept {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  std::vector<float> data_;
};

// Convolution kernels: weights of shape (out k, in c, kh, kw) plus one bias per
// output channel.
struct KernelBank {
  Tensor weights;
  std::vector<float> bias;

  KernelBank() = default;
  KernelBank(std::size_t out_channels, std::size_t in_channels, std::size_t kh, std::size_t kw);
  KernelBank(Tensor weights, std::vector<float> bias);

  std::size_t out_channels() const noexcept { return weights.shape().n; }
  std::size_t in_channels() const noexcept { return weights.shape().c; }
  std::size_t kernel_h() const noexcept { return weights.shape().h; }
  std::size_t kernel_w() const noexcept { return weights.shape().w; }

  friend bool operator==(const KernelBank&, const KernelBank&) = default;
};

// Argmax positions recorded by max pooling. switches[i] is the flat index into
// the pooling input of the element selected for pooled cell i.
struct SwitchRecord {
  Shape input_shape;
  Shape pooled_shape;
  std::size_t window = 0;
  std::size_t stride = 0;
  std::vector<std::size_t> switches;
};

// Forward ReLU gate: open[i] != 0 iff the pre-activation at i was > 0.
struct GateMask {
  Shape shape;
  std::vector<std::uint8_t> open;
};

double dot(std::span<const float> a, std::span<const float> b);
double norm2(std::span<const float> a);

}  // namespace cleardr
