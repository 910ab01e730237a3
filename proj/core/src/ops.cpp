#include "cleardr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "cleardr/error.hpp"
#include "cleardr/parallel.hpp"

namespace cleardr {
namespace {

struct ConvDims {
  std::size_t c, h, w;         // input plane
  std::size_t k, kh, kw;       // kernels
  std::size_t oh, ow;          // output plane
  std::size_t stride, pad;
  std::size_t rows() const { return c * kh * kw; }
  std::size_t cols() const { return oh * ow; }
};

ConvDims make_dims(const Shape& in, const KernelBank& kb, ConvGeometry geo) {
  const Shape out = conv2d_output_shape(in, kb, geo);
  return ConvDims{in.c, in.h, in.w, kb.out_channels(), kb.kernel_h(), kb.kernel_w(), out.h, out.w, geo.stride,
                  geo.padding};
}

// col[(ci*kh + i)*kw + j][oy*ow + ox] = x[ci][oy*s - p + i][ox*s - p + j]
void im2col(const float* x, const ConvDims& d, float* col) {
  for (std::size_t ci = 0; ci < d.c; ++ci) {
    const float* xp = x + ci * d.h * d.w;
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        float* row = col + ((ci * d.kh + i) * d.kw + j) * d.cols();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * d.stride + i) - static_cast<long>(d.pad);
          float* dst = row + oy * d.ow;
          if (iy < 0 || iy >= static_cast<long>(d.h)) {
            std::fill(dst, dst + d.ow, 0.0f);
            continue;
          }
          const float* src = xp + static_cast<std::size_t>(iy) * d.w;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long ix = static_cast<long>(ox * d.stride + j) - static_cast<long>(d.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(d.w)) ? 0.0f : src[ix];
          }
        }
      }
    }
  }
}

// Accumulates col back into the input plane; inverse routing of im2col.
void col2im(const float* col, const ConvDims& d, float* x) {
  for (std::size_t ci = 0; ci < d.c; ++ci) {
    float* xp = x + ci * d.h * d.w;
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        const float* row = col + ((ci * d.kh + i) * d.kw + j) * d.cols();
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * d.stride + i) - static_cast<long>(d.pad);
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          float* dst = xp + static_cast<std::size_t>(iy) * d.w;
          const float* src = row + oy * d.ow;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long ix = static_cast<long>(ox * d.stride + j) - static_cast<long>(d.pad);
            if (ix >= 0 && ix < static_cast<long>(d.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// out[kk][p] = init + sum_r W[kk][r] * col[r][p] for one output channel.
void gemm_row(const float* wrow, const float* col, std::size_t rows, std::size_t cols, float init, float* out) {
  std::fill(out, out + cols, init);
  for (std::size_t r = 0; r < rows; ++r) {
    const float wv = wrow[r];
    const float* src = col + r * cols;
    for (std::size_t p = 0; p < cols; ++p) out[p] += wv * src[p];
  }
}

// Eight-lane float dot; lane order is fixed so the result is reproducible.
float dot8(const float* a, const float* b, std::size_t n) {
  float lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[i + l] * b[i + l];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

Tensor conv_forward(const Tensor& input, const KernelBank& kb, ConvGeometry geo, bool with_bias) {
  const ConvDims d = make_dims(input.shape(), kb, geo);
  const std::size_t n = input.shape().n;
  Tensor out(Shape{n, d.k, d.oh, d.ow});
  const float* weights = kb.weights.data().data();
  if (n >= thread_count() && n > 1) {
    parallel_for(n, [&](std::size_t b) {
      std::vector<float> col(d.rows() * d.cols());
      im2col(input.plane(b, 0), d, col.data());
      for (std::size_t kk = 0; kk < d.k; ++kk) {
        gemm_row(weights + kk * d.rows(), col.data(), d.rows(), d.cols(), with_bias ? kb.bias[kk] : 0.0f,
                 out.plane(b, kk));
      }
    });
  } else {
    std::vector<float> col(d.rows() * d.cols());
    for (std::size_t b = 0; b < n; ++b) {
      im2col(input.plane(b, 0), d, col.data());
      parallel_for(d.k, [&](std::size_t kk) {
        gemm_row(weights + kk * d.rows(), col.data(), d.rows(), d.cols(), with_bias ? kb.bias[kk] : 0.0f,
                 out.plane(b, kk));
      });
    }
  }
  return out;
}

void adjoint_sample(const float* g, const float* weights, const ConvDims& d, float* col, float* x) {
  // col[r][p] = sum_k W[k][r] * g[k][p]
  std::fill(col, col + d.rows() * d.cols(), 0.0f);
  for (std::size_t kk = 0; kk < d.k; ++kk) {
    const float* grow = g + kk * d.cols();
    const float* wrow = weights + kk * d.rows();
    for (std::size_t r = 0; r < d.rows(); ++r) {
      const float wv = wrow[r];
      float* dst = col + r * d.cols();
      for (std::size_t p = 0; p < d.cols(); ++p) dst[p] += wv * grow[p];
    }
  }
  std::fill(x, x + d.c * d.h * d.w, 0.0f);
  col2im(col, d, x);
}

}  // namespace

Shape conv2d_output_shape(const Shape& in, const KernelBank& kb, ConvGeometry geo) {
  if (geo.stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (in.c != kb.in_channels()) {
    throw ShapeError("conv2d: input " + in.str() + " has " + std::to_string(in.c) + " channels but kernels " +
                     kb.weights.shape().str() + " expect " + std::to_string(kb.in_channels()));
  }
  const std::size_t ph = in.h + 2 * geo.padding;
  const std::size_t pw = in.w + 2 * geo.padding;
  if (ph < kb.kernel_h() || pw < kb.kernel_w()) {
    throw ShapeError("conv2d: kernels " + kb.weights.shape().str() + " do not fit padded input " + in.str());
  }
  return Shape{in.n, kb.out_channels(), (ph - kb.kernel_h()) / geo.stride + 1, (pw - kb.kernel_w()) / geo.stride + 1};
}

Tensor conv2d(const Tensor& input, const KernelBank& kernels, ConvGeometry geo) {
  return conv_forward(input, kernels, geo, true);
}

Tensor conv2d_linear(const Tensor& input, const KernelBank& kernels, ConvGeometry geo) {
  return conv_forward(input, kernels, geo, false);
}

Tensor conv2d_adjoint(const Tensor& response, const KernelBank& kernels, ConvGeometry geo, const Shape& input_shape) {
  const Shape expected = conv2d_output_shape(input_shape, kernels, geo);
  if (response.shape() != expected) {
    throw ShapeError("conv2d_adjoint: response " + response.shape().str() + " does not match conv output " +
                     expected.str() + " for input " + input_shape.str());
  }
  const ConvDims d = make_dims(input_shape, kernels, geo);
  Tensor out(input_shape);
  const float* weights = kernels.weights.data().data();
  parallel_for(input_shape.n, [&](std::size_t b) {
    std::vector<float> col(d.rows() * d.cols());
    adjoint_sample(response.plane(b, 0), weights, d, col.data(), out.plane(b, 0));
  });
  return out;
}

ConvGrads conv2d_grads(const Tensor& input, const KernelBank& kernels, const Tensor& upstream, ConvGeometry geo) {
  const Shape expected = conv2d_output_shape(input.shape(), kernels, geo);
  if (upstream.shape() != expected) {
    throw ShapeError("conv2d_grads: upstream " + upstream.shape().str() + " does not match conv output " +
                     expected.str());
  }
  const ConvDims d = make_dims(input.shape(), kernels, geo);
  ConvGrads g{KernelBank(d.k, d.c, d.kh, d.kw), Tensor(input.shape())};
  float* gw = g.grad_kernels.weights.data().data();
  std::vector<float> col(d.rows() * d.cols());
  for (std::size_t b = 0; b < input.shape().n; ++b) {
    im2col(input.plane(b, 0), d, col.data());
    parallel_for(d.k, [&](std::size_t kk) {
      const float* grow = upstream.plane(b, kk);
      float* wrow = gw + kk * d.rows();
      for (std::size_t r = 0; r < d.rows(); ++r) wrow[r] += dot8(grow, col.data() + r * d.cols(), d.cols());
      float bsum = 0.0f;
      for (std::size_t p = 0; p < d.cols(); ++p) bsum += grow[p];
      g.grad_kernels.bias[kk] += bsum;
    });
  }
  g.grad_input = conv2d_adjoint(upstream, kernels, geo, input.shape());
  return g;
}

std::pair<Tensor, GateMask> relu(const Tensor& input) {
  Tensor out(input.shape());
  GateMask mask{input.shape(), std::vector<std::uint8_t>(input.size(), 0)};
  for (std::size_t i = 0; i < input.size(); ++i) {
    const bool open = input[i] > 0.0f;
    mask.open[i] = open ? 1 : 0;
    out[i] = open ? input[i] : 0.0f;
  }
  return {std::move(out), std::move(mask)};
}

Tensor relu_backward(const Tensor& upstream, const GateMask& mask) {
  if (upstream.shape() != mask.shape) {
    throw ShapeError("relu_backward: upstream " + upstream.shape().str() + " vs mask " + mask.shape.str());
  }
  Tensor out(upstream.shape());
  for (std::size_t i = 0; i < upstream.size(); ++i) out[i] = mask.open[i] ? upstream[i] : 0.0f;
  return out;
}

std::pair<Tensor, SwitchRecord> maxpool(const Tensor& input, std::size_t window, std::size_t stride) {
  const Shape& s = input.shape();
  if (window == 0 || stride == 0) throw ShapeError("maxpool: window and stride must be positive");
  if (window > s.h || window > s.w) {
    throw ShapeError("maxpool: window " + std::to_string(window) + " larger than input " + s.str());
  }
  const Shape ps{s.n, s.c, (s.h - window) / stride + 1, (s.w - window) / stride + 1};
  Tensor out(ps);
  SwitchRecord rec{s, ps, window, stride, std::vector<std::size_t>(ps.size())};
  std::size_t cell = 0;
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t oy = 0; oy < ps.h; ++oy) {
        for (std::size_t ox = 0; ox < ps.w; ++ox, ++cell) {
          std::size_t best = input.index(b, c, oy * stride, ox * stride);
          float best_v = input[best];
          for (std::size_t i = 0; i < window; ++i) {
            for (std::size_t j = 0; j < window; ++j) {
              const std::size_t idx = input.index(b, c, oy * stride + i, ox * stride + j);
              if (input[idx] > best_v) {
                best_v = input[idx];
                best = idx;
              }
            }
          }
          out[cell] = best_v;
          rec.switches[cell] = best;
        }
      }
    }
  }
  return {std::move(out), std::move(rec)};
}

Tensor unpool(const Tensor& response, const SwitchRecord& switches) {
  if (response.shape() != switches.pooled_shape) {
    throw ShapeError("unpool: response " + response.shape().str() + " does not match pooled shape " +
                     switches.pooled_shape.str());
  }
  Tensor out(switches.input_shape);
  for (std::size_t i = 0; i < response.size(); ++i) out[switches.switches[i]] += response[i];
  return out;
}

Tensor global_average_pool(const Tensor& input) {
  const Shape& s = input.shape();
  if (s.h == 0 || s.w == 0) throw ShapeError("global_average_pool: empty spatial extent " + s.str());
  Tensor out(Shape{s.n, s.c, 1, 1});
  const float inv = 1.0f / static_cast<float>(s.plane());
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const float* p = input.plane(b, c);
      float acc = 0.0f;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      out.at(b, c, 0, 0) = acc * inv;
    }
  }
  return out;
}

Tensor global_average_pool_backward(const Tensor& upstream, const Shape& input_shape) {
  if (upstream.shape() != Shape{input_shape.n, input_shape.c, 1, 1}) {
    throw ShapeError("global_average_pool_backward: upstream " + upstream.shape().str() + " vs input " +
                     input_shape.str());
  }
  Tensor out(input_shape);
  const float inv = 1.0f / static_cast<float>(input_shape.plane());
  for (std::size_t b = 0; b < input_shape.n; ++b) {
    for (std::size_t c = 0; c < input_shape.c; ++c) {
      float* p = out.plane(b, c);
      std::fill(p, p + input_shape.plane(), upstream.at(b, c, 0, 0) * inv);
    }
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  const Shape& s = logits.shape();
  if (s.h != 1 || s.w != 1) throw ShapeError("softmax: logits must be (n, N, 1, 1), got " + s.str());
  Tensor out(s);
  for (std::size_t b = 0; b < s.n; ++b) {
    const float* z = logits.plane(b, 0);
    float* p = out.plane(b, 0);
    const float m = *std::max_element(z, z + s.c);
    float total = 0.0f;
    for (std::size_t k = 0; k < s.c; ++k) {
      p[k] = std::exp(z[k] - m);
      total += p[k];
    }
    for (std::size_t k = 0; k < s.c; ++k) p[k] /= total;
  }
  return out;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  const Shape& s = logits.shape();
  if (s.h != 1 || s.w != 1 || s.c == 0) {
    throw ShapeError("softmax_cross_entropy: logits must be (n, N, 1, 1), got " + s.str());
  }
  if (labels.size() != s.n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(s.n));
  }
  LossResult r{0.0f, softmax(logits)};
  const float inv_n = 1.0f / static_cast<float>(s.n);
  double total = 0.0;
  for (std::size_t b = 0; b < s.n; ++b) {
    if (labels[b] >= s.c) {
      throw DomainError("softmax_cross_entropy: label " + std::to_string(labels[b]) + " outside [0, " +
                        std::to_string(s.c) + ")");
    }
    const float* z = logits.plane(b, 0);
    const float m = *std::max_element(z, z + s.c);
    float sum = 0.0f;
    for (std::size_t k = 0; k < s.c; ++k) sum += std::exp(z[k] - m);
    total += static_cast<double>(m + std::log(sum) - z[labels[b]]);
    float* g = r.grad.plane(b, 0);
    g[labels[b]] -= 1.0f;
    for (std::size_t k = 0; k < s.c; ++k) g[k] *= inv_n;
  }
  r.loss = static_cast<float>(total / static_cast<double>(s.n));
  return r;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  const std::size_t labels[1] = {label};
  return softmax_cross_entropy(logits, std::span<const std::size_t>(labels, 1));
}

}  // namespace cleardr
