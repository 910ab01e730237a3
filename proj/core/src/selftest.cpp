#include "cleardr/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "cleardr/clear.hpp"
#include "cleardr/ops.hpp"
#include "cleardr/oracle/dense.hpp"
#include "cleardr/sequencer.hpp"

namespace cleardr {
namespace {

using Rng = std::mt19937_64;

Tensor random_tensor(Shape s, Rng& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor t(s);
  for (float& v : t.data()) v = u(rng);
  return t;
}

KernelBank random_bank(std::size_t k, std::size_t c, std::size_t kh, std::size_t kw, Rng& rng) {
  KernelBank b(k, c, kh, kw);
  b.weights = random_tensor(b.weights.shape(), rng);
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  for (float& v : b.bias) v = u(rng);
  return b;
}

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

CheckResult adjoint_identity(const SelftestOptions& o) {
  Rng rng(o.seed);
  std::uniform_int_distribution<std::size_t> pick(0, 1), ksz(1, 3), ch(1, 3), ext(4, 9);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t stride = 1 + pick(rng), pad = pick(rng), kh = ksz(rng), kw = ksz(rng);
    const Shape in{1 + pick(rng), ch(rng), ext(rng), ext(rng)};
    KernelBank kb = random_bank(ch(rng), in.c, kh, kw, rng);
    const ConvGeometry geo{stride, pad};
    const Tensor a = random_tensor(in, rng);
    const Tensor b = random_tensor(conv2d_output_shape(in, kb, geo), rng);
    KernelBank adj_kb = kb;
    if (o.perturb_adjoint) adj_kb.weights[0] += 0.5f;
    const double lhs = dot(conv2d_linear(a, kb, geo).data(), b.data());
    const double rhs = dot(a.data(), conv2d_adjoint(b, adj_kb, geo, in).data());
    worst = std::max(worst, std::abs(lhs - rhs) / (norm2(a.data()) * norm2(b.data())));
  }
  return {"adjoint_identity", worst <= 1e-4, fmt("max relative mismatch %.3g", worst)};
}

CheckResult unpool_adjoint(const SelftestOptions& o) {
  Rng rng(o.seed + 1);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor(Shape{1, 3, 8, 8}, rng);
    auto [pooled, sw] = maxpool(a, 2, 2);
    const Tensor b = random_tensor(pooled.shape(), rng);
    const double lhs = dot(pooled.data(), b.data());
    const double rhs = dot(a.data(), unpool(b, sw).data());
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return {"unpool_adjoint", worst <= 1e-5, fmt("max mismatch %.3g", worst)};
}

CheckResult dense_conv(const SelftestOptions& o) {
  Rng rng(o.seed + 2);
  double worst = 0.0;
  for (std::size_t stride : {1, 2})
    for (std::size_t pad : {0, 1}) {
      const Shape in{1, 2, 6, 6};
      const KernelBank kb = random_bank(3, 2, 3, 3, rng);
      const Tensor x = random_tensor(in, rng);
      const ConvGeometry geo{stride, pad};
      const oracle::Matrix g = oracle::conv_matrix(kb, in, stride, pad);
      const auto fwd = g.apply(oracle::widen(x.data()));
      const Tensor y = conv2d_linear(x, kb, geo);
      const Tensor r = random_tensor(y.shape(), rng);
      const auto adj = g.apply_transpose(oracle::widen(r.data()));
      const Tensor xr = conv2d_adjoint(r, kb, geo, in);
      for (std::size_t i = 0; i < fwd.size(); ++i) worst = std::max(worst, std::abs(fwd[i] - y[i]));
      for (std::size_t i = 0; i < adj.size(); ++i) worst = std::max(worst, std::abs(adj[i] - xr[i]));
    }
  return {"dense_conv", worst <= 1e-5, fmt("max abs error %.3g", worst)};
}

CheckResult dense_backprojection(const SelftestOptions& o) {
  Rng rng(o.seed + 3);
  SequencerConfig cfg;
  cfg.input = Shape{1, 2, 8, 8};
  cfg.grades = GradeSet::numbered(3);
  cfg.layers = {ConvSpec{3, 3, 3, 1, 1}, ReluSpec{}, MaxPoolSpec{2, 2}, ConvSpec{3, 3, 3, 1, 1}, ReluSpec{}, GapSpec{}};
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    SequencerModel m = initialize(cfg, rng());
    const Tensor x = random_tensor(cfg.input, rng);
    const ForwardTrace t = forward(m, x);
    const oracle::Matrix g1 = oracle::conv_matrix(m.banks[0], cfg.input, 1, 1);
    const oracle::Matrix u1 = oracle::pool_selection_matrix(t.layer_output(1), 2, 2);
    const oracle::Matrix g2 = oracle::conv_matrix(m.banks[1], t.layer_output(2).shape(), 1, 1);
    const oracle::Matrix sum = oracle::channel_sum_matrix(cfg.input);
    // R = S G1^T U1^T G2^T z
    const oracle::Matrix chain = sum * g1.transpose() * u1.transpose() * g2.transpose();
    for (std::size_t d = 0; d < 3; ++d) {
      const auto expect = chain.apply(oracle::widen(isolate_grade(t.final_response(), d).data()));
      const Tensor got = attentive_response(t, m, d, GatingPolicy::kNone);
      for (std::size_t i = 0; i < expect.size(); ++i) worst = std::max(worst, std::abs(expect[i] - got[i]));
    }
  }
  return {"dense_backprojection", worst <= 1e-5, fmt("max abs error %.3g", worst)};
}

CheckResult conv_gradients(const SelftestOptions& o) {
  Rng rng(o.seed + 4);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const Shape in{1, 2, 5, 5};
    const KernelBank kb = random_bank(2, 2, 3, 3, rng);
    const Tensor x = random_tensor(in, rng);
    const ConvGeometry geo{1, 1};
    const Tensor up = random_tensor(conv2d_output_shape(in, kb, geo), rng);
    const ConvGrads g = conv2d_grads(x, kb, up, geo);
    const auto upd = oracle::widen(up.data());
    // L(w, b, x) = <conv(x; w, b), up> evaluated with the dense oracle.
    auto loss = [&](const std::vector<double>& w, const std::vector<double>& b, const std::vector<double>& xv) {
      KernelBank k = kb;
      for (std::size_t i = 0; i < w.size(); ++i) k.weights[i] = static_cast<float>(w[i]);
      const auto y = oracle::conv_matrix(k, in, 1, 1).apply(xv);
      const std::size_t plane = y.size() / b.size();
      double acc = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += (y[i] + b[i / plane]) * upd[i];
      return acc;
    };
    const auto w0 = oracle::widen(kb.weights.data());
    const auto b0 = oracle::widen(kb.bias);
    const auto x0 = oracle::widen(x.data());
    const auto gw = oracle::central_difference([&](const auto& w) { return loss(w, b0, x0); }, w0, 1e-3);
    const auto gb = oracle::central_difference([&](const auto& b) { return loss(w0, b, x0); }, b0, 1e-3);
    const auto gx = oracle::central_difference([&](const auto& xv) { return loss(w0, b0, xv); }, x0, 1e-3);
    for (std::size_t i = 0; i < gw.size(); ++i)
      worst = std::max(worst, oracle::relative_error(gw[i], g.grad_kernels.weights[i]));
    for (std::size_t i = 0; i < gb.size(); ++i) worst = std::max(worst, oracle::relative_error(gb[i], g.grad_kernels.bias[i]));
    for (std::size_t i = 0; i < gx.size(); ++i) worst = std::max(worst, oracle::relative_error(gx[i], g.grad_input[i]));
  }
  return {"conv_gradients", worst <= 1e-3, fmt("max relative error %.3g", worst)};
}

CheckResult loss_gradient(const SelftestOptions& o) {
  Rng rng(o.seed + 5);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor z = random_tensor(Shape{1, 5, 1, 1}, rng);
    const std::size_t label = static_cast<std::size_t>(trial % 5);
    const LossResult r = softmax_cross_entropy(z, label);
    const auto g = oracle::central_difference([&](const auto& v) { return oracle::cross_entropy(v, label); },
                                              oracle::widen(z.data()), 1e-3);
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, oracle::relative_error(g[i], r.grad[i]));
  }
  return {"loss_gradient", worst <= 1e-3, fmt("max relative error %.3g", worst)};
}

}  // namespace

std::vector<CheckResult> run_selftest(const SelftestOptions& options) {
  return {adjoint_identity(options), unpool_adjoint(options), dense_conv(options),
          dense_backprojection(options), conv_gradients(options), loss_gradient(options)};
}

}  // namespace cleardr
