#include "cleardr/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#include "cleardr/error.hpp"

namespace cleardr {
namespace {

// splitmix64 finalizer; derives independent per-(epoch, sample) seeds.
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void check_stats(const ChannelStats& stats, std::size_t channels) {
  if (stats.mean.size() != channels || stats.stddev.size() != channels) {
    throw ShapeError("normalization statistics for " + std::to_string(stats.mean.size()) + " channels, image has " +
                     std::to_string(channels));
  }
  for (std::size_t c = 0; c < channels; ++c) {
    if (!(stats.stddev[c] > 0.0f)) throw DomainError("channel " + std::to_string(c) + " has non-positive std");
  }
}

Tensor normalized_batch(const std::vector<const Tensor*>& raw, const ChannelStats& stats) {
  Tensor batch = stack_images(raw);
  const Shape& s = batch.shape();
  check_stats(stats, s.c);
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      float* p = batch.plane(b, c);
      const float m = stats.mean[c];
      const float inv = 1.0f / stats.stddev[c];
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] = (p[i] - m) * inv;
    }
  }
  return batch;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0f) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("momentum must be in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split fraction must be in (0, 1)");
}

void LabeledDataset::validate() const {
  if (grade_count == 0) throw DomainError("dataset has no grades");
  for (const auto& s : samples) {
    if (s.grade >= grade_count) {
      throw DomainError("sample '" + s.id + "' has grade " + std::to_string(s.grade) + " outside [0, " +
                        std::to_string(grade_count) + ")");
    }
    if (s.image.shape() != samples.front().image.shape() || s.image.shape().n != 1) {
      throw ShapeError("sample '" + s.id + "' has shape " + s.image.shape().str());
    }
  }
}

std::pair<TrainSet, TestSet> split(const LabeledDataset& dataset, double fraction, std::uint64_t seed) {
  if (dataset.empty()) throw DomainError("split: dataset is empty");
  if (!(fraction > 0.0 && fraction < 1.0)) throw DomainError("split: fraction must be in (0, 1)");
  const std::size_t n = dataset.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  // Guard against 0.9 * 10 = 9.000000000000002 style rounding before ceil.
  const std::size_t n_train = std::min(n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  TrainSet train{LabeledDataset{{}, dataset.grade_count}};
  TestSet test{LabeledDataset{{}, dataset.grade_count}};
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_train ? train.data : test.data).samples.push_back(dataset.samples[order[i]]);
  }
  return {std::move(train), std::move(test)};
}

Tensor flip_horizontal(const Tensor& image) {
  const Shape& s = image.shape();
  Tensor out(s);
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) out.at(b, c, y, x) = image.at(b, c, y, s.w - 1 - x);
  return out;
}

Tensor flip_vertical(const Tensor& image) {
  const Shape& s = image.shape();
  Tensor out(s);
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) out.at(b, c, y, x) = image.at(b, c, s.h - 1 - y, x);
  return out;
}

Tensor augment(const Tensor& image, AugmentFlags flags, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const bool h = (rng() & 1u) != 0;
  const bool v = (rng() & 1u) != 0;
  Tensor out = image;
  if (flags.horizontal_flip && h) out = flip_horizontal(out);
  if (flags.vertical_flip && v) out = flip_vertical(out);
  return out;
}

ChannelStats channel_stats(const TrainSet& train) {
  const LabeledDataset& d = train.data;
  if (d.empty()) throw DomainError("channel_stats: training set is empty");
  const std::size_t channels = d.samples.front().image.shape().c;
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  double count = 0.0;
  for (const auto& s : d.samples) {
    const Shape& sh = s.image.shape();
    if (sh.c != channels) throw ShapeError("channel_stats: inconsistent channel count");
    for (std::size_t c = 0; c < channels; ++c) {
      const float* p = s.image.plane(0, c);
      for (std::size_t i = 0; i < sh.plane(); ++i) {
        sum[c] += p[i];
        sq[c] += static_cast<double>(p[i]) * p[i];
      }
    }
    count += static_cast<double>(sh.plane());
  }
  ChannelStats stats;
  for (std::size_t c = 0; c < channels; ++c) {
    const double mean = sum[c] / count;
    const double var = std::max(0.0, sq[c] / count - mean * mean);
    stats.mean.push_back(static_cast<float>(mean));
    stats.stddev.push_back(static_cast<float>(std::sqrt(var)));
  }
  return stats;
}

Tensor normalize_channels(const Tensor& image, const ChannelStats& stats) {
  return normalized_batch({&image}, stats);
}

Tensor denormalize_channels(const Tensor& image, const ChannelStats& stats) {
  const Shape& s = image.shape();
  check_stats(stats, s.c);
  Tensor out = image;
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      float* p = out.plane(b, c);
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] = p[i] * stats.stddev[c] + stats.mean[c];
    }
  }
  return out;
}

Tensor stack_images(const std::vector<const Tensor*>& images) {
  if (images.empty()) throw ShapeError("stack_images: no images");
  const Shape one = images.front()->shape();
  Shape s = one;
  s.n = 0;
  for (const Tensor* t : images) s.n += t->shape().n;
  Tensor out(s);
  std::size_t at = 0;
  for (const Tensor* t : images) {
    const Shape& ts = t->shape();
    if (ts.c != one.c || ts.h != one.h || ts.w != one.w) {
      throw ShapeError("stack_images: " + ts.str() + " differs from " + one.str());
    }
    std::copy(t->data().begin(), t->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(at));
    at += t->size();
  }
  return out;
}

std::vector<KernelBank> backward(const SequencerModel& model, const ForwardTrace& trace, const Tensor& grad_logits) {
  const auto& layers = model.config.layers;
  std::vector<KernelBank> grads(model.banks.size());
  Tensor upstream = grad_logits;
  for (std::size_t i = layers.size(); i-- > 0;) {
    const Tensor& in = trace.layer_input(i);
    if (const auto* conv = std::get_if<ConvSpec>(&layers[i])) {
      const std::size_t b = model.bank_for_layer(i);
      ConvGrads g = conv2d_grads(in, model.banks[b], upstream, ConvGeometry{conv->stride, conv->pad});
      grads[b] = std::move(g.grad_kernels);
      if (b == 0) break;  // nothing trainable below the first conv
      upstream = std::move(g.grad_input);
    } else if (std::holds_alternative<ReluSpec>(layers[i])) {
      upstream = relu_backward(upstream, *trace.gates[i]);
    } else if (std::holds_alternative<MaxPoolSpec>(layers[i])) {
      upstream = unpool(upstream, *trace.switches[i]);
    } else {
      upstream = global_average_pool_backward(upstream, in.shape());
    }
  }
  return grads;
}

void sgd_step(std::vector<KernelBank>& banks, std::vector<KernelBank>& velocity, const std::vector<KernelBank>& grads,
              float learning_rate, float momentum) {
  for (std::size_t b = 0; b < banks.size(); ++b) {
    auto w = banks[b].weights.data();
    auto v = velocity[b].weights.data();
    auto g = grads[b].weights.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      w[i] -= learning_rate * v[i];
    }
    auto& bw = banks[b].bias;
    auto& bv = velocity[b].bias;
    const auto& bg = grads[b].bias;
    for (std::size_t i = 0; i < bw.size(); ++i) {
      bv[i] = momentum * bv[i] + bg[i];
      bw[i] -= learning_rate * bv[i];
    }
  }
}

TrainResult train(const SequencerModel& initial, const TrainSet& train_set, const TrainConfig& config,
                  const ProgressSink& progress, const TestSet* test_set) {
  config.validate();
  const LabeledDataset& data = train_set.data;
  if (data.empty()) throw DomainError("train: training set is empty");
  data.validate();
  if (data.grade_count != initial.config.grades.count()) {
    throw DomainError("train: dataset has " + std::to_string(data.grade_count) + " grades, model has " +
                      std::to_string(initial.config.grades.count()));
  }
  TrainResult result{initial, {}};
  SequencerModel& model = result.model;
  model.normalization = channel_stats(train_set);
  // A constant channel carries no information; keep it finite instead of failing.
  for (float& s : model.normalization.stddev) {
    if (!(s > 0.0f)) s = 1.0f;
  }

  std::vector<KernelBank> velocity;
  for (const auto& b : model.banks) {
    const Shape& s = b.weights.shape();
    velocity.emplace_back(s.n, s.c, s.h, s.w);
  }

  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(mix(config.seed));

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::vector<Tensor> augmented;
      std::vector<std::size_t> labels;
      augmented.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = data.samples[order[i]];
        augmented.push_back(augment(s.image, config.augment, mix(config.seed ^ mix(epoch * 0x100000001ULL + order[i]))));
        labels.push_back(s.grade);
      }
      std::vector<const Tensor*> ptrs;
      for (const auto& t : augmented) ptrs.push_back(&t);
      const Tensor batch = normalized_batch(ptrs, model.normalization);
      const ForwardTrace trace = forward_batch(model, batch);
      const LossResult loss = softmax_cross_entropy(trace.logits, labels);
      if (!std::isfinite(loss.loss)) throw DivergenceError(epoch, "training loss is not finite");
      loss_sum += static_cast<double>(loss.loss) * static_cast<double>(end - start);
      for (std::size_t i = 0; i < labels.size(); ++i) correct += trace.predicted[i] == labels[i] ? 1 : 0;
      const auto grads = backward(model, trace, loss.grad);
      sgd_step(model.banks, velocity, grads, config.learning_rate, config.momentum);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.mean_loss = loss_sum / static_cast<double>(n);
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    m.test_accuracy = (test_set != nullptr && !test_set->data.empty()) ? evaluate(model, *test_set).accuracy
                                                                        : std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(m.mean_loss)) throw DivergenceError(epoch, "mean epoch loss is not finite");
    result.metrics.push_back(m);
    if (progress) progress(m);
  }
  return result;
}

Evaluation evaluate(const SequencerModel& model, const TestSet& test_set) {
  const LabeledDataset& data = test_set.data;
  if (data.empty()) throw DomainError("evaluate: test set is empty");
  const std::size_t grades = model.config.grades.count();
  Evaluation ev;
  ev.confusion.assign(grades, std::vector<std::size_t>(grades, 0));
  ev.total = data.size();
  constexpr std::size_t kChunk = 32;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t end = std::min(data.size(), start + kChunk);
    std::vector<const Tensor*> ptrs;
    for (std::size_t i = start; i < end; ++i) {
      if (data.samples[i].grade >= grades) {
        throw DomainError("evaluate: sample '" + data.samples[i].id + "' grade outside the model's grade set");
      }
      ptrs.push_back(&data.samples[i].image);
    }
    const ForwardTrace trace = forward_batch(model, normalized_batch(ptrs, model.normalization));
    for (std::size_t i = start; i < end; ++i) {
      const std::size_t truth = data.samples[i].grade;
      const std::size_t pred = trace.predicted[i - start];
      ++ev.confusion[truth][pred];
      correct += truth == pred ? 1 : 0;
    }
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(ev.total);
  return ev;
}

std::string format_metrics_line(const EpochMetrics& m) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f", m.epoch, m.mean_loss, m.train_accuracy, m.test_accuracy);
  return buf;
}

}  // namespace cleardr
