#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cleardr/sequencer.hpp"

namespace cleardr {

struct AugmentFlags {
  bool horizontal_flip = true;
  bool vertical_flip = true;
};

struct TrainConfig {
  float learning_rate = 0.01f;
  float momentum = 0.9f;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 7;
  AugmentFlags augment;
  double split_fraction = 0.9;

  // Throws ConfigError on a negative learning rate, split outside (0, 1), or
  // zero batch size. A learning rate of exactly 0 is accepted (frozen weights).
  void validate() const;
};

struct Sample {
  Tensor image;  // (1, c, h, w), unnormalized
  std::size_t grade = 0;
  std::string id;
};

struct LabeledDataset {
  std::vector<Sample> samples;
  std::size_t grade_count = 0;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  // Throws DomainError when a grade index is out of range or shapes differ.
  void validate() const;
};

// Distinct wrappers so normalization statistics can only come from training data.
struct TrainSet {
  LabeledDataset data;
};
struct TestSet {
  LabeledDataset data;
};

// Seeded shuffle, then the first ceil(fraction * n) samples train.
std::pair<TrainSet, TestSet> split(const LabeledDataset& dataset, double fraction, std::uint64_t seed);

// Each enabled flip is applied independently with probability 1/2.
Tensor augment(const Tensor& image, AugmentFlags flags, std::uint64_t seed);
Tensor flip_horizontal(const Tensor& image);
Tensor flip_vertical(const Tensor& image);

// Dataset-global per-channel mean and population standard deviation.
ChannelStats channel_stats(const TrainSet& train);

// (x - mean) / std per channel. Throws DomainError on a non-positive std.
Tensor normalize_channels(const Tensor& image, const ChannelStats& stats);
Tensor denormalize_channels(const Tensor& image, const ChannelStats& stats);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;  // NaN when no test set was supplied
};

using ProgressSink = std::function<void(const EpochMetrics&)>;

struct TrainResult {
  SequencerModel model;
  std::vector<EpochMetrics> metrics;
};

// Gradients of the traced loss with respect to every bank (same order as
// model.banks), given d(loss)/d(logits).
std::vector<KernelBank> backward(const SequencerModel& model, const ForwardTrace& trace, const Tensor& grad_logits);

// One momentum-SGD update in place: v = momentum * v + g; w -= lr * v.
void sgd_step(std::vector<KernelBank>& banks, std::vector<KernelBank>& velocity, const std::vector<KernelBank>& grads,
              float learning_rate, float momentum);

// Mini-batch momentum SGD on softmax cross-entropy. Computes normalization
// statistics from the training set and stores them in the returned model.
// Throws DivergenceError when the loss becomes non-finite.
TrainResult train(const SequencerModel& initial, const TrainSet& train_set, const TrainConfig& config,
                  const ProgressSink& progress = {}, const TestSet* test_set = nullptr);

struct Evaluation {
  double accuracy = 0.0;
  // confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
  std::size_t total = 0;
};

// Applies the model's normalization, predicts every sample and tallies.
Evaluation evaluate(const SequencerModel& model, const TestSet& test_set);

// Normalized, batched input for the model from raw (1, c, h, w) samples.
Tensor stack_images(const std::vector<const Tensor*>& images);

// Formats one metrics line: epoch,mean_loss,train_acc,test_acc
std::string format_metrics_line(const EpochMetrics& m);

}  // namespace cleardr
