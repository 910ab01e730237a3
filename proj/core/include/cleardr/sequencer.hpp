#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cleardr/ops.hpp"
#include "cleardr/tensor.hpp"

namespace cleardr {

struct GradeSet {
  std::vector<std::string> names;

  std::size_t count() const noexcept { return names.size(); }

  // Negative, Mild, Moderate, Severe, Proliferative.
  static GradeSet diabetic_retinopathy();
  // Grades named "0".."n-1".
  static GradeSet numbered(std::size_t n);

  friend bool operator==(const GradeSet&, const GradeSet&) = default;
};

struct ConvSpec {
  std::size_t kernels = 0;
  std::size_t kh = 3;
  std::size_t kw = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};
struct ReluSpec {
  friend bool operator==(const ReluSpec&, const ReluSpec&) = default;
};
struct MaxPoolSpec {
  std::size_t window = 2;
  std::size_t stride = 2;
  friend bool operator==(const MaxPoolSpec&, const MaxPoolSpec&) = default;
};
struct GapSpec {
  friend bool operator==(const GapSpec&, const GapSpec&) = default;
};

using LayerSpec = std::variant<ConvSpec, ReluSpec, MaxPoolSpec, GapSpec>;

// Layer stack of the radiomic sequencer. The last conv layer carries one kernel
// per grade and global average pooling closes the stack, so each logit is the
// spatial mean of one grade kernel's response.
struct SequencerConfig {
  std::vector<LayerSpec> layers;
  Shape input{1, 3, 64, 64};
  GradeSet grades = GradeSet::diabetic_retinopathy();

  // conv(16)-relu-pool-conv(32)-relu-pool-conv(N)-gap on 3x64x64. No ReLU
  // between the grade kernels and gap: a rectified grade channel that goes
  // negative everywhere never receives gradient again.
  static SequencerConfig desk_default(GradeSet grades = GradeSet::diabetic_retinopathy());

  // Checks the structural rules and shape chaining. Returns the output shape of
  // every layer; throws ConfigError naming the first failing layer.
  std::vector<Shape> validate() const;

  std::size_t gap_index() const;
  std::size_t final_conv_index() const;

  friend bool operator==(const SequencerConfig&, const SequencerConfig&) = default;
};

// "conv(16,3,3,1,1),relu,maxpool(2,2),...,gap"
std::string format_layers(const std::vector<LayerSpec>& layers);
std::vector<LayerSpec> parse_layers(std::string_view text);

// Dataset-global per-channel normalization applied to images before forward.
struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> stddev;
  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

struct SequencerModel {
  SequencerConfig config;
  std::vector<KernelBank> banks;  // one per conv layer, in layer order
  ChannelStats normalization;     // identity (0, 1) unless set by training

  // Index into banks for layer i, which must be a conv layer.
  std::size_t bank_for_layer(std::size_t layer) const;

  // CRC-32 over the checkpoint encoding of this model.
  std::uint32_t fingerprint() const;

  friend bool operator==(const SequencerModel&, const SequencerModel&) = default;
};

// Everything one forward pass recorded. activations[0] is the input and
// activations[i + 1] the output of layer i.
struct ForwardTrace {
  std::vector<Tensor> activations;
  std::vector<std::optional<SwitchRecord>> switches;  // per layer, maxpool only
  std::vector<std::optional<GateMask>> gates;         // per layer, relu only
  Tensor logits;                                      // (n, N, 1, 1)
  std::vector<std::size_t> predicted;                 // per batch item
  std::uint32_t model_fingerprint = 0;
  std::size_t gap_layer = 0;

  const Tensor& input() const { return activations.front(); }
  const Tensor& layer_input(std::size_t i) const { return activations[i]; }
  const Tensor& layer_output(std::size_t i) const { return activations[i + 1]; }
  // The response fed to global average pooling (the last conv stage output).
  const Tensor& final_response() const { return activations[gap_layer]; }
  std::size_t predicted_grade() const { return predicted.front(); }
};

SequencerModel initialize(const SequencerConfig& config, std::uint64_t seed);

// Single-image forward; image must have exactly config.input shape.
ForwardTrace forward(const SequencerModel& model, const Tensor& image);

// Same as forward for a batch (n >= 1) of images.
ForwardTrace forward_batch(const SequencerModel& model, const Tensor& images);

struct GradePrediction {
  std::size_t grade = 0;
  std::vector<float> probabilities;
};

GradePrediction predict_grade(const SequencerModel& model, const Tensor& image);

// Lowest index among the maxima.
std::size_t argmax(std::span<const float> values);

}  // namespace cleardr
