#include "cleardr/sequencer.hpp"

#include <charconv>
#include <cmath>
#include <random>
#include <type_traits>

#include "cleardr/checkpoint.hpp"
#include "cleardr/error.hpp"

namespace cleardr {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::size_t> parse_args(std::string_view inside, std::string_view layer) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= inside.size()) {
    std::size_t comma = inside.find(',', pos);
    if (comma == std::string_view::npos) comma = inside.size();
    const std::string tok = trim(inside.substr(pos, comma - pos));
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc{} || ptr != tok.data() + tok.size()) {
      throw ConfigError("bad argument '" + tok + "' in layer '" + std::string(layer) + "'");
    }
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

}  // namespace

GradeSet GradeSet::diabetic_retinopathy() { return GradeSet{{"Negative", "Mild", "Moderate", "Severe", "Proliferative"}}; }

GradeSet GradeSet::numbered(std::size_t n) {
  GradeSet g;
  for (std::size_t i = 0; i < n; ++i) g.names.push_back(std::to_string(i));
  return g;
}

SequencerConfig SequencerConfig::desk_default(GradeSet grades) {
  SequencerConfig cfg;
  const std::size_t n = grades.count();
  cfg.grades = std::move(grades);
  cfg.input = Shape{1, 3, 64, 64};
  cfg.layers = {ConvSpec{16, 3, 3, 1, 1}, ReluSpec{}, MaxPoolSpec{2, 2}, ConvSpec{32, 3, 3, 1, 1},
                ReluSpec{},                MaxPoolSpec{2, 2},         ConvSpec{n, 3, 3, 1, 1}, GapSpec{}};
  return cfg;
}

std::vector<Shape> SequencerConfig::validate() const {
  if (grades.count() == 0) throw ConfigError("grade set is empty");
  if (input.n != 1 || input.c == 0 || input.h == 0 || input.w == 0) {
    throw ConfigError("input shape must be (1, c, h, w) with positive extents, got " + input.str());
  }
  if (layers.empty()) throw ConfigError("no layers");
  std::vector<Shape> shapes;
  shapes.reserve(layers.size());
  Shape cur = input;
  std::size_t gaps = 0;
  std::size_t last_conv = ConfigError::npos;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (gaps > 0) throw ConfigError(i, "no layer may follow gap");
    std::visit(Overloaded{
                   [&](const ConvSpec& c) {
                     if (c.kernels == 0 || c.kh == 0 || c.kw == 0 || c.stride == 0) {
                       throw ConfigError(i, "conv extents and stride must be positive");
                     }
                     if (cur.h + 2 * c.pad < c.kh || cur.w + 2 * c.pad < c.kw) {
                       throw ConfigError(i, "conv kernel does not fit input " + cur.str());
                     }
                     cur = Shape{1, c.kernels, (cur.h + 2 * c.pad - c.kh) / c.stride + 1,
                                 (cur.w + 2 * c.pad - c.kw) / c.stride + 1};
                     last_conv = i;
                   },
                   [&](const ReluSpec&) {},
                   [&](const MaxPoolSpec& p) {
                     if (p.window == 0 || p.stride == 0) throw ConfigError(i, "pool window and stride must be positive");
                     if (p.window > cur.h || p.window > cur.w) {
                       throw ConfigError(i, "pool window larger than input " + cur.str());
                     }
                     cur = Shape{1, cur.c, (cur.h - p.window) / p.stride + 1, (cur.w - p.window) / p.stride + 1};
                   },
                   [&](const GapSpec&) {
                     ++gaps;
                     cur = Shape{1, cur.c, 1, 1};
                   },
               },
               layers[i]);
    shapes.push_back(cur);
  }
  if (last_conv == ConfigError::npos) throw ConfigError("config has no conv layer");
  if (gaps != 1) throw ConfigError(layers.size() - 1, "stack must end with exactly one gap layer");
  const auto& final_conv = std::get<ConvSpec>(layers[last_conv]);
  if (final_conv.kernels != grades.count()) {
    throw ConfigError(last_conv, "final conv has " + std::to_string(final_conv.kernels) + " kernels but there are " +
                                     std::to_string(grades.count()) + " grades");
  }
  return shapes;
}

std::size_t SequencerConfig::gap_index() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (std::holds_alternative<GapSpec>(layers[i])) return i;
  }
  throw ConfigError("config has no gap layer");
}

std::size_t SequencerConfig::final_conv_index() const {
  for (std::size_t i = layers.size(); i-- > 0;) {
    if (std::holds_alternative<ConvSpec>(layers[i])) return i;
  }
  throw ConfigError("config has no conv layer");
}

std::string format_layers(const std::vector<LayerSpec>& layers) {
  std::string out;
  for (const auto& l : layers) {
    if (!out.empty()) out += ',';
    std::visit(Overloaded{
                   [&](const ConvSpec& c) {
                     out += "conv(" + std::to_string(c.kernels) + "," + std::to_string(c.kh) + "," +
                            std::to_string(c.kw) + "," + std::to_string(c.stride) + "," + std::to_string(c.pad) + ")";
                   },
                   [&](const ReluSpec&) { out += "relu"; },
                   [&](const MaxPoolSpec& p) {
                     out += "maxpool(" + std::to_string(p.window) + "," + std::to_string(p.stride) + ")";
                   },
                   [&](const GapSpec&) { out += "gap"; },
               },
               l);
  }
  return out;
}

std::vector<LayerSpec> parse_layers(std::string_view text) {
  std::vector<LayerSpec> layers;
  std::size_t pos = 0;
  while (pos < text.size()) {
    // Split on commas outside parentheses.
    std::size_t end = pos;
    int depth = 0;
    while (end < text.size() && !(depth == 0 && text[end] == ',')) {
      if (text[end] == '(') ++depth;
      if (text[end] == ')') --depth;
      ++end;
    }
    const std::string item = trim(text.substr(pos, end - pos));
    pos = end + 1;
    const std::size_t open = item.find('(');
    const std::string name = trim(item.substr(0, open));
    std::vector<std::size_t> args;
    if (open != std::string::npos) {
      if (item.back() != ')') throw ConfigError("unterminated layer '" + item + "'");
      args = parse_args(std::string_view(item).substr(open + 1, item.size() - open - 2), item);
    }
    if (name == "conv") {
      if (args.size() != 5) throw ConfigError("conv needs (kernels,kh,kw,stride,pad): '" + item + "'");
      layers.emplace_back(ConvSpec{args[0], args[1], args[2], args[3], args[4]});
    } else if (name == "relu" && args.empty()) {
      layers.emplace_back(ReluSpec{});
    } else if (name == "maxpool") {
      if (args.size() != 2) throw ConfigError("maxpool needs (window,stride): '" + item + "'");
      layers.emplace_back(MaxPoolSpec{args[0], args[1]});
    } else if (name == "gap" && args.empty()) {
      layers.emplace_back(GapSpec{});
    } else {
      throw ConfigError("unknown layer '" + item + "'");
    }
  }
  return layers;
}

std::size_t SequencerModel::bank_for_layer(std::size_t layer) const {
  std::size_t bank = 0;
  for (std::size_t i = 0; i < layer; ++i) {
    if (std::holds_alternative<ConvSpec>(config.layers[i])) ++bank;
  }
  if (layer >= config.layers.size() || !std::holds_alternative<ConvSpec>(config.layers[layer])) {
    throw ConfigError(layer, "not a conv layer");
  }
  return bank;
}

std::uint32_t SequencerModel::fingerprint() const { return crc32(encode_model_body(*this)); }

SequencerModel initialize(const SequencerConfig& config, std::uint64_t seed) {
  config.validate();
  SequencerModel model;
  model.config = config;
  model.normalization = ChannelStats{std::vector<float>(config.input.c, 0.0f), std::vector<float>(config.input.c, 1.0f)};
  std::mt19937_64 rng(seed);
  std::size_t channels = config.input.c;
  for (const auto& l : config.layers) {
    if (const auto* c = std::get_if<ConvSpec>(&l)) {
      KernelBank bank(c->kernels, channels, c->kh, c->kw);
      const float fan_in = static_cast<float>(channels * c->kh * c->kw);
      std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / fan_in));
      for (float& w : bank.weights.data()) w = dist(rng);
      model.banks.push_back(std::move(bank));
      channels = c->kernels;
    }
  }
  return model;
}

ForwardTrace forward_batch(const SequencerModel& model, const Tensor& images) {
  const SequencerConfig& cfg = model.config;
  const Shape& s = images.shape();
  if (s.n == 0 || s.c != cfg.input.c || s.h != cfg.input.h || s.w != cfg.input.w) {
    throw ShapeError("forward: image " + s.str() + " does not match model input " + cfg.input.str());
  }
  const std::size_t layers = cfg.layers.size();
  ForwardTrace trace;
  trace.activations.reserve(layers + 1);
  trace.activations.push_back(images);
  trace.switches.resize(layers);
  trace.gates.resize(layers);
  trace.gap_layer = cfg.gap_index();
  std::size_t bank = 0;
  for (std::size_t i = 0; i < layers; ++i) {
    const Tensor& in = trace.activations.back();
    Tensor out = std::visit(Overloaded{
                                [&](const ConvSpec& c) {
                                  return conv2d(in, model.banks.at(bank++), ConvGeometry{c.stride, c.pad});
                                },
                                [&](const ReluSpec&) {
                                  auto [t, mask] = relu(in);
                                  trace.gates[i] = std::move(mask);
                                  return std::move(t);
                                },
                                [&](const MaxPoolSpec& p) {
                                  auto [t, sw] = maxpool(in, p.window, p.stride);
                                  trace.switches[i] = std::move(sw);
                                  return std::move(t);
                                },
                                [&](const GapSpec&) { return global_average_pool(in); },
                            },
                            cfg.layers[i]);
    trace.activations.push_back(std::move(out));
  }
  trace.logits = trace.activations.back();
  for (std::size_t b = 0; b < s.n; ++b) {
    trace.predicted.push_back(argmax(std::span<const float>(trace.logits.plane(b, 0), cfg.grades.count())));
  }
  trace.model_fingerprint = model.fingerprint();
  return trace;
}

ForwardTrace forward(const SequencerModel& model, const Tensor& image) {
  if (image.shape() != model.config.input) {
    throw ShapeError("forward: image " + image.shape().str() + " does not match model input " +
                     model.config.input.str());
  }
  return forward_batch(model, image);
}

GradePrediction predict_grade(const SequencerModel& model, const Tensor& image) {
  const ForwardTrace trace = forward(model, image);
  const Tensor p = softmax(trace.logits);
  return GradePrediction{trace.predicted_grade(), p.values()};
}

std::size_t argmax(std::span<const float> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace cleardr
