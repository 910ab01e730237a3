#include "cleardr/clear.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cleardr/error.hpp"

namespace cleardr {
namespace {

void check_trace(const SequencerModel& model, const ForwardTrace& trace) {
  if (trace.activations.size() != model.config.layers.size() + 1) {
    throw IntegrityError("trace has " + std::to_string(trace.activations.size()) + " activations, model expects " +
                         std::to_string(model.config.layers.size() + 1));
  }
  if (trace.model_fingerprint != model.fingerprint()) {
    throw IntegrityError("trace was recorded by a different model (fingerprint mismatch)");
  }
  if (trace.input().shape().n != 1) throw ShapeError("back-projection needs a single-image trace");
}

Shape with_batch(Shape s, std::size_t n) {
  s.n = n;
  return s;
}

// Back-projects a batch of final-stage responses through one single-image trace.
Tensor project_batch(const SequencerModel& model, const ForwardTrace& trace, Tensor up, GatingPolicy policy) {
  const std::size_t batch = up.shape().n;
  const Shape expected = with_batch(trace.final_response().shape(), batch);
  if (up.shape() != expected) {
    throw ShapeError("back-projection: response " + up.shape().str() + " does not match final response " +
                     expected.str());
  }
  const auto& layers = model.config.layers;
  for (std::size_t i = trace.gap_layer; i-- > 0;) {
    const Shape in_shape = with_batch(trace.layer_input(i).shape(), batch);
    if (const auto* conv = std::get_if<ConvSpec>(&layers[i])) {
      up = conv2d_adjoint(up, model.banks[model.bank_for_layer(i)], ConvGeometry{conv->stride, conv->pad}, in_shape);
    } else if (std::holds_alternative<ReluSpec>(layers[i])) {
      const auto& open = trace.gates[i]->open;
      const std::size_t per = open.size();
      for (std::size_t k = 0; k < up.size(); ++k) {
        float& g = up[k];
        switch (policy) {
          case GatingPolicy::kNone:
            break;
          case GatingPolicy::kDeconvnet:
            g = g > 0.0f ? g : 0.0f;
            break;
          case GatingPolicy::kGuided:
            g = (g > 0.0f && open[k % per]) ? g : 0.0f;
            break;
        }
      }
    } else if (std::holds_alternative<MaxPoolSpec>(layers[i])) {
      const SwitchRecord& sw = *trace.switches[i];
      const std::size_t pooled = sw.pooled_shape.size();
      const std::size_t source = sw.input_shape.size();
      Tensor out(in_shape);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < pooled; ++j) out[b * source + sw.switches[j]] += up[b * pooled + j];
      }
      up = std::move(out);
    } else {
      throw ConfigError(i, "gap before the final response");
    }
  }
  return up;
}

Tensor collapse_channels(const Tensor& t) {
  const Shape& s = t.shape();
  Tensor out(Shape{s.n, 1, s.h, s.w});
  for (std::size_t b = 0; b < s.n; ++b) {
    float* dst = out.plane(b, 0);
    for (std::size_t c = 0; c < s.c; ++c) {
      const float* src = t.plane(b, c);
      for (std::size_t i = 0; i < s.plane(); ++i) dst[i] += src[i];
    }
  }
  return out;
}

}  // namespace

std::string gating_name(GatingPolicy policy) {
  switch (policy) {
    case GatingPolicy::kDeconvnet:
      return "deconvnet";
    case GatingPolicy::kGuided:
      return "guided";
    case GatingPolicy::kNone:
      return "none";
  }
  return "unknown";
}

GatingPolicy parse_gating(const std::string& name) {
  if (name == "deconvnet") return GatingPolicy::kDeconvnet;
  if (name == "guided") return GatingPolicy::kGuided;
  if (name == "none") return GatingPolicy::kNone;
  throw DomainError("unknown gating policy '" + name + "'; valid policies: deconvnet, guided, none");
}

Tensor back_project_channels(const SequencerModel& model, const ForwardTrace& trace, const Tensor& z,
                             GatingPolicy policy) {
  check_trace(model, trace);
  if (z.shape().n != 1) throw ShapeError("back_project: response must be a single image, got " + z.shape().str());
  return project_batch(model, trace, z, policy);
}

Tensor back_project(const SequencerModel& model, const ForwardTrace& trace, const Tensor& z, GatingPolicy policy) {
  return collapse_channels(back_project_channels(model, trace, z, policy));
}

Tensor isolate_grade(const Tensor& z, std::size_t grade) {
  const Shape& s = z.shape();
  if (grade >= s.c) {
    throw DomainError("grade " + std::to_string(grade) + " outside [0, " + std::to_string(s.c) + ")");
  }
  Tensor out(s);
  for (std::size_t b = 0; b < s.n; ++b) std::copy_n(z.plane(b, grade), s.plane(), out.plane(b, grade));
  return out;
}

Tensor attentive_response(const ForwardTrace& trace, const SequencerModel& model, std::size_t grade,
                          GatingPolicy policy) {
  check_trace(model, trace);
  const std::size_t n = model.config.grades.count();
  if (grade >= n) throw DomainError("grade " + std::to_string(grade) + " outside [0, " + std::to_string(n) + ")");
  return back_project(model, trace, isolate_grade(trace.final_response(), grade), policy);
}

AttentiveResponseStack attentive_stack(const ForwardTrace& trace, const SequencerModel& model, GatingPolicy policy) {
  check_trace(model, trace);
  const Tensor& z = trace.final_response();
  const Shape& s = z.shape();
  const std::size_t n = model.config.grades.count();
  // Row d of the batch holds z with only channel d kept.
  Tensor isolated(Shape{n, s.c, s.h, s.w});
  for (std::size_t d = 0; d < n; ++d) std::copy_n(z.plane(0, d), s.plane(), isolated.plane(d, d));
  const Tensor projected = collapse_channels(project_batch(model, trace, std::move(isolated), policy));
  const Shape& p = projected.shape();
  AttentiveResponseStack stack{Tensor(Shape{1, n, p.h, p.w}, projected.values()), model.config.grades};
  return stack;
}

DominantClassMap dominant_class_map(const AttentiveResponseStack& stack) {
  DominantClassMap out{stack.height(), stack.width(), std::vector<std::uint32_t>(stack.height() * stack.width(), 0)};
  const std::size_t plane = out.height * out.width;
  for (std::size_t p = 0; p < plane; ++p) {
    std::uint32_t best = 0;
    float best_v = stack.maps.plane(0, 0)[p];
    for (std::size_t d = 1; d < stack.count(); ++d) {
      const float v = stack.maps.plane(0, d)[p];
      if (v > best_v) {
        best_v = v;
        best = static_cast<std::uint32_t>(d);
      }
    }
    out.grade[p] = best;
  }
  return out;
}

DominantResponseMap dominant_response_map(const AttentiveResponseStack& stack, const DominantClassMap& classes) {
  if (classes.height != stack.height() || classes.width != stack.width()) {
    throw ShapeError("dominant_response_map: class map and stack differ in size");
  }
  const Shape s{1, 1, stack.height(), stack.width()};
  DominantResponseMap out{Tensor(s), Tensor(s)};
  for (std::size_t p = 0; p < s.plane(); ++p) {
    const std::uint32_t d = classes.grade[p];
    if (d >= stack.count()) throw DomainError("class map entry outside the grade set");
    const float v = stack.maps.plane(0, d)[p];
    out.raw[p] = v;
    out.rectified[p] = v > 0.0f ? v : 0.0f;
  }
  return out;
}

ColorMapDictionary::ColorMapDictionary(std::vector<double> hues) : hues_(std::move(hues)) {
  if (hues_.empty()) throw DomainError("color map dictionary is empty");
  for (std::size_t i = 0; i < hues_.size(); ++i) {
    if (!(hues_[i] >= 0.0 && hues_[i] < 1.0)) throw DomainError("hue outside [0, 1)");
    for (std::size_t j = 0; j < i; ++j) {
      if (hues_[i] == hues_[j]) throw DomainError("color map dictionary is not injective");
    }
  }
}

ColorMapDictionary ColorMapDictionary::evenly_spaced(std::size_t n) {
  std::vector<double> h;
  for (std::size_t d = 0; d < n; ++d) h.push_back(static_cast<double>(d) / static_cast<double>(n));
  return ColorMapDictionary(std::move(h));
}

ColorMapDictionary ColorMapDictionary::for_grades(std::size_t n) {
  if (n > 6) return evenly_spaced(n);
  std::vector<double> h;
  for (std::size_t d = 0; d < n; ++d) h.push_back(static_cast<double>(d) / 6.0);
  return ColorMapDictionary(std::move(h));
}

double ColorMapDictionary::hue(std::size_t grade) const {
  if (grade >= hues_.size()) throw DomainError("no color for grade " + std::to_string(grade));
  return hues_[grade];
}

Rgb hsv_to_rgb(Hsv c) {
  const double h6 = std::fmod(c.h, 1.0) * 6.0;
  const double sector = std::floor(h6);
  const double f = h6 - sector;
  const double p = c.v * (1.0 - c.s);
  const double q = c.v * (1.0 - c.s * f);
  const double t = c.v * (1.0 - c.s * (1.0 - f));
  switch (static_cast<int>(sector) % 6) {
    case 0:
      return {c.v, t, p};
    case 1:
      return {q, c.v, p};
    case 2:
      return {p, c.v, t};
    case 3:
      return {p, q, c.v};
    case 4:
      return {t, p, c.v};
    default:
      return {c.v, p, q};
  }
}

Hsv rgb_to_hsv(Rgb c) {
  const double mx = std::max({c.r, c.g, c.b});
  const double mn = std::min({c.r, c.g, c.b});
  const double delta = mx - mn;
  Hsv out{0.0, mx > 0.0 ? delta / mx : 0.0, mx};
  if (delta <= 0.0) return out;
  double h = 0.0;
  if (mx == c.r) {
    h = (c.g - c.b) / delta;
  } else if (mx == c.g) {
    h = 2.0 + (c.b - c.r) / delta;
  } else {
    h = 4.0 + (c.r - c.g) / delta;
  }
  h /= 6.0;
  if (h < 0.0) h += 1.0;
  out.h = h;
  return out;
}

ClearMap compose_clear_map(const DominantClassMap& classes, const DominantResponseMap& response,
                           const ColorMapDictionary& colors, ClearProvenance provenance) {
  const Tensor& r = response.rectified;
  if (r.shape() != Shape{1, 1, classes.height, classes.width}) {
    throw ShapeError("compose_clear_map: response " + r.shape().str() + " does not match class map");
  }
  float lo = 0.0f, hi = 0.0f;
  if (r.size() > 0) {
    const auto [mn, mx] = std::minmax_element(r.data().begin(), r.data().end());
    lo = *mn;
    hi = *mx;
  }
  if (lo < 0.0f) throw DomainError("compose_clear_map: response map is not rectified");
  ClearMap out{RawImage(classes.height, classes.width), Tensor(r.shape()), std::move(provenance)};
  const double range = static_cast<double>(hi) - static_cast<double>(lo);
  for (std::size_t y = 0; y < classes.height; ++y) {
    for (std::size_t x = 0; x < classes.width; ++x) {
      const std::size_t p = y * classes.width + x;
      const double v = range > 0.0 ? (static_cast<double>(r[p]) - lo) / range : 0.0;
      out.value[p] = static_cast<float>(v);
      const Rgb rgb = hsv_to_rgb(Hsv{colors.hue(classes.grade[p]), 1.0, v});
      std::uint8_t* px = out.image.at(y, x);
      px[0] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb.r, 0.0, 1.0) * 255.0));
      px[1] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb.g, 0.0, 1.0) * 255.0));
      px[2] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb.b, 0.0, 1.0) * 255.0));
    }
  }
  return out;
}

RawImage overlay(const RawImage& clear, const RawImage& source, double alpha) {
  if (clear.height != source.height || clear.width != source.width) {
    throw ShapeError("overlay: clear map " + std::to_string(clear.height) + "x" + std::to_string(clear.width) +
                     " vs source " + std::to_string(source.height) + "x" + std::to_string(source.width));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("overlay: alpha must be in [0, 1]");
  RawImage out(clear.height, clear.width);
  for (std::size_t y = 0; y < clear.height; ++y) {
    for (std::size_t x = 0; x < clear.width; ++x) {
      const double gray = luminance(source.at(y, x));
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = alpha * clear.at(y, x)[c] + (1.0 - alpha) * gray;
        out.at(y, x)[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

double intersection_over_union(const Box& a, const Box& b) {
  const std::size_t x0 = std::max(a.x, b.x), y0 = std::max(a.y, b.y);
  const std::size_t x1 = std::min(a.x + a.width, b.x + b.width), y1 = std::min(a.y + a.height, b.y + b.height);
  const double inter = (x1 > x0 && y1 > y0) ? static_cast<double>((x1 - x0) * (y1 - y0)) : 0.0;
  const double uni = static_cast<double>(a.width * a.height + b.width * b.height) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

Box most_attentive_region(const Tensor& response, std::size_t size) {
  const Shape& s = response.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("most_attentive_region: expected (1, 1, h, w), got " + s.str());
  if (size == 0 || size > s.h || size > s.w) {
    throw ShapeError("most_attentive_region: box " + std::to_string(size) + " does not fit " + s.str());
  }
  // Summed-area table of max(0, r), (h+1) x (w+1).
  const std::size_t W = s.w + 1;
  std::vector<double> sat((s.h + 1) * W, 0.0);
  for (std::size_t y = 0; y < s.h; ++y) {
    double row = 0.0;
    for (std::size_t x = 0; x < s.w; ++x) {
      row += std::max(0.0f, response.at(0, 0, y, x));
      sat[(y + 1) * W + x + 1] = sat[y * W + x + 1] + row;
    }
  }
  Box best{0, 0, size, size};
  double best_sum = -1.0;
  for (std::size_t y = 0; y + size <= s.h; ++y) {
    for (std::size_t x = 0; x + size <= s.w; ++x) {
      const double sum = sat[(y + size) * W + x + size] - sat[y * W + x + size] - sat[(y + size) * W + x] + sat[y * W + x];
      if (sum > best_sum) {
        best_sum = sum;
        best.x = x;
        best.y = y;
      }
    }
  }
  return best;
}

void draw_box(RawImage& image, const Box& box, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (box.width == 0 || box.height == 0) return;
  auto paint = [&](std::size_t y, std::size_t x) {
    if (y < image.height && x < image.width) {
      std::uint8_t* p = image.at(y, x);
      p[0] = r;
      p[1] = g;
      p[2] = b;
    }
  };
  const std::size_t x1 = box.x + box.width - 1, y1 = box.y + box.height - 1;
  for (std::size_t x = box.x; x <= x1; ++x) {
    paint(box.y, x);
    paint(y1, x);
  }
  for (std::size_t y = box.y; y <= y1; ++y) {
    paint(y, box.x);
    paint(y, x1);
  }
}

void write_stack_sidecar(const Tensor& maps, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "sidecar I/O assumes a little-endian host");
  const Shape& s = maps.shape();
  if (s.n != 1) throw ShapeError("write_stack_sidecar: expected (1, N, h, w), got " + s.str());
  std::vector<std::uint8_t> bytes = {'C', 'L', 'R', 'A'};
  for (std::size_t v : {s.c, s.h, s.w}) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(static_cast<std::uint32_t>(v) >> (8 * i)));
  }
  const std::size_t at = bytes.size();
  bytes.resize(at + maps.size() * 4);
  std::memcpy(bytes.data() + at, maps.data().data(), maps.size() * 4);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Tensor read_stack_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open sidecar '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "CLRA", 4) != 0) {
    throw FormatError(FormatError::Kind::kBadMagic, "'" + path.string() + "' is not a CLRA sidecar");
  }
  auto u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[off + i]) << (8 * i);
    return static_cast<std::size_t>(v);
  };
  const Shape s{1, u32(4), u32(8), u32(12)};
  if (bytes.size() != 16 + s.size() * 4) {
    throw FormatError(FormatError::Kind::kTruncated, "sidecar '" + path.string() + "' size does not match header");
  }
  Tensor t(s);
  std::memcpy(t.data().data(), bytes.data() + 16, s.size() * 4);
  return t;
}

}  // namespace cleardr
