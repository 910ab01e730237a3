#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cleardr/image.hpp"
#include "cleardr/sequencer.hpp"

namespace cleardr {

// Rule applied to the backward signal at each ReLU site during back-projection.
enum class GatingPolicy {
  kDeconvnet,  // rectify the backward signal
  kGuided,     // rectify, then keep only where the forward gate was open
  kNone,       // pure linear adjoint
};

std::string gating_name(GatingPolicy policy);
// Throws DomainError listing the valid names.
GatingPolicy parse_gating(const std::string& name);

// Projects an arbitrary final-stage response z (shape of trace.final_response())
// back to the input plane through the traced switches and gates. Returns the
// per-input-channel result, shape (1, c, h, w).
Tensor back_project_channels(const SequencerModel& model, const ForwardTrace& trace, const Tensor& z,
                             GatingPolicy policy);

// back_project_channels summed over input channels: (1, 1, h, w).
Tensor back_project(const SequencerModel& model, const ForwardTrace& trace, const Tensor& z, GatingPolicy policy);

// z with every channel except `grade` zeroed.
Tensor isolate_grade(const Tensor& z, std::size_t grade);

// R(x|d): back-projection of the grade-d channel of the traced final response.
Tensor attentive_response(const ForwardTrace& trace, const SequencerModel& model, std::size_t grade,
                          GatingPolicy policy = GatingPolicy::kDeconvnet);

struct AttentiveResponseStack {
  Tensor maps;  // (1, N, h, w); channel d holds R(x|d)
  GradeSet grades;

  std::size_t count() const noexcept { return maps.shape().c; }
  std::size_t height() const noexcept { return maps.shape().h; }
  std::size_t width() const noexcept { return maps.shape().w; }
  float at(std::size_t grade, std::size_t y, std::size_t x) const { return maps.at(0, grade, y, x); }
};

// All N maps, projected together as one batch over the shared trace; each map is
// bit-identical to the corresponding attentive_response call.
AttentiveResponseStack attentive_stack(const ForwardTrace& trace, const SequencerModel& model,
                                       GatingPolicy policy = GatingPolicy::kDeconvnet);

struct DominantClassMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> grade;  // row-major, values in [0, N)

  std::uint32_t at(std::size_t y, std::size_t x) const { return grade[y * width + x]; }
  friend bool operator==(const DominantClassMap&, const DominantClassMap&) = default;
};

// Per-pixel argmax over grades; ties go to the lowest grade.
DominantClassMap dominant_class_map(const AttentiveResponseStack& stack);

struct DominantResponseMap {
  Tensor raw;        // (1, 1, h, w): R(p | C(p))
  Tensor rectified;  // max(0, raw)
};

DominantResponseMap dominant_response_map(const AttentiveResponseStack& stack, const DominantClassMap& classes);

// Hue per grade, each in [0, 1) and pairwise distinct.
class ColorMapDictionary {
 public:
  explicit ColorMapDictionary(std::vector<double> hues);

  // d -> d / n.
  static ColorMapDictionary evenly_spaced(std::size_t n);
  // For n <= 6, hues on the six primary/secondary HSV vertices (d -> d / 6),
  // which survive 8-bit RGB quantization exactly; otherwise evenly_spaced(n).
  static ColorMapDictionary for_grades(std::size_t n);

  double hue(std::size_t grade) const;
  std::size_t size() const noexcept { return hues_.size(); }
  const std::vector<double>& hues() const noexcept { return hues_; }

 private:
  std::vector<double> hues_;
};

struct Rgb {
  double r = 0, g = 0, b = 0;
};
struct Hsv {
  double h = 0, s = 0, v = 0;
};
Rgb hsv_to_rgb(Hsv hsv);
Hsv rgb_to_hsv(Rgb rgb);

struct ClearProvenance {
  std::uint32_t model_fingerprint = 0;
  std::string image_id;
  GatingPolicy gating = GatingPolicy::kDeconvnet;
};

struct ClearMap {
  RawImage image;
  Tensor value;  // (1, 1, h, w) V channel before quantization
  ClearProvenance provenance;
};

// H = F(class), S = 1, V = rectified response min-max normalized over the
// image (V = 0 everywhere when the map is constant).
ClearMap compose_clear_map(const DominantClassMap& classes, const DominantResponseMap& response,
                           const ColorMapDictionary& colors, ClearProvenance provenance = {});

// alpha * clear + (1 - alpha) * grayscale(source), per channel, rounded.
RawImage overlay(const RawImage& clear, const RawImage& source, double alpha);

struct Box {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  friend bool operator==(const Box&, const Box&) = default;
};

double intersection_over_union(const Box& a, const Box& b);

// size x size window maximizing the summed rectified response; ties resolve to
// the topmost, then leftmost placement.
Box most_attentive_region(const Tensor& rectified_response, std::size_t size);

// One-pixel outline.
void draw_box(RawImage& image, const Box& box, std::uint8_t r = 255, std::uint8_t g = 0, std::uint8_t b = 0);

// Raw stack sidecar: "CLRA" | u32 N | u32 H | u32 W | f32 maps (N, H, W), LE.
void write_stack_sidecar(const Tensor& maps, const std::filesystem::path& path);
Tensor read_stack_sidecar(const std::filesystem::path& path);

}  // namespace cleardr
