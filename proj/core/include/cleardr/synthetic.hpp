#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cleardr/clear.hpp"
#include "cleardr/discovery.hpp"
#include "cleardr/image.hpp"

namespace cleardr::synthetic {

// "Planted lesion" images: a textured disc on a noisy dark background. The
// texture identifies the class: 0 horizontal stripes, 1 vertical stripes,
// 2 checkerboard, 3 concentric rings. Every texture is invariant under
// horizontal and vertical flips of the disc, so flip augmentation keeps labels.
struct PlantedOptions {
  std::size_t classes = 3;
  std::size_t size = 64;
  std::size_t blob = 16;  // disc diameter and bounding-box side
  std::uint64_t seed = 7;
};

struct PlantedImage {
  RawImage image;
  std::size_t grade = 0;
  Box blob;
};

inline constexpr std::size_t kMaxClasses = 4;

// count images, grades assigned round-robin so classes are balanced.
std::vector<PlantedImage> generate(std::size_t count, const PlantedOptions& options);

LabeledDataset to_dataset(const std::vector<PlantedImage>& images, std::size_t classes);

// Writes <dir>/img_<i>.png plus <dir>/labels.csv in the `image,level` format.
void write_fixture(const std::vector<PlantedImage>& images, const std::filesystem::path& dir);

}  // namespace cleardr::synthetic
