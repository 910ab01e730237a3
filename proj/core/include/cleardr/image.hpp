#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cleardr/tensor.hpp"

namespace cleardr {

// 8-bit interleaved RGB image.
struct RawImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3, row-major RGB

  RawImage() = default;
  RawImage(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), pixels(h * w * 3, fill) {}

  std::uint8_t* at(std::size_t y, std::size_t x) { return pixels.data() + (y * width + x) * 3; }
  const std::uint8_t* at(std::size_t y, std::size_t x) const { return pixels.data() + (y * width + x) * 3; }

  friend bool operator==(const RawImage&, const RawImage&) = default;
};

// Rec. 601 luma in [0, 255].
double luminance(const std::uint8_t* rgb);

enum class Laterality { kAll, kLeft, kRight };
Laterality parse_laterality(const std::string& name);

struct ManifestRow {
  std::string image;  // CSV 'image' column (file stem)
  std::filesystem::path file;
  std::size_t grade = 0;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestRow> rows;
};

// Reads an `image,level` CSV. Each stem is resolved against image_dir by trying
// the stem itself and then the extensions .png, .jpeg, .jpg. Rows outside the
// laterality filter are dropped before the file check. Throws IoError naming
// the line or file on failure.
DatasetManifest load_manifest(const std::filesystem::path& csv_path, const std::filesystem::path& image_dir,
                              Laterality filter = Laterality::kAll, std::size_t grade_count = 5);

// Tightest box around pixels whose luma exceeds threshold; unchanged when none do.
RawImage selective_crop(const RawImage& image, double threshold = 10.0);

// Bilinear resize with align-corners convention: output corner pixels sample
// input corners exactly, so same-size resizing is the identity. A 1-pixel axis
// samples the centre of the source axis.
RawImage resize(const RawImage& image, std::size_t height, std::size_t width);

// u8 [0,255] -> (1, 3, h, w) floats in [0, 1].
Tensor to_tensor(const RawImage& image);
// (1, 3, h, w) [0,1] -> u8 with rounding and clamping.
RawImage from_tensor(const Tensor& tensor);
// Single-channel (1, 1, h, w) map in [0,1] -> gray RGB.
RawImage from_map(const Tensor& map);

// PNG or JPEG, chosen by file signature.
RawImage read_image(const std::filesystem::path& path);
void write_png(const RawImage& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const RawImage& image);

// Reads, crops, resizes and converts one dataset image.
Tensor load_preprocessed(const std::filesystem::path& path, std::size_t height, std::size_t width,
                         double crop_threshold);

}  // namespace cleardr
