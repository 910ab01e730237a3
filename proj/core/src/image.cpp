#include "cleardr/image.hpp"

#include <png.h>
// jpeglib.h needs size_t and FILE declared first.
#include <csetjmp>
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <memory>

#include "cleardr/error.hpp"

namespace cleardr {
namespace {

std::string strip(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  return s.substr(b);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path.string() + "'");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

RawImage decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw IoError("cannot decode PNG '" + name + "': " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  RawImage out(img.height, img.width);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG '" + name + "': " + img.message);
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_fail(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// libjpeg reports truncated or corrupt scan data as warnings and pads with gray.
void jpeg_warn(j_common_ptr cinfo, int level) {
  if (level < 0) jpeg_fail(cinfo);
}

RawImage decode_jpeg(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_fail;
  err.mgr.emit_message = jpeg_warn;
  // Everything touched after setjmp lives in plain storage owned outside the
  // jump scope.
  std::vector<std::uint8_t> pixels;
  std::size_t h = 0, w = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("cannot decode JPEG '" + name + "': " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  h = cinfo.output_height;
  w = cinfo.output_width;
  pixels.resize(h * w * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  RawImage out;
  out.height = h;
  out.width = w;
  out.pixels = std::move(pixels);
  return out;
}

}  // namespace

double luminance(const std::uint8_t* rgb) { return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]; }

Laterality parse_laterality(const std::string& name) {
  if (name == "all") return Laterality::kAll;
  if (name == "left") return Laterality::kLeft;
  if (name == "right") return Laterality::kRight;
  throw DomainError("unknown laterality '" + name + "' (expected all, left or right)");
}

DatasetManifest load_manifest(const std::filesystem::path& csv_path, const std::filesystem::path& image_dir,
                              Laterality filter, std::size_t grade_count) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open label CSV '" + csv_path.string() + "'");
  DatasetManifest manifest;
  manifest.root = image_dir;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw IoError(csv_path.string() + ": empty file, expected header 'image,level'");
  ++line_no;
  if (strip(line) != "image,level") {
    throw IoError(csv_path.string() + ":1: expected header 'image,level', got '" + strip(line) + "'");
  }
  while (std::getline(in, line)) {
    ++line_no;
    line = strip(line);
    if (line.empty()) continue;
    const std::string where = csv_path.string() + ":" + std::to_string(line_no);
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw IoError(where + ": malformed row '" + line + "'");
    }
    const std::string stem = strip(line.substr(0, comma));
    const std::string level = strip(line.substr(comma + 1));
    std::size_t grade = 0;
    auto [ptr, ec] = std::from_chars(level.data(), level.data() + level.size(), grade);
    if (stem.empty() || level.empty() || ec != std::errc{} || ptr != level.data() + level.size()) {
      throw IoError(where + ": malformed row '" + line + "'");
    }
    if (grade >= grade_count) {
      throw IoError(where + ": level " + level + " outside [0, " + std::to_string(grade_count) + ")");
    }
    if (filter == Laterality::kRight && !ends_with(stem, "_right")) continue;
    if (filter == Laterality::kLeft && !ends_with(stem, "_left")) continue;
    std::filesystem::path file;
    for (const char* ext : {"", ".png", ".jpeg", ".jpg"}) {
      const auto candidate = image_dir / (stem + ext);
      if (std::filesystem::is_regular_file(candidate)) {
        file = candidate;
        break;
      }
    }
    if (file.empty()) throw IoError(where + ": image file for '" + stem + "' not found in " + image_dir.string());
    manifest.rows.push_back(ManifestRow{stem, file, grade});
  }
  return manifest;
}

RawImage selective_crop(const RawImage& image, double threshold) {
  std::size_t y0 = image.height, y1 = 0, x0 = image.width, x1 = 0;
  bool any = false;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      if (luminance(image.at(y, x)) > threshold) {
        any = true;
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
      }
    }
  }
  if (!any) return image;
  RawImage out(y1 - y0 + 1, x1 - x0 + 1);
  for (std::size_t y = 0; y < out.height; ++y) {
    std::copy_n(image.at(y0 + y, x0), out.width * 3, out.at(y, 0));
  }
  return out;
}

RawImage resize(const RawImage& image, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ShapeError("resize: target extents must be positive");
  if (image.height == 0 || image.width == 0) throw ShapeError("resize: empty source image");
  if (height == image.height && width == image.width) return image;
  auto source_coord = [](std::size_t i, std::size_t out_n, std::size_t in_n) {
    if (out_n == 1) return (static_cast<double>(in_n) - 1.0) / 2.0;
    return static_cast<double>(i) * (static_cast<double>(in_n) - 1.0) / (static_cast<double>(out_n) - 1.0);
  };
  RawImage out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = source_coord(y, height, image.height);
    const std::size_t y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = source_coord(x, width, image.width);
      const std::size_t x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double top = image.at(y0, x0)[ch] * (1.0 - fx) + image.at(y0, x1)[ch] * fx;
        const double bottom = image.at(y1, x0)[ch] * (1.0 - fx) + image.at(y1, x1)[ch] * fx;
        const double v = top * (1.0 - fy) + bottom * fy;
        out.at(y, x)[ch] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

Tensor to_tensor(const RawImage& image) {
  Tensor t(Shape{1, 3, image.height, image.width});
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const std::uint8_t* p = image.at(y, x);
      for (std::size_t c = 0; c < 3; ++c) t.at(0, c, y, x) = static_cast<float>(p[c]) / 255.0f;
    }
  }
  return t;
}

namespace {
std::uint8_t quantize(float v) {
  if (!(v > 0.0f)) return 0;
  if (v >= 1.0f) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0f));
}
}  // namespace

RawImage from_tensor(const Tensor& t) {
  const Shape& s = t.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("from_tensor: expected (1, 3, h, w), got " + s.str());
  RawImage out(s.h, s.w);
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x)[c] = quantize(t.at(0, c, y, x));
  return out;
}

RawImage from_map(const Tensor& map) {
  const Shape& s = map.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("from_map: expected (1, 1, h, w), got " + s.str());
  RawImage out(s.h, s.w);
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      const std::uint8_t v = quantize(map.at(0, 0, y, x));
      std::fill_n(out.at(y, x), 3, v);
    }
  }
  return out;
}

RawImage read_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  static constexpr std::uint8_t kPng[4] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::equal(kPng, kPng + 4, bytes.begin())) return decode_png(bytes, path.string());
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    return decode_jpeg(bytes, path.string());
  }
  throw IoError("'" + path.string() + "' is neither PNG nor JPEG");
}

std::vector<std::uint8_t> encode_png(const RawImage& image) {
  if (image.height == 0 || image.width == 0 || image.pixels.size() != image.height * image.width * 3) {
    throw ShapeError("encode_png: inconsistent image buffer");
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

void write_png(const RawImage& image, const std::filesystem::path& path) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Tensor load_preprocessed(const std::filesystem::path& path, std::size_t height, std::size_t width,
                         double crop_threshold) {
  RawImage img = read_image(path);
  if (crop_threshold >= 0.0) img = selective_crop(img, crop_threshold);
  return to_tensor(resize(img, height, width));
}

}  // namespace cleardr
