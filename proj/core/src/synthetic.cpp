#include "cleardr/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "cleardr/error.hpp"

namespace cleardr::synthetic {
namespace {

// Texture intensity in [0, 1] at offset (dy, dx) from the disc's top-left.
double texture(std::size_t grade, std::size_t dy, std::size_t dx, double radius) {
  switch (grade) {
    case 0:
      return (dy / 2) % 2 == 0 ? 1.0 : 0.0;
    case 1:
      return (dx / 2) % 2 == 0 ? 1.0 : 0.0;
    case 2:
      return ((dy / 2) + (dx / 2)) % 2 == 0 ? 1.0 : 0.0;
    default: {
      const double cy = dy + 0.5 - radius, cx = dx + 0.5 - radius;
      return static_cast<int>(std::sqrt(cy * cy + cx * cx) / 2.0) % 2 == 0 ? 1.0 : 0.0;
    }
  }
}

}  // namespace

std::vector<PlantedImage> generate(std::size_t count, const PlantedOptions& o) {
  if (o.classes == 0 || o.classes > kMaxClasses) throw DomainError("planted dataset supports 1..4 classes");
  if (o.blob == 0 || o.blob > o.size) throw DomainError("blob does not fit the canvas");
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<int> noise(18, 46);
  std::uniform_int_distribution<std::size_t> place(0, o.size - o.blob);
  std::uniform_int_distribution<int> jitter(-12, 12);
  const double radius = static_cast<double>(o.blob) / 2.0;
  std::vector<PlantedImage> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    PlantedImage p{RawImage(o.size, o.size), i % o.classes, Box{place(rng), place(rng), o.blob, o.blob}};
    for (auto& v : p.image.pixels) v = static_cast<std::uint8_t>(noise(rng));
    for (std::size_t dy = 0; dy < o.blob; ++dy) {
      for (std::size_t dx = 0; dx < o.blob; ++dx) {
        const double cy = dy + 0.5 - radius, cx = dx + 0.5 - radius;
        if (cy * cy + cx * cx > radius * radius) continue;
        const double t = texture(p.grade, dy, dx, radius);
        std::uint8_t* px = p.image.at(p.blob.y + dy, p.blob.x + dx);
        // Warm lesion tint; bright and dim phases of the texture.
        const double base = 70.0 + 150.0 * t;
        const double tint[3] = {1.0, 0.85, 0.55};
        for (int c = 0; c < 3; ++c) {
          px[c] = static_cast<std::uint8_t>(std::clamp(base * tint[c] + jitter(rng), 0.0, 255.0));
        }
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

LabeledDataset to_dataset(const std::vector<PlantedImage>& images, std::size_t classes) {
  LabeledDataset d{{}, classes};
  for (std::size_t i = 0; i < images.size(); ++i) {
    d.samples.push_back(Sample{to_tensor(images[i].image), images[i].grade, "img_" + std::to_string(i)});
  }
  return d;
}

void write_fixture(const std::vector<PlantedImage>& images, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "labels.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (dir / "labels.csv").string());
  csv << "image,level\n";
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string stem = "img_" + std::to_string(i);
    write_png(images[i].image, dir / (stem + ".png"));
    csv << stem << "," << images[i].grade << "\n";
  }
}

}  // namespace cleardr::synthetic
