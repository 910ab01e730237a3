#include "cleardr/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "cleardr/error.hpp"

namespace cleardr {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, std::span<const float> values) {
  const std::size_t at = out.size();
  out.resize(at + values.size() * 4);
  std::memcpy(out.data() + at, values.data(), values.size() * 4);
}

std::string format_floats(std::span<const float> values) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), values[i]);
    out.append(buf, ptr);
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

FormatError bad_descriptor(const std::string& what) {
  return FormatError(FormatError::Kind::kBadDescriptor, "checkpoint descriptor: " + what);
}

std::vector<float> parse_floats(const std::string& s) {
  std::vector<float> out;
  for (const auto& tok : split(s, ',')) {
    float v = 0.0f;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc{} || ptr != tok.data() + tok.size()) throw bad_descriptor("bad number '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

std::size_t parse_size(const std::string& tok) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (tok.empty() || ec != std::errc{} || ptr != tok.data() + tok.size()) throw bad_descriptor("bad integer '" + tok + "'");
  return v;
}

void parse_descriptor(const std::string& text, SequencerModel& model) {
  bool have_input = false, have_grades = false, have_layers = false;
  for (const auto& line : split(text, '\n')) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw bad_descriptor("line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "input") {
      const auto parts = split(value, ',');
      if (parts.size() != 3) throw bad_descriptor("input needs c,h,w");
      model.config.input = Shape{1, parse_size(parts[0]), parse_size(parts[1]), parse_size(parts[2])};
      have_input = true;
    } else if (key == "grades") {
      model.config.grades.names = split(value, ',');
      have_grades = true;
    } else if (key == "layers") {
      try {
        model.config.layers = parse_layers(value);
      } catch (const ConfigError& e) {
        throw bad_descriptor(e.what());
      }
      have_layers = true;
    } else if (key == "norm_mean") {
      model.normalization.mean = parse_floats(value);
    } else if (key == "norm_std") {
      model.normalization.stddev = parse_floats(value);
    } else {
      throw bad_descriptor("unknown key '" + key + "'");
    }
  }
  if (!have_input || !have_grades || !have_layers) throw bad_descriptor("missing input, grades or layers");
  try {
    model.config.validate();
  } catch (const ConfigError& e) {
    throw bad_descriptor(e.what());
  }
  if (model.normalization.mean.size() != model.config.input.c ||
      model.normalization.stddev.size() != model.config.input.c) {
    throw bad_descriptor("normalization statistics do not match input channels");
  }
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const std::string& what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(FormatError::Kind::kTruncated, "checkpoint truncated while reading " + what);
    }
  }
  std::uint16_t u16(const std::string& what) {
    need(2, what);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  void f32(std::span<float> out, const std::string& what) {
    need(out.size() * 4, what);
    std::memcpy(out.data(), bytes_.data() + pos_, out.size() * 4);
    pos_ += out.size() * 4;
  }
  std::string text(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::string describe_config(const SequencerModel& model) {
  const SequencerConfig& cfg = model.config;
  std::string grades;
  for (const auto& n : cfg.grades.names) {
    if (n.find_first_of(",\n") != std::string::npos) throw ConfigError("grade name '" + n + "' contains ',' or newline");
    if (!grades.empty()) grades += ',';
    grades += n;
  }
  std::string d;
  d += "input=" + std::to_string(cfg.input.c) + "," + std::to_string(cfg.input.h) + "," + std::to_string(cfg.input.w) + "\n";
  d += "grades=" + grades + "\n";
  d += "layers=" + format_layers(cfg.layers) + "\n";
  d += "norm_mean=" + format_floats(model.normalization.mean) + "\n";
  d += "norm_std=" + format_floats(model.normalization.stddev) + "\n";
  return d;
}

std::vector<std::uint8_t> encode_model_body(const SequencerModel& model) {
  std::vector<std::uint8_t> out = {'C', 'L', 'R', 'S'};
  put_u16(out, kCheckpointVersion);
  const std::string desc = describe_config(model);
  put_u32(out, static_cast<std::uint32_t>(desc.size()));
  out.insert(out.end(), desc.begin(), desc.end());
  for (const auto& bank : model.banks) {
    const Shape& s = bank.weights.shape();
    for (std::size_t v : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(v));
    put_f32(out, bank.weights.data());
    put_f32(out, bank.bias);
  }
  return out;
}

std::vector<std::uint8_t> encode_model(const SequencerModel& model) {
  std::vector<std::uint8_t> out = encode_model_body(model);
  put_u32(out, crc32(out));
  return out;
}

SequencerModel decode_model(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  in.need(4, "magic");
  if (std::memcmp(bytes.data(), "CLRS", 4) != 0) {
    throw FormatError(FormatError::Kind::kBadMagic, "not a checkpoint: bad magic bytes");
  }
  in.text(4, "magic");
  const std::uint16_t version = in.u16("version");
  if (version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch, "checkpoint version " + std::to_string(version) +
                                                               ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::uint32_t desc_len = in.u32("descriptor length");
  SequencerModel model;
  parse_descriptor(in.text(desc_len, "descriptor"), model);

  std::size_t channels = model.config.input.c;
  for (std::size_t i = 0; i < model.config.layers.size(); ++i) {
    const auto* conv = std::get_if<ConvSpec>(&model.config.layers[i]);
    if (conv == nullptr) continue;
    const std::string name = "layer " + std::to_string(i);
    const Shape s{in.u32(name + " shape"), in.u32(name + " shape"), in.u32(name + " shape"), in.u32(name + " shape")};
    const Shape want{conv->kernels, channels, conv->kh, conv->kw};
    if (s != want) {
      throw FormatError(FormatError::Kind::kShapeInconsistency,
                        name + ": bank shape " + s.str() + " does not match config " + want.str());
    }
    KernelBank bank(s.n, s.c, s.h, s.w);
    in.f32(bank.weights.data(), name + " weights");
    in.f32(bank.bias, name + " bias");
    model.banks.push_back(std::move(bank));
    channels = conv->kernels;
  }
  const std::size_t body_len = in.pos();
  const std::uint32_t stored = in.u32("checksum");
  if (in.remaining() != 0) {
    throw FormatError(FormatError::Kind::kShapeInconsistency,
                      std::to_string(in.remaining()) + " unexpected trailing bytes after checksum");
  }
  if (stored != crc32(bytes.first(body_len))) {
    throw FormatError(FormatError::Kind::kChecksumMismatch, "checkpoint checksum mismatch");
  }
  return model;
}

void save_model(const SequencerModel& model, const std::filesystem::path& path) {
  const auto bytes = encode_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

SequencerModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_model(bytes);
}

}  // namespace cleardr
