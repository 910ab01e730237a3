#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cleardr/sequencer.hpp"

namespace cleardr {

// Checkpoint layout (all integers little-endian):
//   "CLRS" | u16 version | u32 descriptor length | UTF-8 descriptor
//   per conv layer: u32 k, c, kh, kw | f32 weights (k,c,kh,kw) | f32 bias[k]
//   u32 CRC-32 of every preceding byte
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_model(const SequencerModel& model);
SequencerModel decode_model(std::span<const std::uint8_t> bytes);

// encode_model without the trailing checksum.
std::vector<std::uint8_t> encode_model_body(const SequencerModel& model);

void save_model(const SequencerModel& model, const std::filesystem::path& path);
SequencerModel load_model(const std::filesystem::path& path);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Text descriptor embedded in checkpoints: input, grades, layers, normalization.
std::string describe_config(const SequencerModel& model);

}  // namespace cleardr
