#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "edgeguard/network.hpp"

// MPRW v1 weight files. All integers little-endian:
//
//   "MPRW" (0x4D 0x50 0x52 0x57)
//   u32 version (= 1)
//   u32 tensor count
//   per tensor: u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
//               product(dims) x f32 (IEEE-754 LE), row-major
namespace edgeguard {

inline constexpr std::uint32_t kWeightFormatVersion = 1;

std::vector<std::uint8_t> encode_weights(const WeightStore& store);

// Throws BadMagicError, TruncatedFileError, DuplicateNameError, or
// WeightFormatError for other malformed content.
WeightStore decode_weights(std::span<const std::uint8_t> bytes);

void save_weights(const WeightStore& store, const std::filesystem::path& path);
WeightStore load_weights(const std::filesystem::path& path);

}  // namespace edgeguard
