// Copyright 2026 The dlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dlab {

// Binary container shared by network and trigger checkpoints. All integers
// and doubles are little-endian.
//
//   "DLAB1\0"            6 bytes
//   class_count          u32
//   descriptor length    u32, followed by that many bytes of ASCII text
//   value count          u64
//   payload              value count x f64
//   checksum             u64, FNV-1a over the payload bytes
struct Container {
  std::uint32_t class_count = 0;
  std::string descriptor;
  std::vector<double> payload;
};

inline constexpr std::string_view kCheckpointMagic{"DLAB1\0", 6};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;

std::vector<std::uint8_t> encode_container(const Container& c);
Container decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace dlab
