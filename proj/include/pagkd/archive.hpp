#pragma once

// Named-tensor archive used for checkpoints and image files.
//
// Layout (all integers little-endian):
//   "PGKD" | u32 version | u32 count
//   count x { u32 name_len | name bytes (UTF-8) | u32 rank | rank x u64 dim |
//             numel x f64 payload }

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pagkd/tensor.hpp"

namespace pagkd {

inline constexpr std::uint32_t kArchiveVersion = 1;

std::string encode_archive(std::span<const NamedParam> entries);
std::vector<NamedParam> decode_archive(std::string_view bytes);

void write_archive(const std::filesystem::path& path, std::span<const NamedParam> entries);
std::vector<NamedParam> read_archive(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);

// 64-bit FNV-1a, used to fingerprint checkpoints and generated files.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace pagkd
