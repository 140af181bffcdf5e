#pragma once

// TNSR tensor container and small file utilities.
//
// TNSR layout (all integers little-endian):
//   bytes 0..3   magic "TNSR"
//   u32          version (1)
//   u8           dtype code: 1 = f32, 2 = f64
//   u8           rank
//   u64 x rank   dims
//   payload      row-major values, little-endian IEEE-754

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lrdif/tensor.hpp"

namespace lrdif {

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

inline constexpr std::uint32_t kTnsrVersion = 1;

// Encoded bytes of a TNSR file. Rank 0 stores a single value.
std::vector<std::uint8_t> encode_tnsr(const Tensor& t, DType dtype);
Tensor decode_tnsr(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

void write_tnsr(const Tensor& t, const std::filesystem::path& path, DType dtype = DType::f64);
Tensor read_tnsr(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
// Write to a sibling temp file, then rename over the target.
void write_bytes_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// FNV-1a 64-bit, rendered as 16 lowercase hex digits.
std::string checksum_hex(const std::vector<std::uint8_t>& bytes);
std::string file_checksum(const std::filesystem::path& path);
std::string text_checksum(const std::string& text);

}  // namespace lrdif
