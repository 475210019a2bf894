#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "elsnet/tensor.hpp"

/// ELST container: "ELST" magic, u16 version (1), u8 dtype code, u8 ndim,
/// ndim x u32 extents, then the row-major payload. All integers and floats
/// are little-endian.
namespace elsnet::elst {

enum class DType : std::uint8_t { F32 = 0, U8 = 1 };

inline constexpr std::uint16_t kVersion = 1;

struct Array {
  DType dtype = DType::F32;
  Dims dims;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;
};

std::vector<std::uint8_t> encode(const Dims& dims, std::span<const float> values);
std::vector<std::uint8_t> encode(const Dims& dims, std::span<const std::uint8_t> values);
/// Throws FormatError (with the failing byte offset) on any malformed input.
Array decode(std::span<const std::uint8_t> bytes);

void write(const std::filesystem::path& path, const Dims& dims, std::span<const float> values);
void write(const std::filesystem::path& path, const Dims& dims, std::span<const std::uint8_t> values);
Array read(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace elsnet::elst
