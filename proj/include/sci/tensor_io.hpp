#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "sci/tensor.hpp"

namespace sci {

// "CDT1" container: magic, dtype code (1 = real32, 2 = uint8), ndim byte,
// ndim little-endian u32 dims, row-major little-endian payload.
enum class DType : std::uint8_t { kReal32 = 1, kUInt8 = 2 };

inline constexpr std::size_t kTensorMaxDims = 4;

using AnyTensor = std::variant<Tensor<float>, Tensor<std::uint8_t>>;

std::vector<std::uint8_t> encode_tensor(const Tensor<float>& t);
std::vector<std::uint8_t> encode_tensor(const Tensor<std::uint8_t>& t);

// Decodes one tensor starting at `offset`; advances `offset` past it.
AnyTensor decode_tensor(const std::vector<std::uint8_t>& bytes, std::size_t& offset);

void tensor_write(const std::filesystem::path& path, const Tensor<float>& t);
void tensor_write(const std::filesystem::path& path, const Tensor<std::uint8_t>& t);
AnyTensor tensor_read(const std::filesystem::path& path);

// Typed convenience readers; a dtype mismatch is a format error.
Tensor<float> read_real_tensor(const std::filesystem::path& path);
Tensor<std::uint8_t> read_u8_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace sci
