#include "sci/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sci/error.hpp"

namespace sci {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

namespace {


void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

void put_header(std::vector<std::uint8_t>& out, DType dtype, const Shape& shape) {
  if (shape.size() > kTensorMaxDims) {
    throw FormatError("tensor ndim " + std::to_string(shape.size()) + " exceeds 4");
  }
  out.insert(out.end(), {'C', 'D', 'T', '1'});
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) {
    if (d > UINT32_MAX) throw FormatError("tensor dimension too large: " + std::to_string(d));
    put_u32(out, static_cast<std::uint32_t>(d));
  }
}

[[noreturn]] void fail_at(std::size_t offset, const std::string& msg) {
  throw FormatError("CDT1 at byte " + std::to_string(offset) + ": " + msg);
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor<float>& t) {
  std::vector<std::uint8_t> out;
  put_header(out, DType::kReal32, t.shape());
  out.reserve(out.size() + 4 * t.size());
  for (float f : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

std::vector<std::uint8_t> encode_tensor(const Tensor<std::uint8_t>& t) {
  std::vector<std::uint8_t> out;
  put_header(out, DType::kUInt8, t.shape());
  out.insert(out.end(), t.vec().begin(), t.vec().end());
  return out;
}

AnyTensor decode_tensor(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
  const std::size_t start = offset;
  if (bytes.size() < start + 6) fail_at(bytes.size(), "truncated header");
  if (std::memcmp(bytes.data() + start, "CDT1", 4) != 0) fail_at(start, "bad magic");
  const std::uint8_t code = bytes[start + 4];
  if (code != 1 && code != 2) fail_at(start + 4, "unknown dtype code " + std::to_string(code));
  const std::size_t ndim = bytes[start + 5];
  if (ndim > kTensorMaxDims) fail_at(start + 5, "ndim " + std::to_string(ndim) + " exceeds 4");
  std::size_t pos = start + 6;
  if (bytes.size() < pos + 4 * ndim) fail_at(bytes.size(), "truncated dims");
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i, pos += 4) shape[i] = get_u32(bytes.data() + pos);
  const std::size_t n = shape_size(shape);
  const std::size_t width = code == 1 ? 4 : 1;
  if (bytes.size() - pos < n * width) {
    fail_at(bytes.size(), "truncated payload: need " + std::to_string(n * width) + " bytes, have " +
                              std::to_string(bytes.size() - pos));
  }
  if (code == 1) {
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i, pos += 4) data[i] = std::bit_cast<float>(get_u32(bytes.data() + pos));
    offset = pos;
    return Tensor<float>(std::move(shape), std::move(data));
  }
  std::vector<std::uint8_t> data(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  offset = pos + n;
  return Tensor<std::uint8_t>(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

void tensor_write(const std::filesystem::path& path, const Tensor<float>& t) {
  write_file_bytes(path, encode_tensor(t));
}

void tensor_write(const std::filesystem::path& path, const Tensor<std::uint8_t>& t) {
  write_file_bytes(path, encode_tensor(t));
}

AnyTensor tensor_read(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t offset = 0;
  auto t = decode_tensor(bytes, offset);
  if (offset != bytes.size()) fail_at(offset, "trailing bytes after payload");
  return t;
}

Tensor<float> read_real_tensor(const std::filesystem::path& path) {
  auto t = tensor_read(path);
  if (auto* f = std::get_if<Tensor<float>>(&t)) return std::move(*f);
  throw FormatError(path.string() + ": expected real32 tensor, found uint8");
}

Tensor<std::uint8_t> read_u8_tensor(const std::filesystem::path& path) {
  auto t = tensor_read(path);
  if (auto* u = std::get_if<Tensor<std::uint8_t>>(&t)) return std::move(*u);
  throw FormatError(path.string() + ": expected uint8 tensor, found real32");
}

}  // namespace sci
