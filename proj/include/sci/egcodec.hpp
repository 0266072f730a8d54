#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sci/tensor.hpp"

namespace sci::nn {
template <class Real>
class ParamSetT;
}

namespace sci::eg {

struct EgConfig {
  int order = 0;           // k, 0..15
  int baseline_bits = 16;  // b, 2..32

  void validate() const;
};

// Bits are appended most-significant-first and packed MSB-first into bytes.
class BitString {
 public:
  void push(bool bit);
  void push_bits(std::uint64_t value, int count);
  bool bit(std::size_t i) const { return (bytes_[i >> 3] >> (7 - (i & 7))) & 1u; }
  std::size_t size() const noexcept { return nbits_; }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
  std::string to_string() const;
  static BitString from_string(const std::string& bits);

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t nbits_ = 0;
};

std::uint64_t zigzag(std::int64_t v);
std::int64_t unzigzag(std::uint64_t u);

// Largest value the codec accepts.
inline constexpr std::uint64_t kMaxCodeValue = (std::uint64_t{1} << 62) - 1;

void eg_encode(std::uint64_t n, int k, BitString& out);
BitString eg_encode(std::uint64_t n, int k);

// Decodes one code starting at bit `offset`. Returns (n, bits consumed).
std::pair<std::uint64_t, std::size_t> eg_decode(const BitString& bits, int k, std::size_t offset = 0);

// Length of eg_encode(n, k) without producing it.
int code_length(std::uint64_t n, int k);

struct QuantizedTensor {
  Tensor<std::int64_t> q;
  double scale = 1.0;
};

// Symmetric per-tensor uniform quantization to signed b-bit integers.
std::vector<QuantizedTensor> quantize_params(const nn::ParamSetT<float>& params, int bits);
QuantizedTensor quantize_tensor(const Tensor<float>& t, int bits);

struct EgcrReport {
  double egcr_percent = 0.0;
  double avg_bits = 0.0;
  std::size_t total_params = 0;
  int order = 0;
  int baseline_bits = 16;
};

EgcrReport egcr(const nn::ParamSetT<float>& params, const EgConfig& cfg = {});

}  // namespace sci::eg
