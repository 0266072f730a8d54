#include "sci/egcodec.hpp"

#include <bit>
#include <cmath>

#include "sci/error.hpp"
#include "sci/nnet/param_set.hpp"

namespace sci::eg {

void EgConfig::validate() const {
  if (order < 0 || order > 15) throw ConfigError("Exp-Golomb order must be in [0,15], got " + std::to_string(order));
  if (baseline_bits < 2 || baseline_bits > 32) {
    throw ConfigError("baseline bits must be in [2,32], got " + std::to_string(baseline_bits));
  }
}

void BitString::push(bool bit) {
  if ((nbits_ & 7) == 0) bytes_.push_back(0);
  if (bit) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (nbits_ & 7));
  ++nbits_;
}

void BitString::push_bits(std::uint64_t value, int count) {
  for (int i = count - 1; i >= 0; --i) push((value >> i) & 1u);
}

std::string BitString::to_string() const {
  std::string s(nbits_, '0');
  for (std::size_t i = 0; i < nbits_; ++i) s[i] = bit(i) ? '1' : '0';
  return s;
}

BitString BitString::from_string(const std::string& bits) {
  BitString b;
  for (char c : bits) {
    if (c != '0' && c != '1') throw CodecError("bit string may only contain '0' and '1'");
    b.push(c == '1');
  }
  return b;
}

std::uint64_t zigzag(std::int64_t v) {
  return v >= 0 ? static_cast<std::uint64_t>(v) << 1 : (static_cast<std::uint64_t>(-(v + 1)) << 1) + 1;
}

std::int64_t unzigzag(std::uint64_t u) {
  return (u & 1) ? -static_cast<std::int64_t>(u >> 1) - 1 : static_cast<std::int64_t>(u >> 1);
}

namespace {

void check_order(int k) {
  if (k < 0 || k > 15) throw CodecError("Exp-Golomb order must be in [0,15], got " + std::to_string(k));
}

}  // namespace

void eg_encode(std::uint64_t n, int k, BitString& out) {
  check_order(k);
  if (n > kMaxCodeValue) throw CodecError("value " + std::to_string(n) + " exceeds codec range");
  const std::uint64_t u = (n >> k) + 1;
  const int prefix = std::bit_width(u) - 1;
  for (int i = 0; i < prefix; ++i) out.push(false);
  out.push_bits(u, prefix + 1);
  out.push_bits(n & ((std::uint64_t{1} << k) - 1), k);
}

BitString eg_encode(std::uint64_t n, int k) {
  BitString b;
  eg_encode(n, k, b);
  return b;
}

std::pair<std::uint64_t, std::size_t> eg_decode(const BitString& bits, int k, std::size_t offset) {
  check_order(k);
  std::size_t pos = offset;
  int zeros = 0;
  while (pos < bits.size() && !bits.bit(pos)) {
    ++zeros;
    ++pos;
    if (zeros > 62) throw CodecError("Exp-Golomb prefix too long at bit " + std::to_string(offset));
  }
  if (pos >= bits.size()) throw CodecError("truncated Exp-Golomb prefix at bit " + std::to_string(pos));
  const std::size_t need = static_cast<std::size_t>(zeros) + 1 + static_cast<std::size_t>(k);
  if (bits.size() - pos < need) {
    throw CodecError("truncated Exp-Golomb code at bit " + std::to_string(bits.size()) + " (started at " +
                     std::to_string(offset) + ")");
  }
  std::uint64_t u = 0;
  for (int i = 0; i <= zeros; ++i) u = (u << 1) | bits.bit(pos++);
  std::uint64_t r = 0;
  for (int i = 0; i < k; ++i) r = (r << 1) | bits.bit(pos++);
  return {((u - 1) << k) | r, pos - offset};
}

int code_length(std::uint64_t n, int k) {
  check_order(k);
  const std::uint64_t u = (n >> k) + 1;
  return 2 * (std::bit_width(u) - 1) + 1 + k;
}

QuantizedTensor quantize_tensor(const Tensor<float>& t, int bits) {
  if (bits < 2 || bits > 32) throw ConfigError("quantizer bits must be in [2,32]");
  double maxabs = 0.0;
  for (float v : t.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite parameter value in quantizer input");
    maxabs = std::max(maxabs, std::fabs(static_cast<double>(v)));
  }
  const double qmax = std::ldexp(1.0, bits - 1) - 1.0;
  QuantizedTensor out;
  out.scale = maxabs == 0.0 ? 1.0 : maxabs / qmax;
  out.q = Tensor<std::int64_t>(t.shape());
  const auto lim = static_cast<std::int64_t>(qmax);
  for (std::size_t i = 0; i < t.size(); ++i) {
    auto q = static_cast<std::int64_t>(std::llround(static_cast<double>(t[i]) / out.scale));
    out.q[i] = std::clamp<std::int64_t>(q, -lim, lim);
  }
  return out;
}

std::vector<QuantizedTensor> quantize_params(const nn::ParamSetT<float>& params, int bits) {
  std::vector<QuantizedTensor> out;
  out.reserve(params.size());
  for (const auto& e : params.entries()) out.push_back(quantize_tensor(e.value, bits));
  return out;
}

EgcrReport egcr(const nn::ParamSetT<float>& params, const EgConfig& cfg) {
  cfg.validate();
  if (params.size() == 0 || params.total_count() == 0) throw ConfigError("EGCR of an empty parameter set");
  const auto quantized = quantize_params(params, cfg.baseline_bits);
  std::uint64_t total_bits = 0;
  std::size_t n = 0;
  for (const auto& qt : quantized) {
    for (auto q : qt.q.data()) total_bits += static_cast<std::uint64_t>(code_length(zigzag(q), cfg.order));
    n += qt.q.size();
  }
  EgcrReport r;
  r.total_params = n;
  r.order = cfg.order;
  r.baseline_bits = cfg.baseline_bits;
  r.avg_bits = static_cast<double>(total_bits) / static_cast<double>(n);
  r.egcr_percent = (1.0 - r.avg_bits / cfg.baseline_bits) * 100.0;
  return r;
}

}  // namespace sci::eg
