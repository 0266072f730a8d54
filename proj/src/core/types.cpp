#include "sci/types.hpp"

#include <cmath>

#include "sci/random.hpp"
#include "sci/tensor_io.hpp"

namespace sci {

VideoCube::VideoCube(Tensor<float> data) : data_(std::move(data)) {
  if (data_.ndim() != 3 || data_.dim(0) == 0 || data_.dim(1) == 0 || data_.dim(2) == 0) {
    throw ShapeError("video cube must be (T,H,W) with positive dims, got " + shape_str(data_.shape()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const float v = data_[i];
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw DataError("video cube value " + std::to_string(v) + " at flat index " + std::to_string(i) +
                      " is outside [0,1]");
    }
  }
}

VideoCube VideoCube::unchecked(Tensor<float> data) {
  if (data.ndim() != 3) throw ShapeError("video cube must be 3-D, got " + shape_str(data.shape()));
  return VideoCube(std::move(data), NoCheck{});
}

std::uint64_t MaskStack::id() const {
  const auto bytes = encode_tensor(data);
  return fnv1a64(bytes.data(), bytes.size());
}

PhotonModel::PhotonModel(double apc, double alpha, double sigma) : apc_(apc), alpha_(alpha), sigma_(sigma) {
  if (!(apc > 0.0) || !std::isfinite(apc)) throw ConfigError("APC must be finite and > 0");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("photon scale alpha must be finite and > 0");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("Gaussian sigma must be finite and >= 0");
}

}  // namespace sci
