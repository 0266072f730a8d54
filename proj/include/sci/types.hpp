#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "sci/tensor.hpp"

namespace sci {

// T x H x W clean or reconstructed video with every element in [0, 1].
class VideoCube {
 public:
  VideoCube() = default;
  // Validates shape and range; throws ShapeError / DataError.
  explicit VideoCube(Tensor<float> data);
  // Skips the range check; for intermediate products such as modulated frames.
  static VideoCube unchecked(Tensor<float> data);

  const Tensor<float>& tensor() const noexcept { return data_; }
  std::size_t frames() const { return data_.dim(0); }
  std::size_t height() const { return data_.dim(1); }
  std::size_t width() const { return data_.dim(2); }

 private:
  struct NoCheck {};
  VideoCube(Tensor<float> data, NoCheck) : data_(std::move(data)) {}
  Tensor<float> data_;
};

// T x m_x x m_y binary sub-masks.
struct SubMaskStack {
  Tensor<std::uint8_t> data;
  double rho_nominal = 0.5;

  std::size_t frames() const { return data.dim(0); }
  std::size_t side_x() const { return data.dim(1); }
  std::size_t side_y() const { return data.dim(2); }
};

// Full-frame binary masks; data[t,i,j] = source[t, i mod m_x, j mod m_y].
struct MaskStack {
  Tensor<std::uint8_t> data;
  std::uint64_t source_id = 0;

  std::size_t frames() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
  // Digest of the serialized CDT1 bytes.
  std::uint64_t id() const;
};

class PhotonModel {
 public:
  PhotonModel(double apc, double alpha, double sigma);

  double apc() const noexcept { return apc_; }
  double alpha() const noexcept { return alpha_; }
  double sigma() const noexcept { return sigma_; }

 private:
  double apc_;
  double alpha_;
  double sigma_;
};

struct Measurement {
  Tensor<float> y;  // (H, W)
  std::size_t cr = 0;
  std::optional<PhotonModel> photon;  // none = noiseless
  std::uint64_t seed = 0;
  std::uint64_t mask_id = 0;
};

}  // namespace sci
