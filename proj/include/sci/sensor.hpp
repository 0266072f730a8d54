#pragma once

#include <cstdint>
#include <filesystem>

#include "sci/random.hpp"
#include "sci/tensor.hpp"
#include "sci/types.hpp"

namespace sci::sensor {

// Upper end of the unified APC training range; channel 2 of the network
// input is apc / kApcMax.
inline constexpr double kApcMax = 60.0;

// Network input: (3, T, H, W). Channel 0 is the mask-normalized signal
// estimate broadcast over T, channel 1 the Gaussian noise map, channel 2 the
// APC proxy map.
struct NetInput {
  Tensor<float> channels;

  std::size_t frames() const { return channels.dim(1); }
  std::size_t height() const { return channels.dim(2); }
  std::size_t width() const { return channels.dim(3); }
};

// out[t] = x[t] (*) m[t].
VideoCube modulate(const VideoCube& x, const MaskStack& m);

// Sum over frames, accumulated in frame order per pixel. Returns (H, W).
Tensor<float> integrate(const VideoCube& modulated);

// alpha such that the expected mean photon count of the measurement is apc.
double calibrate_alpha(const VideoCube& x, const MaskStack& m, double apc);

// y = max(0, Poisson(alpha * sum_t x_t m_t) / alpha + N(0, sigma^2)).
// `seed` is recorded in the metadata; sampling draws from `stream`.
Measurement apply_noise(const VideoCube& x, const MaskStack& m, const PhotonModel& photon, RandomStream& stream,
                        std::uint64_t seed);

// Noiseless measurement (photon = none).
Measurement clean_measurement(const VideoCube& x, const MaskStack& m);

// Calibrates alpha for `apc` and samples from derive_stream(seed, "noise").
Measurement simulate(const VideoCube& x, const MaskStack& m, double apc, double sigma, std::uint64_t seed);

NetInput estimate_input(const Measurement& meas, const MaskStack& m);

// Channel 0 of estimate_input as a (H, W) frame: y / max(sum_t m_t, 1), zero on dead pixels.
Tensor<float> normalized_estimate(const Tensor<float>& y, const MaskStack& m);

// Measurement persistence: CDT1 real32 tensor plus "<path>.meta" key = value sidecar.
void write_measurement(const std::filesystem::path& path, const Measurement& meas);
Measurement read_measurement(const std::filesystem::path& path);

}  // namespace sci::sensor
