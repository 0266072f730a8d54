#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "sci/random.hpp"
#include "sci/tensor.hpp"
#include "sci/types.hpp"

namespace sci::maskgen {

inline constexpr std::size_t kDefaultSide = 8;
inline constexpr double kDefaultRho = 0.5;
// Densities at or below this are accepted with a warning.
inline constexpr double kLowDensityWarning = 0.05;

// Receives non-fatal diagnostics. Defaults to standard error.
using WarningSink = std::function<void(const std::string&)>;
void set_warning_sink(WarningSink sink);

// Independent Bernoulli(rho) entries, drawn t-major then row-major.
SubMaskStack gen_submask(std::size_t t, std::size_t m, double rho, RandomStream& stream);

// Kronecker product of an all-ones (h/m_x x w/m_y) matrix with each A_t.
MaskStack tile_mask(const SubMaskStack& sub, std::size_t h, std::size_t w);

struct MaskStats {
  double density = 0.0;
  Tensor<std::int64_t> per_pixel_on;  // (H, W)
  std::size_t dead_pixels = 0;
};

MaskStats mask_stats(const MaskStack& mask);

// Convenience: sub-mask from derive_stream(seed, "mask") tiled to (h, w).
MaskStack make_mask(std::size_t t, std::size_t m, double rho, std::size_t h, std::size_t w, std::uint64_t seed);

}  // namespace sci::maskgen
