#include "sci/maskgen.hpp"

#include <iostream>
#include <mutex>

#include "sci/error.hpp"
#include "sci/random.hpp"
#include "sci/tensor_io.hpp"

namespace sci::maskgen {

namespace {

std::mutex g_sink_mu;
WarningSink g_sink = [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; };

void warn(const std::string& msg) {
  std::lock_guard lock(g_sink_mu);
  if (g_sink) g_sink(msg);
}

}  // namespace

void set_warning_sink(WarningSink sink) {
  std::lock_guard lock(g_sink_mu);
  g_sink = std::move(sink);
}

SubMaskStack gen_submask(std::size_t t, std::size_t m, double rho, RandomStream& stream) {
  if (t < 1 || m < 1) throw ConfigError("sub-mask needs t >= 1 and m >= 1");
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("mask density rho must lie in (0,1], got " + std::to_string(rho));
  if (rho <= kLowDensityWarning) {
    warn("mask density " + std::to_string(rho) + " passes almost no light");
  }
  SubMaskStack sub;
  sub.rho_nominal = rho;
  sub.data = Tensor<std::uint8_t>({t, m, m});
  for (auto& v : sub.data.vec()) v = stream.bernoulli(rho) ? 1 : 0;
  return sub;
}

MaskStack tile_mask(const SubMaskStack& sub, std::size_t h, std::size_t w) {
  const std::size_t mx = sub.side_x();
  const std::size_t my = sub.side_y();
  if (h == 0 || w == 0 || h % mx != 0 || w % my != 0) {
    throw ConfigError("frame " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by sub-mask " +
                      std::to_string(mx) + "x" + std::to_string(my));
  }
  MaskStack mask;
  mask.data = Tensor<std::uint8_t>({sub.frames(), h, w});
  for (std::size_t t = 0; t < sub.frames(); ++t) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) mask.data.at(t, i, j) = sub.data.at(t, i % mx, j % my);
    }
  }
  const auto bytes = encode_tensor(sub.data);
  mask.source_id = fnv1a64(bytes.data(), bytes.size());
  return mask;
}

MaskStats mask_stats(const MaskStack& mask) {
  const std::size_t t = mask.frames(), h = mask.height(), w = mask.width();
  MaskStats st;
  st.per_pixel_on = Tensor<std::int64_t>({h, w});
  std::size_t on = 0;
  for (std::size_t k = 0; k < t; ++k) {
    for (std::size_t p = 0; p < h * w; ++p) {
      const auto v = mask.data[k * h * w + p];
      st.per_pixel_on[p] += v;
      on += v;
    }
  }
  st.density = mask.data.empty() ? 0.0 : static_cast<double>(on) / static_cast<double>(mask.data.size());
  for (auto c : st.per_pixel_on.data()) st.dead_pixels += c == 0 ? 1 : 0;
  return st;
}

MaskStack make_mask(std::size_t t, std::size_t m, double rho, std::size_t h, std::size_t w, std::uint64_t seed) {
  auto stream = derive_stream(seed, "mask");
  return tile_mask(gen_submask(t, m, rho, stream), h, w);
}

}  // namespace sci::maskgen
