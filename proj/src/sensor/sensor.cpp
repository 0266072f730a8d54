#include "sci/sensor.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "sci/error.hpp"
#include "sci/kv_config.hpp"
#include "sci/tensor_io.hpp"

namespace sci::sensor {

namespace {

void check_same_shape(const VideoCube& x, const MaskStack& m) {
  if (x.tensor().shape() != m.data.shape()) {
    throw ShapeError("video shape " + shape_str(x.tensor().shape()) + " does not match mask shape " +
                     shape_str(m.data.shape()));
  }
}

// Clean integrated measurement in double precision, used for calibration.
double clean_mean(const VideoCube& x, const MaskStack& m) {
  const auto y = integrate(modulate(x, m));
  double sum = 0.0;
  for (float v : y.data()) sum += v;
  return sum / static_cast<double>(y.size());
}

}  // namespace

VideoCube modulate(const VideoCube& x, const MaskStack& m) {
  check_same_shape(x, m);
  Tensor<float> out(x.tensor().shape());
  const auto& xs = x.tensor();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.data[i] ? xs[i] : 0.0f;
  return VideoCube::unchecked(std::move(out));
}

Tensor<float> integrate(const VideoCube& modulated) {
  const auto& x = modulated.tensor();
  const std::size_t t = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor<float> y({x.dim(1), x.dim(2)});
  for (std::size_t k = 0; k < t; ++k) {
    const float* frame = x.ptr() + k * hw;
    for (std::size_t p = 0; p < hw; ++p) y[p] += frame[p];
  }
  return y;
}

double calibrate_alpha(const VideoCube& x, const MaskStack& m, double apc) {
  if (!(apc > 0.0) || !std::isfinite(apc)) throw ConfigError("APC must be finite and > 0");
  const double mean = clean_mean(x, m);
  if (!(mean > 0.0)) throw NumericError("cannot calibrate photon scale: clean measurement has zero mean");
  return apc / mean;
}

Measurement apply_noise(const VideoCube& x, const MaskStack& m, const PhotonModel& photon, RandomStream& stream,
                        std::uint64_t seed) {
  const auto clean = integrate(modulate(x, m));
  Measurement out;
  out.y = Tensor<float>(clean.shape());
  out.cr = x.frames();
  out.photon = photon;
  out.seed = seed;
  out.mask_id = m.id();
  const double alpha = photon.alpha();
  const double sigma = photon.sigma();
  for (std::size_t p = 0; p < clean.size(); ++p) {
    const double counts = stream.poisson(alpha * static_cast<double>(clean[p]));
    double v = counts / alpha;
    if (sigma > 0.0) v += sigma * stream.normal();
    if (!std::isfinite(v)) throw NumericError("non-finite measurement value at pixel " + std::to_string(p));
    out.y[p] = static_cast<float>(v > 0.0 ? v : 0.0);
  }
  return out;
}

Measurement clean_measurement(const VideoCube& x, const MaskStack& m) {
  Measurement out;
  out.y = integrate(modulate(x, m));
  out.cr = x.frames();
  out.mask_id = m.id();
  return out;
}

Measurement simulate(const VideoCube& x, const MaskStack& m, double apc, double sigma, std::uint64_t seed) {
  const PhotonModel photon(apc, calibrate_alpha(x, m, apc), sigma);
  auto stream = derive_stream(seed, "noise");
  return apply_noise(x, m, photon, stream, seed);
}

Tensor<float> normalized_estimate(const Tensor<float>& y, const MaskStack& m) {
  const std::size_t t = m.frames(), h = m.height(), w = m.width();
  if (y.shape() != Shape{h, w}) {
    throw ShapeError("measurement shape " + shape_str(y.shape()) + " does not match mask frame " +
                     shape_str(Shape{h, w}));
  }
  Tensor<float> e({h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    int on = 0;
    for (std::size_t k = 0; k < t; ++k) on += m.data[k * h * w + p];
    e[p] = on == 0 ? 0.0f : y[p] / static_cast<float>(on);
  }
  return e;
}

NetInput estimate_input(const Measurement& meas, const MaskStack& m) {
  if (meas.mask_id != m.id()) {
    throw DataError("measurement mask digest " + digest_hex(meas.mask_id) + " does not match mask " +
                    digest_hex(m.id()));
  }
  const auto e = normalized_estimate(meas.y, m);
  const std::size_t t = m.frames(), hw = m.height() * m.width();
  // A noiseless measurement is presented as zero read noise at full light.
  const float sigma = meas.photon ? static_cast<float>(meas.photon->sigma()) : 0.0f;
  const float apc = meas.photon ? static_cast<float>(meas.photon->apc() / kApcMax) : 1.0f;
  NetInput in;
  in.channels = Tensor<float>({3, t, m.height(), m.width()});
  float* base = in.channels.ptr();
  for (std::size_t k = 0; k < t; ++k) {
    std::copy(e.vec().begin(), e.vec().end(), base + k * hw);
    std::fill_n(base + (t + k) * hw, hw, sigma);
    std::fill_n(base + (2 * t + k) * hw, hw, apc);
  }
  return in;
}

void write_measurement(const std::filesystem::path& path, const Measurement& meas) {
  tensor_write(path, meas.y);
  std::ostringstream meta;
  meta.precision(17);
  meta << "cr = " << meas.cr << "\n";
  if (meas.photon) {
    meta << "apc = " << meas.photon->apc() << "\n";
    meta << "alpha = " << meas.photon->alpha() << "\n";
    meta << "sigma = " << meas.photon->sigma() << "\n";
  }
  meta << "seed = " << meas.seed << "\n";
  meta << "mask_id = " << digest_hex(meas.mask_id) << "\n";
  std::ofstream out(path.string() + ".meta", std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string() + ".meta");
  out << meta.str();
}

Measurement read_measurement(const std::filesystem::path& path) {
  Measurement meas;
  meas.y = read_real_tensor(path);
  auto kv = KvConfig::load(path.string() + ".meta");
  meas.cr = static_cast<std::size_t>(kv.get_u64("cr", 0));
  if (kv.has("apc")) {
    meas.photon = PhotonModel(kv.get_double("apc", 0), kv.get_double("alpha", 0), kv.get_double("sigma", 0));
  }
  meas.seed = kv.get_u64("seed", 0);
  meas.mask_id = std::stoull(kv.require_string("mask_id"), nullptr, 16);
  kv.finish();
  return meas;
}

}  // namespace sci::sensor
