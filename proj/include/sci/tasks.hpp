#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sci/tensor.hpp"

namespace sci::tasks {

// Loss value plus its gradient with respect to the prediction.
struct LossGrad {
  double value = 0.0;
  Tensor<float> grad;
};

// Mean squared error over all elements.
double recon_loss(const Tensor<float>& pred, const Tensor<float>& target);
LossGrad recon_loss_grad(const Tensor<float>& pred, const Tensor<float>& target);

inline constexpr double kPsnrCap = 99.0;
// 10 log10(1 / MSE), capped at kPsnrCap when MSE < 1e-10.
double psnr(const Tensor<float>& pred, const Tensor<float>& target);

// Class-balanced binary cross-entropy on logits. The positive weight is
// clamp(#neg / #pos, 1, 50), or 1 without positives; the mean is over all
// elements.
double edge_pos_weight(const Tensor<std::uint8_t>& gt);
double edge_loss(const Tensor<float>& logits, const Tensor<std::uint8_t>& gt);
LossGrad edge_loss_grad(const Tensor<float>& logits, const Tensor<std::uint8_t>& gt);
// Same with a caller-supplied positive weight, e.g. one computed over a whole batch.
LossGrad edge_loss_grad(const Tensor<float>& logits, const Tensor<std::uint8_t>& gt, double pos_weight);

// Mean |pred - gt| over valid pixels.
double depth_loss(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<std::uint8_t>& valid);
LossGrad depth_loss_grad(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<std::uint8_t>& valid);

// {0.01, 0.02, ..., 0.99}
std::vector<double> default_thresholds();

struct EdgeScores {
  double ods = 0.0;
  double ois = 0.0;
  double ods_threshold = 0.0;
};

// Per-image match counts at one threshold.
struct EdgeCounts {
  std::uint64_t tp = 0;    // predicted positives with a GT positive within the radius
  std::uint64_t fp = 0;
  std::uint64_t tp_r = 0;  // GT positives with a predicted positive within the radius
  std::uint64_t fn = 0;
};

double f_measure(const EdgeCounts& c);

// Optimal dataset / image scale F-measures. A predicted positive is matched
// when a GT positive lies within Chebyshev distance `tol_radius`, and vice
// versa for recall. Each map is a 2-D (H, W) image.
EdgeScores ods_ois(const std::vector<Tensor<float>>& preds, const std::vector<Tensor<std::uint8_t>>& gts,
                   const std::vector<double>& thresholds = default_thresholds(), int tol_radius = 1);

struct DepthMetrics {
  double abs_rel = 0.0;
  double rmse = 0.0;
  double log10 = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::size_t count = 0;
};

DepthMetrics depth_metrics(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<std::uint8_t>& valid);

// Accumulates depth statistics across images before reducing.
class DepthAccumulator {
 public:
  void add(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<std::uint8_t>& valid);
  DepthMetrics result() const;

 private:
  double abs_rel_ = 0, sq_ = 0, log10_ = 0;
  std::size_t d1_ = 0, d2_ = 0, d3_ = 0, n_ = 0;
};

}  // namespace sci::tasks
