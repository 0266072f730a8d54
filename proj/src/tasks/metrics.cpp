#include <algorithm>
#include <cmath>

#include "sci/error.hpp"
#include "sci/tasks.hpp"

namespace sci::tasks {

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 1; i <= 99; ++i) t.push_back(i / 100.0);
  return t;
}

double f_measure(const EdgeCounts& c) {
  const double p = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  const double r = c.tp_r + c.fn ? static_cast<double>(c.tp_r) / static_cast<double>(c.tp_r + c.fn) : 0.0;
  return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
}

namespace {

// Per-image precomputation: the GT dilated by the tolerance radius and the
// prediction's neighbourhood maximum, after which every threshold is a count.
struct ImageMatch {
  std::vector<float> pred;
  std::vector<char> gt;
  std::vector<char> gt_dilated;
  std::vector<float> pred_nbr_max;
  std::size_t gt_count = 0;

  ImageMatch(const Tensor<float>& p, const Tensor<std::uint8_t>& g, int r) {
    if (p.ndim() != 2 || p.shape() != g.shape()) {
      throw ShapeError("edge maps must be equally shaped 2-D images, got " + shape_str(p.shape()) + " and " +
                       shape_str(g.shape()));
    }
    const auto h = static_cast<int>(p.dim(0)), w = static_cast<int>(p.dim(1));
    pred.assign(p.vec().begin(), p.vec().end());
    gt.assign(g.size(), 0);
    gt_dilated.assign(g.size(), 0);
    pred_nbr_max.assign(p.size(), -INFINITY);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y * w + x);
        gt[i] = g[i] ? 1 : 0;
        gt_count += gt[i];
        for (int dy = -r; dy <= r; ++dy) {
          for (int dx = -r; dx <= r; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            const std::size_t j = static_cast<std::size_t>(yy * w + xx);
            if (g[j]) gt_dilated[i] = 1;
            pred_nbr_max[i] = std::max(pred_nbr_max[i], p[j]);
          }
        }
      }
    }
  }

  EdgeCounts counts(double t) const {
    EdgeCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (static_cast<double>(pred[i]) >= t) {
        if (gt_dilated[i]) {
          ++c.tp;
        } else {
          ++c.fp;
        }
      }
      if (gt[i] && static_cast<double>(pred_nbr_max[i]) >= t) ++c.tp_r;
    }
    c.fn = gt_count - c.tp_r;
    return c;
  }
};

}  // namespace

EdgeScores ods_ois(const std::vector<Tensor<float>>& preds, const std::vector<Tensor<std::uint8_t>>& gts,
                   const std::vector<double>& thresholds, int tol_radius) {
  if (preds.size() != gts.size()) {
    throw ShapeError("ods_ois: " + std::to_string(preds.size()) + " predictions vs " + std::to_string(gts.size()) +
                     " ground-truth maps");
  }
  if (tol_radius < 0) throw ConfigError("tolerance radius must be >= 0");
  if (thresholds.empty()) throw ConfigError("ods_ois needs at least one threshold");
  std::vector<EdgeCounts> dataset(thresholds.size());
  double ois_sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const ImageMatch m(preds[i], gts[i], tol_radius);
    double best = 0.0;
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      const auto c = m.counts(thresholds[k]);
      best = std::max(best, f_measure(c));
      dataset[k].tp += c.tp;
      dataset[k].fp += c.fp;
      dataset[k].tp_r += c.tp_r;
      dataset[k].fn += c.fn;
    }
    ois_sum += best;
  }
  EdgeScores s;
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    const double f = f_measure(dataset[k]);
    if (f > s.ods) {
      s.ods = f;
      s.ods_threshold = thresholds[k];
    }
  }
  s.ois = preds.empty() ? 0.0 : ois_sum / static_cast<double>(preds.size());
  return s;
}

void DepthAccumulator::add(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<std::uint8_t>& valid) {
  if (pred.shape() != gt.shape() || pred.shape() != valid.shape()) {
    throw ShapeError("depth metrics: shapes " + shape_str(pred.shape()) + ", " + shape_str(gt.shape()) + ", " +
                     shape_str(valid.shape()));
  }
  const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!valid[i]) continue;
    const double p = pred[i], g = gt[i];
    if (!(g > 0.0)) throw DataError("depth metrics: ground truth must be > 0 on valid pixels");
    if (!(p > 0.0)) throw DataError("depth metrics: prediction must be > 0 on valid pixels");
    abs_rel_ += std::fabs(p - g) / g;
    sq_ += (p - g) * (p - g);
    log10_ += std::fabs(std::log10(p) - std::log10(g));
    const double ratio = std::max(p / g, g / p);
    d1_ += ratio < t1 ? 1 : 0;
    d2_ += ratio < t2 ? 1 : 0;
    d3_ += ratio < t3 ? 1 : 0;
    ++n_;
  }
}

DepthMetrics DepthAccumulator::result() const {
  if (n_ == 0) throw DataError("depth metrics: no valid pixels");
  const double n = static_cast<double>(n_);
  DepthMetrics m;
  m.abs_rel = abs_rel_ / n;
  m.rmse = std::sqrt(sq_ / n);
  m.log10 = log10_ / n;
  m.delta1 = static_cast<double>(d1_) / n;
  m.delta2 = static_cast<double>(d2_) / n;
  m.delta3 = static_cast<double>(d3_) / n;
  m.count = n_;
  return m;
}

DepthMetrics depth_metrics(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<std::uint8_t>& valid) {
  DepthAccumulator acc;
  acc.add(pred, gt, valid);
  return acc.result();
}

}  // namespace sci::tasks
