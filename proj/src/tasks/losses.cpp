#include <algorithm>
#include <cmath>

#include "sci/error.hpp"
#include "sci/tasks.hpp"

namespace sci::tasks {

namespace {

void check_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": shape " + shape_str(a) + " vs " + shape_str(b));
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

double recon_loss(const Tensor<float>& pred, const Tensor<float>& target) { return recon_loss_grad(pred, target).value; }

LossGrad recon_loss_grad(const Tensor<float>& pred, const Tensor<float>& target) {
  check_same(pred.shape(), target.shape(), "reconstruction loss");
  LossGrad out;
  out.grad = Tensor<float>(pred.shape());
  const double n = static_cast<double>(pred.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    sum += d * d;
    out.grad[i] = static_cast<float>(2.0 * d / n);
  }
  out.value = sum / n;
  return out;
}

double psnr(const Tensor<float>& pred, const Tensor<float>& target) {
  const double mse = recon_loss(pred, target);
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double edge_pos_weight(const Tensor<std::uint8_t>& gt) {
  std::size_t pos = 0;
  for (auto v : gt.data()) pos += v ? 1 : 0;
  if (pos == 0) return 1.0;
  const double ratio = static_cast<double>(gt.size() - pos) / static_cast<double>(pos);
  return std::clamp(ratio, 1.0, 50.0);
}

double edge_loss(const Tensor<float>& logits, const Tensor<std::uint8_t>& gt) { return edge_loss_grad(logits, gt).value; }

LossGrad edge_loss_grad(const Tensor<float>& logits, const Tensor<std::uint8_t>& gt) {
  return edge_loss_grad(logits, gt, edge_pos_weight(gt));
}

LossGrad edge_loss_grad(const Tensor<float>& logits, const Tensor<std::uint8_t>& gt, double beta) {
  check_same(logits.shape(), gt.shape(), "edge loss");
  const double n = static_cast<double>(logits.size());
  LossGrad out;
  out.grad = Tensor<float>(logits.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    if (gt[i]) {
      sum += beta * softplus(-z);
      out.grad[i] = static_cast<float>(beta * (sigmoid(z) - 1.0) / n);
    } else {
      sum += softplus(z);
      out.grad[i] = static_cast<float>(sigmoid(z) / n);
    }
  }
  out.value = sum / n;
  return out;
}

double depth_loss(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<std::uint8_t>& valid) {
  return depth_loss_grad(pred, gt, valid).value;
}

LossGrad depth_loss_grad(const Tensor<float>& pred, const Tensor<float>& gt, const Tensor<std::uint8_t>& valid) {
  check_same(pred.shape(), gt.shape(), "depth loss");
  check_same(pred.shape(), valid.shape(), "depth loss validity mask");
  std::size_t n = 0;
  for (auto v : valid.data()) n += v ? 1 : 0;
  if (n == 0) throw DataError("depth loss: no valid pixels");
  LossGrad out;
  out.grad = Tensor<float>(pred.shape());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!valid[i]) continue;
    const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
    sum += std::fabs(d);
    out.grad[i] = static_cast<float>((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / static_cast<double>(n));
  }
  out.value = sum / static_cast<double>(n);
  return out;
}

}  // namespace sci::tasks
