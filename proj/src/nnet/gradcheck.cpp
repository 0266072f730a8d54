#include "sci/nnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sci/random.hpp"

namespace sci::nn {

GradcheckOptions::GradcheckOptions() {
  model.channels = 4;
  model.encoder_depth = 1;
  model.decoder_depth = 0;
  model.heads = 2;
  model.mlp_ratio = 2;
  model.cr = 2;
  model.height = 4;
  model.width = 4;
  model.head = HeadKind::kReconstruction;
}

namespace {

double mse(const Tensor<double>& out, const Tensor<double>& target) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += (out[i] - target[i]) * (out[i] - target[i]);
  return s / static_cast<double>(out.size());
}

}  // namespace

GradcheckResult gradcheck(const GradcheckOptions& opts) {
  auto init = derive_stream(opts.seed, "gradcheck/init");
  CompDae<double> model(opts.model, init);
  // Zero-initialized projections would hide whole branches from the check.
  auto perturb = derive_stream(opts.seed, "gradcheck/params");
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    for (auto& v : model.params()[i].vec()) v = perturb.uniform(-0.5, 0.5);
  }
  auto data = derive_stream(opts.seed, "gradcheck/data");
  const auto& mc = opts.model;
  Tensor<double> input({3, mc.cr, mc.height, mc.width});
  for (auto& v : input.vec()) v = data.uniform();
  Tensor<double> target({mc.cr, mc.height, mc.width});
  for (auto& v : target.vec()) v = data.uniform();

  model.zero_grad();
  const auto out = model.forward(input);
  Tensor<double> g(out.shape());
  for (std::size_t i = 0; i < out.size(); ++i) g[i] = 2.0 * (out[i] - target[i]) / static_cast<double>(out.size());
  model.backward(g);

  GradcheckResult res;
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    auto& theta = model.params()[p];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double keep = theta[j];
      theta[j] = keep + opts.step;
      const double up = mse(model.forward(input), target);
      theta[j] = keep - opts.step;
      const double down = mse(model.forward(input), target);
      theta[j] = keep;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic = model.grads()[p][j];
      const double err =
          std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), opts.floor});
      ++res.checked;
      if (err > res.max_rel_error || res.worst.empty()) {
        res.max_rel_error = err;
        res.worst = model.params().entry(p).name + "[" + std::to_string(j) + "]";
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace sci::nn
