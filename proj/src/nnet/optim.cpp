#include "sci/nnet/optim.hpp"

#include <cmath>

namespace sci::nn {

template <class Real>
void adam_update(ParamSetT<Real>& params, const ParamSetT<Real>& grads, AdamState<Real>& state, const AdamConfig& cfg,
                 const std::vector<char>& trainable) {
  state.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const Real b1 = static_cast<Real>(cfg.beta1), b2 = static_cast<Real>(cfg.beta2);
  const Real step = static_cast<Real>(cfg.lr / c1);
  const Real inv_c2 = static_cast<Real>(1.0 / c2);
  const Real eps = static_cast<Real>(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable[i]) continue;
    auto& theta = params[i];
    const auto& g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = b1 * m[j] + (Real(1) - b1) * g[j];
      v[j] = b2 * v[j] + (Real(1) - b2) * g[j] * g[j];
      theta[j] -= step * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

template void adam_update<float>(ParamSetT<float>&, const ParamSetT<float>&, AdamState<float>&, const AdamConfig&,
                                 const std::vector<char>&);
template void adam_update<double>(ParamSetT<double>&, const ParamSetT<double>&, AdamState<double>&,
                                  const AdamConfig&, const std::vector<char>&);

}  // namespace sci::nn
