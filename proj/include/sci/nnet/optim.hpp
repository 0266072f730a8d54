#pragma once

#include <cstdint>
#include <vector>

#include "sci/nnet/param_set.hpp"

namespace sci::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class Real>
struct AdamState {
  ParamSetT<Real> m;
  ParamSetT<Real> v;
  std::uint64_t step = 0;

  static AdamState zeros_for(const ParamSetT<Real>& params) { return {params.zeros_like(), params.zeros_like(), 0}; }
};

// One bias-corrected Adam step. Tensors whose `trainable` entry is zero are
// left untouched, moments included.
template <class Real>
void adam_update(ParamSetT<Real>& params, const ParamSetT<Real>& grads, AdamState<Real>& state, const AdamConfig& cfg,
                 const std::vector<char>& trainable);

}  // namespace sci::nn
