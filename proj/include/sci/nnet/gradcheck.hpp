#pragma once

#include <cstdint>
#include <string>

#include "sci/nnet/model.hpp"

namespace sci::nn {

struct GradcheckOptions {
  ModelConfig model;  // defaults to the tiny configuration below
  std::uint64_t seed = 0;
  double step = 1e-5;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;

  GradcheckOptions();
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<tensor>[<index>]"
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Central differences on every parameter of a 64-bit model with randomized
// weights, loss = mean squared error of the head output against a random
// target.
GradcheckResult gradcheck(const GradcheckOptions& opts = {});

}  // namespace sci::nn
