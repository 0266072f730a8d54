#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "sci/kv_config.hpp"
#include "sci/nnet/layers.hpp"
#include "sci/nnet/param_set.hpp"
#include "sci/random.hpp"
#include "sci/sensor.hpp"

namespace sci::nn {

enum class HeadKind { kReconstruction, kEdge, kDepth };

std::string to_string(HeadKind h);
HeadKind head_from_string(const std::string& s);

// Output range of the depth head, in scene distance units.
inline constexpr double kDepthMin = 1.0;
inline constexpr double kDepthMax = 80.0;

struct ModelConfig {
  std::size_t channels = 16;
  std::size_t encoder_depth = 4;
  std::size_t decoder_depth = 1;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 2;
  std::size_t cr = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  HeadKind head = HeadKind::kReconstruction;

  // Throws ConfigError on non-positive dims; warns (does not reject) when
  // the decoder is at least half as deep as the encoder.
  void validate() const;

  // Reads the model keys (channels, encoder_depth, ...) from `kv`.
  static ModelConfig from_kv(KvConfig& kv);
  std::map<std::string, std::string> to_kv() const;
};

// Closed-form parameter count for `cfg`.
std::size_t parameter_count(const ModelConfig& cfg);

// Token generation (3-D conv, 3 -> C) -> encoder blocks -> decoder blocks ->
// per-position C -> 1 head. Output is (T, H, W).
template <class Real>
class CompDae {
 public:
  // Fresh model; weights are Xavier-uniform draws from `init` in canonical
  // parameter order, biases zero, layer-norm scales one. The last projection
  // of every residual branch starts at zero so each block is the identity.
  CompDae(const ModelConfig& cfg, RandomStream& init);
  // Model around existing parameters (e.g. a checkpoint); layout must match.
  CompDae(const ModelConfig& cfg, ParamSetT<Real> params);

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamSetT<Real>& params() noexcept { return params_; }
  const ParamSetT<Real>& params() const noexcept { return params_; }
  ParamSetT<Real>& grads() noexcept { return grads_; }
  const ParamSetT<Real>& grads() const noexcept { return grads_; }

  // input: (3, T, H, W) with H, W equal to the configured spatial size; T
  // may differ from cfg.cr. Records activations for backward().
  Tensor<Real> forward(const Tensor<Real>& input);
  Tensor<float> forward(const sensor::NetInput& input);

  // Accumulates d(loss)/d(theta) into grads() given d(loss)/d(output).
  void backward(const Tensor<Real>& grad_output);
  void zero_grad();

  // Frozen tensors receive no gradient and are skipped by the optimizer.
  void freeze(const std::set<Partition>& tags);
  const std::set<Partition>& frozen() const noexcept { return frozen_; }
  const std::vector<char>& trainable_mask() const noexcept { return trainable_; }

  // Replaces the head kind and redraws head tensors from `init`.
  void reset_head(HeadKind kind, RandomStream& init);

  std::size_t block_count() const { return blocks_.size(); }
  const Block<Real>& block(std::size_t i) const { return blocks_.at(i); }
  // Runs block i alone on (C, T*H*W) activations; for inspection and tests.
  Tensor<Real> run_block(std::size_t i, const Tensor<Real>& x, const Geometry& g);

 private:
  void declare_parameters(RandomStream* init);
  void wire_layers();
  void check_identity_start();
  ParamRefs<Real> refs() { return {&params_, &grads_, &trainable_}; }

  ModelConfig cfg_;
  ParamSetT<Real> params_;
  ParamSetT<Real> grads_;
  std::vector<char> trainable_;
  std::set<Partition> frozen_;

  Conv<Real> tokengen_;
  std::vector<Block<Real>> blocks_;
  Linear<Real> head_;
  std::vector<std::size_t> head_params_;
  std::size_t head_w_ = 0;

  bool has_forward_ = false;
  Geometry geo_;
  Tensor<Real> output_;
};

// Xavier-uniform bound sqrt(6 / (fan_in + fan_out)).
double xavier_bound(std::size_t fan_in, std::size_t fan_out);

}  // namespace sci::nn
