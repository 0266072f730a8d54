#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sci/kv_config.hpp"
#include "sci/nnet/checkpoint.hpp"
#include "sci/nnet/model.hpp"
#include "sci/nnet/optim.hpp"
#include "sci/random.hpp"
#include "sci/scenegen.hpp"
#include "sci/sensor.hpp"
#include "sci/tasks.hpp"

namespace sci::train {

enum class BackslashMode { kNone, kFull, kHalf };

std::string to_string(BackslashMode m);
BackslashMode backslash_from_string(const std::string& s);

// Per-sample photon budget: "fixed(v)" or "uniform(lo,hi)".
struct ApcMode {
  bool is_uniform = true;
  double lo = 1.0;
  double hi = sensor::kApcMax;

  static ApcMode fixed(double v) { return {false, v, v}; }
  static ApcMode uniform(double lo, double hi) { return {true, lo, hi}; }
  static ApcMode parse(const std::string& text);
  std::string to_string() const;
  double sample(RandomStream& stream) const { return is_uniform ? stream.uniform(lo, hi) : lo; }
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 4;
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda = 1e-3;
  double nu = 0.5;
  double eps_rate = 1e-8;
  BackslashMode backslash_mode = BackslashMode::kNone;
  ApcMode apc_mode = ApcMode::uniform(1.0, sensor::kApcMax);
  double sigma = 0.01;
  std::size_t cr = 8;
  std::uint64_t seed = 0;
  bool augment = false;

  void validate() const;
  // 1-based epoch; half mode covers epochs 1..ceil(epochs/2).
  bool rate_active(std::size_t epoch) const;
  nn::AdamConfig adam() const { return {lr, adam_beta1, adam_beta2, adam_eps}; }
  // Reads the training keys; "seed" is required.
  static TrainConfig from_kv(KvConfig& kv);
  std::map<std::string, std::string> to_kv() const;
};

// R = (1/N) sum_i (|theta_i| + eps)^nu over every tensor.
template <class Real>
double rate_term(const nn::ParamSetT<Real>& p, double eps, double nu);

// dR/dtheta_i = (nu/N) sign(theta_i) (|theta_i| + eps)^(nu-1), sign(0) = 0.
template <class Real>
nn::ParamSetT<Real> rate_grad(const nn::ParamSetT<Real>& p, double eps, double nu);

// Supervision for one sample; only the fields the head needs are read.
struct Target {
  Tensor<float> video;
  Tensor<std::uint8_t> edges;
  Tensor<float> depth;
  Tensor<std::uint8_t> valid;
};

Target target_of(const scene::Scene& s);

struct Example {
  sensor::NetInput input;
  Target target;
  double apc = 0.0;
  std::uint64_t noise_seed = 0;
};

// Simulates a measurement of `s` and packs it with its targets.
Example make_example(const scene::Scene& s, const MaskStack& mask, double apc, double sigma, std::uint64_t noise_seed);

// Batch-level normalizers: the edge positive weight is computed over the
// whole batch and the depth mean runs over every valid pixel in it.
struct LossScale {
  double pos_weight = 1.0;
  std::size_t valid = 0;
  std::size_t batch = 1;
};

LossScale loss_scale(nn::HeadKind head, const std::vector<Example>& batch);

// This sample's share of the batch loss and its gradient w.r.t. `output`.
tasks::LossGrad sample_loss(nn::HeadKind head, const Tensor<float>& output, const Target& target,
                            const LossScale& scale);

// Task loss of `model` on fixed examples, without touching its parameters.
double evaluation_loss(nn::CompDae<float>& model, const std::vector<Example>& examples);

struct StepStats {
  double task_loss = 0.0;
  double rate = 0.0;
  double objective = 0.0;  // J = task_loss + lambda_effective * rate
  double lambda_effective = 0.0;
};

class Trainer {
 public:
  Trainer(nn::CompDae<float>& model, const TrainConfig& cfg);

  // One Adam step on J = L + lambda_effective * R. J is computed from the
  // parameters before the update.
  StepStats step(const std::vector<Example>& batch, double lambda_effective);

  nn::AdamState<float>& adam() { return adam_; }
  const nn::AdamState<float>& adam() const { return adam_; }

 private:
  nn::CompDae<float>& model_;
  TrainConfig cfg_;
  nn::AdamState<float> adam_;
};

struct StepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double task_loss = 0.0;
  double rate = 0.0;
  double objective = 0.0;
  double lambda_effective = 0.0;
  double apc = 0.0;  // batch mean

  std::string to_json() const;
};

struct RunOptions {
  // When set, epoch_<k>.cdp is written after every epoch.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const StepLog&)> on_step;
  std::map<std::string, std::string> meta;
  std::optional<SubMaskStack> submask;
};

struct RunResult {
  std::vector<StepLog> log;
  std::vector<std::filesystem::path> checkpoints;
  nn::Checkpoint last;
};

// Checkpoint of the model's current state with config echo and `meta`.
nn::Checkpoint make_checkpoint(const nn::CompDae<float>& model, const nn::AdamState<float>* adam,
                               const std::map<std::string, std::string>& meta, const std::optional<SubMaskStack>& submask);

// Epoch loop: shuffle, draw APC and noise per sample, simulate, step.
RunResult run_training(const scene::Dataset& data, nn::CompDae<float>& model, const TrainConfig& cfg,
                       const MaskStack& mask, const RunOptions& opts = {});

}  // namespace sci::train
