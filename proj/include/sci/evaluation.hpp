#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sci/nnet/checkpoint.hpp"
#include "sci/nnet/model.hpp"
#include "sci/scenegen.hpp"
#include "sci/tasks.hpp"
#include "sci/train.hpp"

namespace sci::tasks {

struct MetricsReport {
  std::string task;
  std::size_t scenes = 0;
  std::size_t cr = 0;
  // reconstruction
  double psnr_db = 0.0;
  double baseline_psnr_db = 0.0;  // clamped channel-0 estimate vs clean video
  // edge
  double ods = 0.0;
  double ois = 0.0;
  double ods_threshold = 0.0;
  std::vector<double> thresholds;
  int tolerance_radius = 1;
  // depth
  DepthMetrics depth;
  double d_min = nn::kDepthMin;
  double d_max = nn::kDepthMax;
  // provenance
  std::string checkpoint_digest;
  std::string dataset_digest;
  double apc = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;

  std::string to_json() const;
};

struct EvalOptions {
  double apc = 20.0;
  double sigma = 0.01;
  std::uint64_t seed = 0;
  int tolerance_radius = 1;
  std::vector<double> thresholds = default_thresholds();
};

// Scene i is measured with its own noise seed derived from (seed, i). The
// mask frame count sets the evaluated Cr and must match the scenes.
MetricsReport evaluate(nn::CompDae<float>& model, const scene::Dataset& data, const MaskStack& mask,
                       const EvalOptions& opts);

// Replaces the head with a fresh `task` head (drawn from derive_stream(cfg.seed,
// "head")), freezes the encoder and trains decoder and head.
struct FinetuneResult {
  nn::Checkpoint checkpoint;
  train::RunResult run;
};

FinetuneResult finetune(const nn::Checkpoint& pretrained, nn::HeadKind task, const scene::Dataset& data,
                        const train::TrainConfig& cfg, const train::RunOptions& opts = {});

// Mask stored in a checkpoint, tiled to the model's frame size.
MaskStack checkpoint_mask(const nn::Checkpoint& ckpt);

}  // namespace sci::tasks
