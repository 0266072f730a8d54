#include "sci/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "sci/error.hpp"
#include "sci/maskgen.hpp"
#include "sci/sensor.hpp"

namespace sci::tasks {

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = task;
  j["scenes"] = scenes;
  j["cr"] = cr;
  if (task == "reconstruction") {
    j["psnr_db"] = psnr_db;
    j["baseline_psnr_db"] = baseline_psnr_db;
  } else if (task == "edge") {
    j["ods"] = ods;
    j["ois"] = ois;
    j["ods_threshold"] = ods_threshold;
    j["thresholds"] = thresholds;
    j["tolerance_radius"] = tolerance_radius;
  } else if (task == "depth") {
    j["abs_rel"] = depth.abs_rel;
    j["rmse"] = depth.rmse;
    j["log10"] = depth.log10;
    j["delta1"] = depth.delta1;
    j["delta2"] = depth.delta2;
    j["delta3"] = depth.delta3;
    j["d_min"] = d_min;
    j["d_max"] = d_max;
    j["valid_pixels"] = depth.count;
  }
  j["provenance"] = {{"checkpoint_digest", checkpoint_digest},
                     {"dataset_digest", dataset_digest},
                     {"apc", apc},
                     {"sigma", sigma},
                     {"seed", seed}};
  return j.dump();
}

namespace {

float sigmoid(float z) { return 1.0f / (1.0f + std::exp(-z)); }

Tensor<float> frame_of(const Tensor<float>& cube, std::size_t f) { return slice_leading(cube, f); }

}  // namespace

MetricsReport evaluate(nn::CompDae<float>& model, const scene::Dataset& data, const MaskStack& mask,
                       const EvalOptions& opts) {
  if (data.scenes.empty()) throw DataError("evaluation dataset is empty");
  const auto head = model.config().head;
  MetricsReport rep;
  rep.task = nn::to_string(head);
  rep.scenes = data.size();
  rep.cr = mask.frames();
  rep.apc = opts.apc;
  rep.sigma = opts.sigma;
  rep.seed = opts.seed;
  rep.thresholds = opts.thresholds;
  rep.tolerance_radius = opts.tolerance_radius;
  rep.checkpoint_digest = digest_hex(nn::param_digest(model.params()));
  rep.dataset_digest = digest_hex(data.digest());

  double psnr_sum = 0.0, base_sum = 0.0;
  std::vector<Tensor<float>> probs;
  std::vector<Tensor<std::uint8_t>> gts;
  DepthAccumulator depth;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& sc = data.scenes[i];
    if (sc.video.tensor().shape() != mask.data.shape()) {
      throw ShapeError("scene " + shape_str(sc.video.tensor().shape()) + " vs mask " + shape_str(mask.data.shape()));
    }
    auto stream = derive_stream(opts.seed, "eval/" + std::to_string(i));
    const auto meas = sensor::simulate(sc.video, mask, opts.apc, opts.sigma, stream.next_u64());
    const auto input = sensor::estimate_input(meas, mask);
    const auto out = model.forward(input);
    switch (head) {
      case nn::HeadKind::kReconstruction: {
        const auto est = sensor::normalized_estimate(meas.y, mask);
        Tensor<float> base(sc.video.tensor().shape());
        const std::size_t hw = est.size();
        for (std::size_t k = 0; k < base.size(); ++k) base[k] = std::clamp(est[k % hw], 0.0f, 1.0f);
        psnr_sum += psnr(out, sc.video.tensor());
        base_sum += psnr(base, sc.video.tensor());
        break;
      }
      case nn::HeadKind::kEdge:
        for (std::size_t f = 0; f < out.dim(0); ++f) {
          auto p = frame_of(out, f);
          for (auto& v : p.vec()) v = sigmoid(v);
          probs.push_back(std::move(p));
          gts.push_back(slice_leading(sc.edges, f));
        }
        break;
      case nn::HeadKind::kDepth:
        depth.add(out, sc.depth, sc.valid);
        break;
    }
  }
  const double n = static_cast<double>(data.size());
  switch (head) {
    case nn::HeadKind::kReconstruction:
      rep.psnr_db = psnr_sum / n;
      rep.baseline_psnr_db = base_sum / n;
      break;
    case nn::HeadKind::kEdge: {
      const auto s = ods_ois(probs, gts, opts.thresholds, opts.tolerance_radius);
      rep.ods = s.ods;
      rep.ois = s.ois;
      rep.ods_threshold = s.ods_threshold;
      break;
    }
    case nn::HeadKind::kDepth:
      rep.depth = depth.result();
      break;
  }
  return rep;
}

MaskStack checkpoint_mask(const nn::Checkpoint& ckpt) {
  if (!ckpt.submask) throw FormatError("checkpoint carries no mask");
  const auto mc = ckpt.model_config();
  return maskgen::tile_mask(*ckpt.submask, mc.height, mc.width);
}

FinetuneResult finetune(const nn::Checkpoint& pretrained, nn::HeadKind task, const scene::Dataset& data,
                        const train::TrainConfig& cfg, const train::RunOptions& opts) {
  if (task == nn::HeadKind::kReconstruction) {
    throw ConfigError("fine-tuning targets a downstream head (edge or depth), not reconstruction");
  }
  auto mc = pretrained.model_config();
  nn::CompDae<float> model(mc, pretrained.params);
  auto init = derive_stream(cfg.seed, "head");
  model.reset_head(task, init);
  model.freeze({nn::Partition::kEncoder});

  train::RunOptions run_opts = opts;
  run_opts.submask = pretrained.submask;
  run_opts.meta["pretrain_digest"] = digest_hex(nn::checkpoint_digest(pretrained));
  run_opts.meta["task"] = nn::to_string(task);
  run_opts.meta["head_reinit"] = "derive(" + std::to_string(cfg.seed) + ",head)";
  run_opts.meta["frozen"] = "encoder";

  FinetuneResult res;
  const auto mask = checkpoint_mask(pretrained);
  if (cfg.epochs == 0) {
    auto meta = run_opts.meta;
    for (const auto& [k, v] : cfg.to_kv()) meta["train." + k] = v;
    meta["epoch"] = "0";
    res.checkpoint = train::make_checkpoint(model, nullptr, meta, run_opts.submask);
    return res;
  }
  res.run = train::run_training(data, model, cfg, mask, run_opts);
  res.checkpoint = res.run.last;
  return res;
}

}  // namespace sci::tasks
