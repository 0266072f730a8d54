#include "sci/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "sci/egcodec.hpp"
#include "sci/error.hpp"
#include "sci/evaluation.hpp"
#include "sci/kv_config.hpp"
#include "sci/maskgen.hpp"
#include "sci/nnet/checkpoint.hpp"
#include "sci/nnet/gradcheck.hpp"
#include "sci/random.hpp"
#include "sci/scenegen.hpp"
#include "sci/sensor.hpp"
#include "sci/tensor_io.hpp"
#include "sci/train.hpp"

namespace sci::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

std::string file_digest(const fs::path& p) {
  const auto bytes = read_file_bytes(p);
  return digest_hex(fnv1a64(bytes.data(), bytes.size()));
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& p, const std::string& text) {
  write_file_bytes(p, std::vector<std::uint8_t>(text.begin(), text.end()));
}

class LogFile {
 public:
  explicit LogFile(const fs::path& p) : path_(p), os_(p) {
    if (!os_) throw DataError("cannot open " + p.string() + " for writing");
  }
  void line(const std::string& s) { os_ << s << '\n'; }
  ~LogFile() { os_.flush(); }

 private:
  fs::path path_;
  std::ofstream os_;
};

struct ScenegenArgs {
  std::string config, out;
  std::uint64_t seed = 0;
};

Json run_scenegen(const ScenegenArgs& a) {
  auto kv = KvConfig::load(a.config);
  kv.set("seed", std::to_string(a.seed));
  const auto cfg = scene::SceneConfig::from_kv(kv);
  kv.finish();
  const auto data = scene::gen_dataset(cfg);
  scene::write_dataset(a.out, data);
  return {{"command", "scenegen"},   {"config_digest", file_digest(a.config)}, {"out", a.out},
          {"seed", a.seed},          {"scenes", data.size()},
          {"dataset_digest", digest_hex(data.digest())}};
}

struct MaskgenArgs {
  std::size_t t = 0, size = 0, height = 0, width = 0;
  double rho = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

Json run_maskgen(const MaskgenArgs& a) {
  const auto mask = maskgen::make_mask(a.t, a.size, a.rho, a.height, a.width, a.seed);
  tensor_write(a.out, mask.data);
  const auto st = maskgen::mask_stats(mask);
  return {{"command", "maskgen"},        {"out", a.out},          {"seed", a.seed},
          {"mask_id", digest_hex(mask.id())}, {"density", st.density}, {"dead_pixels", st.dead_pixels}};
}

struct SimulateArgs {
  std::string cube, frames, mask, out, clean_out;
  std::size_t index = 0;
  double apc = 0.0, sigma = 0.0;
  std::uint64_t seed = 0;
};

Json run_simulate(const SimulateArgs& a) {
  VideoCube x;
  std::string source_digest;
  if (!a.cube.empty()) {
    auto t = read_real_tensor(a.cube);
    if (t.ndim() == 4) t = slice_leading(t, a.index);
    if (t.ndim() != 3) throw ShapeError("cube must be (T,H,W) or (N,T,H,W), got " + shape_str(t.shape()));
    x = VideoCube(std::move(t));
    source_digest = file_digest(a.cube);
  } else {
    x = scene::ingest_frames(a.frames);
    source_digest = digest_hex(fnv1a64(encode_tensor(x.tensor()).data(), encode_tensor(x.tensor()).size()));
  }
  MaskStack mask;
  mask.data = read_u8_tensor(a.mask);
  const auto meas = sensor::simulate(x, mask, a.apc, a.sigma, a.seed);
  sensor::write_measurement(a.out, meas);
  Json j = {{"command", "simulate"},
            {"input_digest", source_digest},
            {"mask_id", digest_hex(mask.id())},
            {"out", a.out},
            {"seed", a.seed},
            {"apc", a.apc},
            {"alpha", meas.photon->alpha()},
            {"sigma", a.sigma}};
  if (!a.clean_out.empty()) {
    tensor_write(a.clean_out, sensor::clean_measurement(x, mask).y);
    j["clean_out"] = a.clean_out;
  }
  return j;
}

struct PretrainArgs {
  std::string config, data, out;
};

Json run_pretrain(const PretrainArgs& a) {
  auto kv = KvConfig::load(a.config);
  const auto data = scene::read_dataset(a.data);
  const auto& first = data.scenes.front().video;
  if (!kv.has("height")) kv.set("height", std::to_string(first.height()));
  if (!kv.has("width")) kv.set("width", std::to_string(first.width()));
  const auto mc = nn::ModelConfig::from_kv(kv);
  const auto tc = train::TrainConfig::from_kv(kv);
  const double rho = kv.get_double("rho", maskgen::kDefaultRho);
  const auto side = static_cast<std::size_t>(kv.get_int("mask_side", static_cast<std::int64_t>(maskgen::kDefaultSide)));
  kv.finish();

  auto mask_stream = derive_stream(tc.seed, "mask");
  const auto sub = maskgen::gen_submask(mc.cr, side, rho, mask_stream);
  const auto mask = maskgen::tile_mask(sub, mc.height, mc.width);
  auto init = derive_stream(tc.seed, "init");
  nn::CompDae<float> model(mc, init);

  make_dir(a.out);
  LogFile log(fs::path(a.out) / "log.jsonl");
  train::RunOptions opts;
  opts.checkpoint_dir = fs::path(a.out);
  opts.submask = sub;
  opts.meta["dataset_digest"] = digest_hex(data.digest());
  opts.on_step = [&](const train::StepLog& l) { log.line(l.to_json()); };
  const auto res = train::run_training(data, model, tc, mask, opts);
  const auto final_path = fs::path(a.out) / "final.cdp";
  nn::save_checkpoint(final_path, res.last);
  return {{"command", "pretrain"},
          {"config_digest", file_digest(a.config)},
          {"dataset_digest", digest_hex(data.digest())},
          {"out", a.out},
          {"checkpoint", final_path.string()},
          {"checkpoint_digest", digest_hex(nn::checkpoint_digest(res.last))},
          {"seed", tc.seed},
          {"steps", res.log.size()},
          {"final_task_loss", res.log.empty() ? 0.0 : res.log.back().task_loss}};
}

struct FinetuneArgs {
  std::string task, ckpt, config, data, out;
};

Json run_finetune(const FinetuneArgs& a) {
  const auto task = nn::head_from_string(a.task);
  auto kv = KvConfig::load(a.config);
  const auto pre = nn::load_checkpoint(a.ckpt);
  if (!kv.has("cr")) kv.set("cr", std::to_string(pre.model_config().cr));
  const auto tc = train::TrainConfig::from_kv(kv);
  kv.finish();
  const auto data = scene::read_dataset(a.data);

  make_dir(a.out);
  LogFile log(fs::path(a.out) / "log.jsonl");
  train::RunOptions opts;
  opts.checkpoint_dir = fs::path(a.out);
  opts.meta["dataset_digest"] = digest_hex(data.digest());
  opts.on_step = [&](const train::StepLog& l) { log.line(l.to_json()); };
  const auto res = tasks::finetune(pre, task, data, tc, opts);
  const auto final_path = fs::path(a.out) / "final.cdp";
  nn::save_checkpoint(final_path, res.checkpoint);
  return {{"command", "finetune"},
          {"task", nn::to_string(task)},
          {"pretrain_digest", digest_hex(nn::checkpoint_digest(pre))},
          {"config_digest", file_digest(a.config)},
          {"dataset_digest", digest_hex(data.digest())},
          {"out", a.out},
          {"checkpoint", final_path.string()},
          {"checkpoint_digest", digest_hex(nn::checkpoint_digest(res.checkpoint))},
          {"seed", tc.seed},
          {"steps", res.run.log.size()}};
}

struct EvalArgs {
  std::string task, ckpt, data, report;
  double apc = 0.0, sigma = 0.01;
  int tolerance = 1;
  std::uint64_t seed = 0;
};

Json run_eval(const EvalArgs& a) {
  const auto task = nn::head_from_string(a.task);
  const auto ck = nn::load_checkpoint(a.ckpt);
  const auto mc = ck.model_config();
  if (mc.head != task) {
    throw ConfigError("checkpoint has a " + nn::to_string(mc.head) + " head; cannot evaluate " + nn::to_string(task));
  }
  nn::CompDae<float> model(mc, ck.params);
  const auto data = scene::read_dataset(a.data);
  const auto t = data.scenes.front().video.frames();
  MaskStack mask;
  std::string mask_source = "checkpoint";
  if (t == mc.cr) {
    mask = tasks::checkpoint_mask(ck);
  } else {
    // Evaluating at a Cr other than the trained one needs a mask of that length.
    const double rho = ck.submask ? ck.submask->rho_nominal : maskgen::kDefaultRho;
    const std::size_t side = ck.submask ? ck.submask->side_x() : maskgen::kDefaultSide;
    mask = maskgen::make_mask(t, side, rho, mc.height, mc.width, a.seed);
    mask_source = "derived";
  }
  tasks::EvalOptions opts;
  opts.apc = a.apc;
  opts.sigma = a.sigma;
  opts.seed = a.seed;
  opts.tolerance_radius = a.tolerance;
  auto rep = tasks::evaluate(model, data, mask, opts);
  rep.checkpoint_digest = digest_hex(nn::checkpoint_digest(ck));
  write_text(a.report, rep.to_json() + "\n");
  Json j = {{"command", "eval"},
            {"task", rep.task},
            {"checkpoint_digest", rep.checkpoint_digest},
            {"dataset_digest", rep.dataset_digest},
            {"mask", mask_source},
            {"report", a.report},
            {"seed", a.seed}};
  if (task == nn::HeadKind::kReconstruction) {
    j["psnr_db"] = rep.psnr_db;
  } else if (task == nn::HeadKind::kEdge) {
    j["ods"] = rep.ods;
    j["ois"] = rep.ois;
  } else {
    j["abs_rel"] = rep.depth.abs_rel;
  }
  return j;
}

struct EgcrArgs {
  std::string ckpt;
  int order = 0;
  int bits = 16;
};

Json run_egcr(const EgcrArgs& a) {
  const auto ck = nn::load_checkpoint(a.ckpt);
  eg::EgConfig cfg{a.order, a.bits};
  const auto rep = eg::egcr(ck.params, cfg);
  return {{"command", "egcr"},          {"checkpoint_digest", digest_hex(nn::checkpoint_digest(ck))},
          {"egcr_percent", rep.egcr_percent}, {"avg_bits", rep.avg_bits},
          {"total_params", rep.total_params}, {"order", rep.order},
          {"baseline_bits", rep.baseline_bits}};
}

Json run_gradcheck(std::uint64_t seed) {
  nn::GradcheckOptions opts;
  opts.seed = seed;
  const auto r = nn::gradcheck(opts);
  return {{"command", "gradcheck"},
          {"seed", seed},
          {"checked", r.checked},
          {"max_rel_error", r.max_rel_error},
          {"worst", r.worst},
          {"pass", r.max_rel_error < 1e-4}};
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kUsage:
    case ErrorKind::kConfig: return kUsage;
    case ErrorKind::kFormat:
    case ErrorKind::kShape:
    case ErrorKind::kData:
    case ErrorKind::kCodec: return kData;
    case ErrorKind::kNumeric: return kNumeric;
  }
  return kUsage;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Snapshot compressive imaging simulator, trainer and evaluator", "sci"};
  app.require_subcommand(1, 1);

  ScenegenArgs sg;
  auto* c_sg = app.add_subcommand("scenegen", "Generate a synthetic scene dataset");
  c_sg->add_option("--config", sg.config)->required()->check(CLI::ExistingFile);
  c_sg->add_option("--out", sg.out)->required();
  c_sg->add_option("--seed", sg.seed)->required();

  MaskgenArgs mg;
  auto* c_mg = app.add_subcommand("maskgen", "Generate a tiled binary mask stack");
  c_mg->add_option("--t", mg.t)->required();
  c_mg->add_option("--size", mg.size)->required();
  c_mg->add_option("--rho", mg.rho)->required();
  c_mg->add_option("--height", mg.height)->required();
  c_mg->add_option("--width", mg.width)->required();
  c_mg->add_option("--seed", mg.seed)->required();
  c_mg->add_option("--out", mg.out)->required();

  SimulateArgs sm;
  auto* c_sm = app.add_subcommand("simulate", "Simulate a noisy snapshot measurement");
  auto* o_cube = c_sm->add_option("--cube", sm.cube, "CDT1 real tensor (T,H,W) or (N,T,H,W)");
  auto* o_frames = c_sm->add_option("--frames", sm.frames, "directory of P5 PGM frames");
  o_cube->excludes(o_frames);
  c_sm->add_option("--index", sm.index, "scene index for 4-D cubes");
  c_sm->add_option("--mask", sm.mask)->required();
  c_sm->add_option("--apc", sm.apc)->required();
  c_sm->add_option("--sigma", sm.sigma)->required();
  c_sm->add_option("--seed", sm.seed)->required();
  c_sm->add_option("--out", sm.out)->required();
  c_sm->add_option("--clean-out", sm.clean_out);

  PretrainArgs pt;
  auto* c_pt = app.add_subcommand("pretrain", "Pre-train the reconstruction model");
  c_pt->add_option("--config", pt.config)->required()->check(CLI::ExistingFile);
  c_pt->add_option("--data", pt.data)->required();
  c_pt->add_option("--out", pt.out)->required();

  FinetuneArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "Fine-tune decoder and a task head");
  c_ft->add_option("--task", ft.task)->required()->check(CLI::IsMember({"edge", "depth"}));
  c_ft->add_option("--ckpt", ft.ckpt)->required();
  c_ft->add_option("--config", ft.config)->required()->check(CLI::ExistingFile);
  c_ft->add_option("--data", ft.data)->required();
  c_ft->add_option("--out", ft.out)->required();

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  c_ev->add_option("--task", ev.task)->required()->check(CLI::IsMember({"recon", "reconstruction", "edge", "depth"}));
  c_ev->add_option("--ckpt", ev.ckpt)->required();
  c_ev->add_option("--data", ev.data)->required();
  c_ev->add_option("--apc", ev.apc)->required();
  c_ev->add_option("--seed", ev.seed)->required();
  c_ev->add_option("--report", ev.report)->required();
  c_ev->add_option("--sigma", ev.sigma, "Gaussian read noise")->capture_default_str();
  c_ev->add_option("--tolerance", ev.tolerance, "edge matching radius")->capture_default_str();

  EgcrArgs eg;
  auto* c_eg = app.add_subcommand("egcr", "Exp-Golomb compression rate of a checkpoint");
  c_eg->add_option("--ckpt", eg.ckpt)->required();
  c_eg->add_option("--order", eg.order)->capture_default_str();
  c_eg->add_option("--bits", eg.bits)->capture_default_str();

  std::uint64_t gc_seed = 0;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  c_gc->add_option("--seed", gc_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    Json summary;
    if (c_sg->parsed()) {
      summary = run_scenegen(sg);
    } else if (c_mg->parsed()) {
      summary = run_maskgen(mg);
    } else if (c_sm->parsed()) {
      if (sm.cube.empty() && sm.frames.empty()) throw UsageError("simulate needs --cube or --frames");
      summary = run_simulate(sm);
    } else if (c_pt->parsed()) {
      summary = run_pretrain(pt);
    } else if (c_ft->parsed()) {
      summary = run_finetune(ft);
    } else if (c_ev->parsed()) {
      summary = run_eval(ev);
    } else if (c_eg->parsed()) {
      summary = run_egcr(eg);
    } else if (c_gc->parsed()) {
      summary = run_gradcheck(gc_seed);
      out << summary.dump() << '\n';
      return summary["pass"].get<bool>() ? kOk : kNumeric;
    }
    out << summary.dump() << '\n';
    return kOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
}

}  // namespace sci::cli
