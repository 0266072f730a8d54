#include "sci/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "sci/error.hpp"

namespace sci::train {

std::string to_string(BackslashMode m) {
  switch (m) {
    case BackslashMode::kNone: return "none";
    case BackslashMode::kFull: return "full";
    case BackslashMode::kHalf: return "half";
  }
  return "none";
}

BackslashMode backslash_from_string(const std::string& s) {
  if (s == "none") return BackslashMode::kNone;
  if (s == "full") return BackslashMode::kFull;
  if (s == "half") return BackslashMode::kHalf;
  throw ConfigError("unknown backslash_mode '" + s + "' (expected none, full or half)");
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double parse_number(const std::string& s, const std::string& ctx) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("bad number '" + s + "' in " + ctx);
  }
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

ApcMode ApcMode::parse(const std::string& text) {
  const std::string t = trim(text);
  const auto open = t.find('(');
  if (open == std::string::npos) return fixed(parse_number(t, "apc_mode"));
  if (t.back() != ')') throw ConfigError("bad apc_mode '" + text + "'");
  const std::string kind = trim(t.substr(0, open));
  const std::string args = t.substr(open + 1, t.size() - open - 2);
  if (kind == "fixed") return fixed(parse_number(trim(args), "apc_mode"));
  if (kind == "uniform") {
    const auto comma = args.find(',');
    if (comma == std::string::npos) throw ConfigError("apc_mode uniform needs (lo,hi): '" + text + "'");
    return uniform(parse_number(trim(args.substr(0, comma)), "apc_mode"),
                   parse_number(trim(args.substr(comma + 1)), "apc_mode"));
  }
  throw ConfigError("unknown apc_mode '" + text + "' (expected fixed(v) or uniform(lo,hi))");
}

std::string ApcMode::to_string() const {
  return is_uniform ? "uniform(" + fmt_double(lo) + "," + fmt_double(hi) + ")" : "fixed(" + fmt_double(lo) + ")";
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
  if (!(nu > 0.0 && nu <= 2.0)) throw ConfigError("nu must lie in (0, 2]");
  if (!(eps_rate >= 0.0)) throw ConfigError("eps_rate must be >= 0");
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
  if (cr == 0) throw ConfigError("cr must be >= 1");
  if (!(apc_mode.lo > 0.0 && apc_mode.hi >= apc_mode.lo) || !std::isfinite(apc_mode.hi)) {
    throw ConfigError("apc_mode needs 0 < lo <= hi, got " + apc_mode.to_string());
  }
}

bool TrainConfig::rate_active(std::size_t epoch) const {
  switch (backslash_mode) {
    case BackslashMode::kNone: return false;
    case BackslashMode::kFull: return true;
    case BackslashMode::kHalf: return epoch >= 1 && epoch <= (epochs + 1) / 2;
  }
  return false;
}

TrainConfig TrainConfig::from_kv(KvConfig& kv) {
  TrainConfig c;
  auto count = [&](const char* key, std::size_t fallback) {
    const auto v = kv.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.epochs = count("epochs", c.epochs);
  c.batch_size = count("batch_size", c.batch_size);
  c.lr = kv.get_double("lr", c.lr);
  c.adam_beta1 = kv.get_double("adam_beta1", c.adam_beta1);
  c.adam_beta2 = kv.get_double("adam_beta2", c.adam_beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.lambda = kv.get_double("lambda", c.lambda);
  c.nu = kv.get_double("nu", c.nu);
  c.eps_rate = kv.get_double("eps_rate", c.eps_rate);
  c.backslash_mode = backslash_from_string(kv.get_string("backslash_mode", to_string(c.backslash_mode)));
  c.apc_mode = ApcMode::parse(kv.get_string("apc_mode", c.apc_mode.to_string()));
  c.sigma = kv.get_double("sigma", c.sigma);
  c.cr = count("cr", c.cr);
  c.seed = kv.require_u64("seed");
  c.augment = kv.get_bool("augment", c.augment);
  c.validate();
  return c;
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
  return {{"epochs", std::to_string(epochs)},
          {"batch_size", std::to_string(batch_size)},
          {"lr", fmt_double(lr)},
          {"adam_beta1", fmt_double(adam_beta1)},
          {"adam_beta2", fmt_double(adam_beta2)},
          {"adam_eps", fmt_double(adam_eps)},
          {"lambda", fmt_double(lambda)},
          {"nu", fmt_double(nu)},
          {"eps_rate", fmt_double(eps_rate)},
          {"backslash_mode", to_string(backslash_mode)},
          {"apc_mode", apc_mode.to_string()},
          {"sigma", fmt_double(sigma)},
          {"cr", std::to_string(cr)},
          {"seed", std::to_string(seed)},
          {"augment", augment ? "true" : "false"}};
}

namespace {

void check_rate_args(double eps, double nu) {
  if (!(eps >= 0.0)) throw ConfigError("rate eps must be >= 0");
  if (!(nu > 0.0 && nu <= 2.0)) throw ConfigError("rate nu must lie in (0, 2]");
}

}  // namespace

template <class Real>
double rate_term(const nn::ParamSetT<Real>& p, double eps, double nu) {
  check_rate_args(eps, nu);
  const std::size_t n = p.total_count();
  if (n == 0) throw ConfigError("rate term of an empty parameter set");
  double sum = 0.0;
  for (const auto& e : p.entries()) {
    for (const Real v : e.value.data()) {
      if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite parameter in " + e.name);
      sum += std::pow(std::fabs(static_cast<double>(v)) + eps, nu);
    }
  }
  return sum / static_cast<double>(n);
}

template <class Real>
nn::ParamSetT<Real> rate_grad(const nn::ParamSetT<Real>& p, double eps, double nu) {
  check_rate_args(eps, nu);
  const std::size_t n = p.total_count();
  if (n == 0) throw ConfigError("rate gradient of an empty parameter set");
  const double scale = nu / static_cast<double>(n);
  auto g = p.zeros_like();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& src = p[i];
    auto& dst = g[i];
    for (std::size_t j = 0; j < src.size(); ++j) {
      const double v = src[j];
      if (!std::isfinite(v)) throw NumericError("non-finite parameter in " + p.entry(i).name);
      if (v == 0.0) continue;
      const double s = v > 0.0 ? 1.0 : -1.0;
      dst[j] = static_cast<Real>(scale * s * std::pow(std::fabs(v) + eps, nu - 1.0));
    }
  }
  return g;
}

template double rate_term(const nn::ParamSetT<float>&, double, double);
template double rate_term(const nn::ParamSetT<double>&, double, double);
template nn::ParamSetT<float> rate_grad(const nn::ParamSetT<float>&, double, double);
template nn::ParamSetT<double> rate_grad(const nn::ParamSetT<double>&, double, double);

Target target_of(const scene::Scene& s) { return {s.video.tensor(), s.edges, s.depth, s.valid}; }

Example make_example(const scene::Scene& s, const MaskStack& mask, double apc, double sigma, std::uint64_t noise_seed) {
  const auto meas = sensor::simulate(s.video, mask, apc, sigma, noise_seed);
  return {sensor::estimate_input(meas, mask), target_of(s), apc, noise_seed};
}

LossScale loss_scale(nn::HeadKind head, const std::vector<Example>& batch) {
  if (batch.empty()) throw UsageError("empty batch");
  LossScale sc;
  sc.batch = batch.size();
  if (head == nn::HeadKind::kEdge) {
    std::size_t pos = 0, total = 0;
    for (const auto& ex : batch) {
      for (auto v : ex.target.edges.data()) pos += v ? 1 : 0;
      total += ex.target.edges.size();
    }
    sc.pos_weight = pos == 0 ? 1.0 : std::clamp(static_cast<double>(total - pos) / static_cast<double>(pos), 1.0, 50.0);
  } else if (head == nn::HeadKind::kDepth) {
    for (const auto& ex : batch) {
      for (auto v : ex.target.valid.data()) sc.valid += v ? 1 : 0;
    }
    if (sc.valid == 0) throw DataError("depth batch has no valid pixels");
  }
  return sc;
}

tasks::LossGrad sample_loss(nn::HeadKind head, const Tensor<float>& output, const Target& target,
                            const LossScale& scale) {
  tasks::LossGrad lg;
  double share = 1.0 / static_cast<double>(scale.batch);
  switch (head) {
    case nn::HeadKind::kReconstruction:
      lg = tasks::recon_loss_grad(output, target.video);
      break;
    case nn::HeadKind::kEdge:
      lg = tasks::edge_loss_grad(output, target.edges, scale.pos_weight);
      break;
    case nn::HeadKind::kDepth: {
      std::size_t n = 0;
      for (auto v : target.valid.data()) n += v ? 1 : 0;
      if (n == 0) return {0.0, Tensor<float>(output.shape())};
      lg = tasks::depth_loss_grad(output, target.depth, target.valid);
      share = static_cast<double>(n) / static_cast<double>(scale.valid);
      break;
    }
  }
  lg.value *= share;
  for (auto& g : lg.grad.vec()) g = static_cast<float>(g * share);
  return lg;
}

namespace {

std::string seed_list(const std::vector<Example>& batch) {
  std::string s;
  for (const auto& ex : batch) s += (s.empty() ? "" : ",") + std::to_string(ex.noise_seed);
  return "[" + s + "]";
}

}  // namespace

double evaluation_loss(nn::CompDae<float>& model, const std::vector<Example>& examples) {
  const auto head = model.config().head;
  const auto scale = loss_scale(head, examples);
  double total = 0.0;
  for (const auto& ex : examples) total += sample_loss(head, model.forward(ex.input), ex.target, scale).value;
  return total;
}

Trainer::Trainer(nn::CompDae<float>& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg), adam_(nn::AdamState<float>::zeros_for(model.params())) {
  cfg_.validate();
}

StepStats Trainer::step(const std::vector<Example>& batch, double lambda_effective) {
  const auto head = model_.config().head;
  const auto scale = loss_scale(head, batch);
  model_.zero_grad();
  StepStats st;
  try {
    for (const auto& ex : batch) {
      const auto out = model_.forward(ex.input);
      auto lg = sample_loss(head, out, ex.target, scale);
      st.task_loss += lg.value;
      model_.backward(lg.grad);
    }
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + "; batch noise seeds " + seed_list(batch));
  }
  if (!std::isfinite(st.task_loss)) {
    throw NumericError("non-finite task loss; batch noise seeds " + seed_list(batch));
  }
  st.rate = rate_term(model_.params(), cfg_.eps_rate, cfg_.nu);
  st.lambda_effective = lambda_effective;
  st.objective = st.task_loss + lambda_effective * st.rate;
  if (lambda_effective > 0.0) {
    const auto rg = rate_grad(model_.params(), cfg_.eps_rate, cfg_.nu);
    const auto& trainable = model_.trainable_mask();
    for (std::size_t i = 0; i < rg.size(); ++i) {
      if (!trainable[i]) continue;
      auto& g = model_.grads()[i];
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += static_cast<float>(lambda_effective * rg[i][j]);
    }
  }
  nn::adam_update(model_.params(), model_.grads(), adam_, cfg_.adam(), model_.trainable_mask());
  return st;
}

std::string StepLog::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["task_loss"] = task_loss;
  j["rate"] = rate;
  j["J"] = objective;
  j["lambda_effective"] = lambda_effective;
  j["apc"] = apc;
  return j.dump();
}

nn::Checkpoint make_checkpoint(const nn::CompDae<float>& model, const nn::AdamState<float>* adam,
                               const std::map<std::string, std::string>& meta,
                               const std::optional<SubMaskStack>& submask) {
  nn::Checkpoint ck;
  ck.meta = meta;
  for (const auto& [k, v] : model.config().to_kv()) ck.meta[k] = v;
  ck.params = model.params();
  if (adam) ck.adam = *adam;
  if (submask) {
    ck.submask = submask;
    ck.meta["rho"] = fmt_double(submask->rho_nominal);
  }
  return ck;
}

namespace {

// Dihedral transform of a (T, H, W) tensor: bit 0 flips columns, bit 1 flips
// rows, bit 2 transposes (square frames only).
template <class T>
Tensor<T> dihedral(const Tensor<T>& in, unsigned op) {
  const std::size_t t = in.dim(0), h = in.dim(1), w = in.dim(2);
  Tensor<T> out(in.shape());
  for (std::size_t f = 0; f < t; ++f) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        std::size_t si = (op & 2) ? h - 1 - i : i;
        std::size_t sj = (op & 1) ? w - 1 - j : j;
        if (op & 4) std::swap(si, sj);
        out.at(f, i, j) = in.at(f, si, sj);
      }
    }
  }
  return out;
}

scene::Scene augmented(const scene::Scene& s, unsigned op) {
  scene::Scene a;
  a.video = VideoCube::unchecked(dihedral(s.video.tensor(), op));
  a.edges = dihedral(s.edges, op);
  a.depth = dihedral(s.depth, op);
  a.valid = dihedral(s.valid, op);
  return a;
}

void check_data(const scene::Dataset& data, const nn::ModelConfig& mc, const TrainConfig& cfg, const MaskStack& mask) {
  if (data.scenes.empty()) throw ConfigError("training data source is empty");
  if (cfg.cr != mc.cr) {
    throw ConfigError("train cr " + std::to_string(cfg.cr) + " differs from model cr " + std::to_string(mc.cr));
  }
  if (mask.frames() != cfg.cr || mask.height() != mc.height || mask.width() != mc.width) {
    throw ShapeError("mask " + shape_str(mask.data.shape()) + " does not match model (" + std::to_string(mc.cr) + ", " +
                     std::to_string(mc.height) + ", " + std::to_string(mc.width) + ")");
  }
  for (const auto& s : data.scenes) {
    if (s.video.frames() != mc.cr || s.video.height() != mc.height || s.video.width() != mc.width) {
      throw ShapeError("scene " + shape_str(s.video.tensor().shape()) + " does not match model configuration");
    }
  }
}

}  // namespace

RunResult run_training(const scene::Dataset& data, nn::CompDae<float>& model, const TrainConfig& cfg,
                       const MaskStack& mask, const RunOptions& opts) {
  cfg.validate();
  const auto& mc = model.config();
  check_data(data, mc, cfg, mask);

  auto apc_stream = derive_stream(cfg.seed, "train/apc");
  auto noise_stream = derive_stream(cfg.seed, "train/noise");
  auto shuffle_stream = derive_stream(cfg.seed, "train/shuffle");
  auto augment_stream = derive_stream(cfg.seed, "train/augment");
  const unsigned augment_ops = mc.height == mc.width ? 8 : 4;

  Trainer trainer(model, cfg);
  std::map<std::string, std::string> meta = opts.meta;
  for (const auto& [k, v] : cfg.to_kv()) meta["train." + k] = v;

  RunResult result;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_stream.below(i)]);
    const double lambda = cfg.rate_active(epoch) ? cfg.lambda : 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<Example> batch;
      double apc_sum = 0.0;
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) {
        const double apc = cfg.apc_mode.sample(apc_stream);
        const std::uint64_t noise_seed = noise_stream.next_u64();
        const auto& sc = data.scenes[order[k]];
        if (cfg.augment) {
          batch.push_back(make_example(augmented(sc, static_cast<unsigned>(augment_stream.below(augment_ops))), mask,
                                       apc, cfg.sigma, noise_seed));
        } else {
          batch.push_back(make_example(sc, mask, apc, cfg.sigma, noise_seed));
        }
        apc_sum += apc;
      }
      const auto st = trainer.step(batch, lambda);
      StepLog line{epoch, ++step, st.task_loss, st.rate, st.objective, st.lambda_effective,
                   apc_sum / static_cast<double>(batch.size())};
      result.log.push_back(line);
      if (opts.on_step) opts.on_step(line);
    }
    if (opts.checkpoint_dir) {
      auto m = meta;
      m["epoch"] = std::to_string(epoch);
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03zu.cdp", epoch);
      const auto path = *opts.checkpoint_dir / name;
      nn::save_checkpoint(path, make_checkpoint(model, &trainer.adam(), m, opts.submask));
      result.checkpoints.push_back(path);
    }
  }
  meta["epoch"] = std::to_string(cfg.epochs);
  result.last = make_checkpoint(model, &trainer.adam(), meta, opts.submask);
  return result;
}

}  // namespace sci::train
