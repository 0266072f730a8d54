#include "sci/nnet/model.hpp"

#include <cmath>
#include <iostream>

namespace sci::nn {

std::string to_string(HeadKind h) {
  switch (h) {
    case HeadKind::kReconstruction:
      return "reconstruction";
    case HeadKind::kEdge:
      return "edge";
    case HeadKind::kDepth:
      return "depth";
  }
  return "?";
}

HeadKind head_from_string(const std::string& s) {
  if (s == "reconstruction" || s == "recon") return HeadKind::kReconstruction;
  if (s == "edge") return HeadKind::kEdge;
  if (s == "depth") return HeadKind::kDepth;
  throw ConfigError("unknown head kind '" + s + "' (expected reconstruction, edge or depth)");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model ") + name + " must be positive");
  };
  positive(channels, "channels");
  positive(heads, "heads");
  positive(mlp_ratio, "mlp_ratio");
  positive(cr, "cr");
  positive(height, "height");
  positive(width, "width");
  if (channels % heads != 0) {
    throw ConfigError("channels (" + std::to_string(channels) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  if (encoder_depth > 0 && 2 * decoder_depth >= encoder_depth) {
    std::cerr << "warning: decoder depth " << decoder_depth << " is not below half the encoder depth "
              << encoder_depth << "\n";
  }
}

ModelConfig ModelConfig::from_kv(KvConfig& kv) {
  ModelConfig c;
  auto size = [&](const char* key, std::size_t fallback) {
    const auto v = kv.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(std::string("model ") + key + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.channels = size("channels", c.channels);
  c.encoder_depth = size("encoder_depth", c.encoder_depth);
  c.decoder_depth = size("decoder_depth", c.decoder_depth);
  c.heads = size("heads", c.heads);
  c.mlp_ratio = size("mlp_ratio", c.mlp_ratio);
  c.cr = size("cr", c.cr);
  c.height = size("height", c.height);
  c.width = size("width", c.width);
  c.head = head_from_string(kv.get_string("head", to_string(c.head)));
  return c;
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
  return {{"channels", std::to_string(channels)},       {"encoder_depth", std::to_string(encoder_depth)},
          {"decoder_depth", std::to_string(decoder_depth)}, {"heads", std::to_string(heads)},
          {"mlp_ratio", std::to_string(mlp_ratio)},     {"cr", std::to_string(cr)},
          {"height", std::to_string(height)},           {"width", std::to_string(width)},
          {"head", to_string(head)}};
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t c = cfg.channels, hidden = cfg.mlp_ratio * c;
  const std::size_t tokengen = c * 3 * 27 + c;
  const std::size_t norms = 3 * 2 * c;
  const std::size_t conv = c * c * 9 + c;
  const std::size_t attn = 4 * (c * c + c);
  const std::size_t mlp = hidden * c + hidden + c * hidden + c;
  const std::size_t head = c + 1;
  return tokengen + (cfg.encoder_depth + cfg.decoder_depth) * (norms + conv + attn + mlp) + head;
}

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

namespace {

enum class Init { kXavier, kZero, kOne };

template <class Real>
struct Declarer {
  ParamSetT<Real>& params;
  RandomStream* init;

  std::size_t operator()(const std::string& name, Partition part, Shape shape, Init kind, std::size_t fan_in = 0,
                         std::size_t fan_out = 0) {
    Tensor<Real> t(std::move(shape));
    if (init) {
      if (kind == Init::kXavier) {
        const double a = xavier_bound(fan_in, fan_out);
        for (auto& v : t.vec()) v = static_cast<Real>(init->uniform(-a, a));
      } else if (kind == Init::kOne) {
        t.fill(Real(1));
      }
    }
    return params.add(name, part, std::move(t));
  }
};

}  // namespace

template <class Real>
void CompDae<Real>::declare_parameters(RandomStream* init) {
  params_ = ParamSetT<Real>();
  Declarer<Real> add{params_, init};
  const std::size_t c = cfg_.channels, hidden = cfg_.mlp_ratio * c;
  add("tokengen.weight", Partition::kEncoder, {c, 3, 3, 9}, Init::kXavier, 3 * 27, c * 27);
  add("tokengen.bias", Partition::kEncoder, {c}, Init::kZero);
  const std::size_t total = cfg_.encoder_depth + cfg_.decoder_depth;
  for (std::size_t b = 0; b < total; ++b) {
    const bool enc = b < cfg_.encoder_depth;
    const Partition part = enc ? Partition::kEncoder : Partition::kDecoder;
    const std::string pre =
        (enc ? "encoder." + std::to_string(b) : "decoder." + std::to_string(b - cfg_.encoder_depth)) + ".";
    add(pre + "norm1.gamma", part, {c}, Init::kOne);
    add(pre + "norm1.beta", part, {c}, Init::kZero);
    add(pre + "conv.weight", part, {c, c, 3, 3}, Init::kZero);
    add(pre + "conv.bias", part, {c}, Init::kZero);
    add(pre + "norm2.gamma", part, {c}, Init::kOne);
    add(pre + "norm2.beta", part, {c}, Init::kZero);
    for (const char* proj : {"q", "k", "v"}) {
      add(pre + "attn." + proj + ".weight", part, {c, c}, Init::kXavier, c, c);
      add(pre + "attn." + proj + ".bias", part, {c}, Init::kZero);
    }
    add(pre + "attn.out.weight", part, {c, c}, Init::kZero);
    add(pre + "attn.out.bias", part, {c}, Init::kZero);
    add(pre + "norm3.gamma", part, {c}, Init::kOne);
    add(pre + "norm3.beta", part, {c}, Init::kZero);
    add(pre + "mlp.fc1.weight", part, {hidden, c}, Init::kXavier, c, hidden);
    add(pre + "mlp.fc1.bias", part, {hidden}, Init::kZero);
    add(pre + "mlp.fc2.weight", part, {c, hidden}, Init::kZero);
    add(pre + "mlp.fc2.bias", part, {c}, Init::kZero);
  }
  add("head.weight", Partition::kHead, {1, c}, Init::kXavier, c, 1);
  add("head.bias", Partition::kHead, {1}, Init::kZero);
}

template <class Real>
void CompDae<Real>::wire_layers() {
  const std::size_t c = cfg_.channels, hidden = cfg_.mlp_ratio * c;
  auto idx = [&](const std::string& n) { return *params_.find(n); };
  tokengen_ = Conv<Real>(idx("tokengen.weight"), idx("tokengen.bias"), 3, c, 3);
  blocks_.clear();
  const std::size_t total = cfg_.encoder_depth + cfg_.decoder_depth;
  for (std::size_t b = 0; b < total; ++b) {
    const bool enc = b < cfg_.encoder_depth;
    const std::string name = enc ? "encoder." + std::to_string(b) : "decoder." + std::to_string(b - cfg_.encoder_depth);
    const std::string pre = name + ".";
    typename Block<Real>::Indices ix{};
    ix.norm1_g = idx(pre + "norm1.gamma");
    ix.norm1_b = idx(pre + "norm1.beta");
    ix.conv_w = idx(pre + "conv.weight");
    ix.conv_b = idx(pre + "conv.bias");
    ix.norm2_g = idx(pre + "norm2.gamma");
    ix.norm2_b = idx(pre + "norm2.beta");
    ix.q_w = idx(pre + "attn.q.weight");
    ix.q_b = idx(pre + "attn.q.bias");
    ix.k_w = idx(pre + "attn.k.weight");
    ix.k_b = idx(pre + "attn.k.bias");
    ix.v_w = idx(pre + "attn.v.weight");
    ix.v_b = idx(pre + "attn.v.bias");
    ix.o_w = idx(pre + "attn.out.weight");
    ix.o_b = idx(pre + "attn.out.bias");
    ix.norm3_g = idx(pre + "norm3.gamma");
    ix.norm3_b = idx(pre + "norm3.beta");
    ix.fc1_w = idx(pre + "mlp.fc1.weight");
    ix.fc1_b = idx(pre + "mlp.fc1.bias");
    ix.fc2_w = idx(pre + "mlp.fc2.weight");
    ix.fc2_b = idx(pre + "mlp.fc2.bias");
    blocks_.emplace_back(name, ix, c, cfg_.heads, hidden);
  }
  head_w_ = idx("head.weight");
  head_params_ = {head_w_, idx("head.bias")};
  head_ = Linear<Real>(head_params_[0], head_params_[1], c, 1);
  grads_ = params_.zeros_like();
  trainable_.assign(params_.size(), 1);
  freeze(frozen_);
}

template <class Real>
CompDae<Real>::CompDae(const ModelConfig& cfg, RandomStream& init) : cfg_(cfg) {
  cfg_.validate();
  declare_parameters(&init);
  wire_layers();
  check_identity_start();
}

template <class Real>
CompDae<Real>::CompDae(const ModelConfig& cfg, ParamSetT<Real> params) : cfg_(cfg) {
  cfg_.validate();
  declare_parameters(nullptr);
  if (!params_.same_layout(params)) {
    throw FormatError("parameter layout does not match the model configuration");
  }
  params_ = std::move(params);
  wire_layers();
}

template <class Real>
void CompDae<Real>::check_identity_start() {
  RandomStream probe(0, "identity-probe");
  const Geometry g{2, 3, 3};
  Tensor<Real> x({cfg_.channels, g.positions()});
  for (auto& v : x.vec()) v = static_cast<Real>(probe.normal());
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto y = run_block(i, x, g);
    double num = 0, den = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      num += static_cast<double>((y[j] - x[j]) * (y[j] - x[j]));
      den += static_cast<double>(x[j] * x[j]);
    }
    if (std::sqrt(num / den) > 1e-6) {
      throw NumericError("freshly built block " + blocks_[i].name() + " is not near-identity");
    }
  }
}

template <class Real>
Tensor<Real> CompDae<Real>::run_block(std::size_t i, const Tensor<Real>& x, const Geometry& g) {
  has_forward_ = false;
  return blocks_.at(i).forward(refs(), x, g);
}

template <class Real>
void CompDae<Real>::freeze(const std::set<Partition>& tags) {
  frozen_ = tags;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    trainable_[i] = frozen_.count(params_.entry(i).partition) ? 0 : 1;
  }
}

template <class Real>
void CompDae<Real>::reset_head(HeadKind kind, RandomStream& init) {
  cfg_.head = kind;
  const double a = xavier_bound(cfg_.channels, 1);
  for (auto& v : params_[head_params_[0]].vec()) v = static_cast<Real>(init.uniform(-a, a));
  params_[head_params_[1]].fill(Real(0));
  has_forward_ = false;
}

template <class Real>
Tensor<Real> CompDae<Real>::forward(const Tensor<Real>& input) {
  if (input.ndim() != 4 || input.dim(0) != 3 || input.dim(2) != cfg_.height || input.dim(3) != cfg_.width) {
    throw ShapeError("network input must be (3,T," + std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) +
                     "), got " + shape_str(input.shape()));
  }
  geo_ = Geometry{input.dim(1), input.dim(2), input.dim(3)};
  const auto p = refs();
  Tensor<Real> h = tokengen_.forward(p, input.reshaped({3, geo_.positions()}), geo_);
  check_finite(h, "tokengen");
  for (auto& b : blocks_) h = b.forward(p, h, geo_);
  Tensor<Real> z = head_.forward(p, h);
  check_finite(z, "head");
  output_ = Tensor<Real>({geo_.t, geo_.h, geo_.w});
  const Real range = static_cast<Real>(kDepthMax - kDepthMin);
  for (std::size_t i = 0; i < z.size(); ++i) {
    switch (cfg_.head) {
      case HeadKind::kReconstruction:
        output_[i] = Real(1) / (Real(1) + std::exp(-z[i]));
        break;
      case HeadKind::kEdge:
        output_[i] = z[i];
        break;
      case HeadKind::kDepth:
        output_[i] = static_cast<Real>(kDepthMin) + range / (Real(1) + std::exp(-z[i]));
        break;
    }
  }
  has_forward_ = true;
  return output_;
}

template <class Real>
Tensor<float> CompDae<Real>::forward(const sensor::NetInput& input) {
  if constexpr (std::is_same_v<Real, float>) {
    return forward(input.channels);
  } else {
    return forward(input.channels.template cast<Real>()).template cast<float>();
  }
}

template <class Real>
void CompDae<Real>::zero_grad() {
  grads_.fill(Real(0));
}

template <class Real>
void CompDae<Real>::backward(const Tensor<Real>& grad_output) {
  if (!has_forward_) throw UsageError("backward called without a recorded forward pass");
  if (grad_output.shape() != output_.shape()) {
    throw ShapeError("output gradient shape " + shape_str(grad_output.shape()) + " does not match output " +
                     shape_str(output_.shape()));
  }
  const std::size_t P = geo_.positions();
  Tensor<Real> dz({1, P});
  const Real range = static_cast<Real>(kDepthMax - kDepthMin);
  for (std::size_t i = 0; i < P; ++i) {
    switch (cfg_.head) {
      case HeadKind::kReconstruction:
        dz[i] = grad_output[i] * output_[i] * (Real(1) - output_[i]);
        break;
      case HeadKind::kEdge:
        dz[i] = grad_output[i];
        break;
      case HeadKind::kDepth: {
        const Real s = (output_[i] - static_cast<Real>(kDepthMin)) / range;
        dz[i] = grad_output[i] * range * s * (Real(1) - s);
        break;
      }
    }
  }
  // Stage 0 is the token generator, 1..B the blocks, B+1 the head. Input
  // gradients are needed at stage s only if something before it trains.
  const std::size_t nb = blocks_.size();
  std::vector<char> stage_trains(nb + 2, 0);
  auto any_trainable = [&](const std::vector<std::size_t>& ids) {
    for (auto i : ids) {
      if (trainable_[i]) return true;
    }
    return false;
  };
  stage_trains[0] = trainable_[*params_.find("tokengen.weight")] || trainable_[*params_.find("tokengen.bias")];
  for (std::size_t b = 0; b < nb; ++b) stage_trains[b + 1] = any_trainable(blocks_[b].param_indices());
  stage_trains[nb + 1] = any_trainable(head_params_);
  std::vector<char> need(nb + 2, 0);
  for (std::size_t s = 1; s < nb + 2; ++s) need[s] = need[s - 1] || stage_trains[s - 1];

  const auto p = refs();
  Tensor<Real> d = head_.backward(p, dz, need[nb + 1]);
  if (!need[nb + 1]) return;
  for (std::size_t b = nb; b-- > 0;) {
    if (!stage_trains[b + 1] && !need[b + 1]) return;
    d = blocks_[b].backward(p, d, geo_, need[b + 1]);
    if (!need[b + 1]) return;
  }
  tokengen_.backward(p, d, geo_, false);
}

template class CompDae<float>;
template class CompDae<double>;

}  // namespace sci::nn
