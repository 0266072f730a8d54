#include <doctest.h>

#include <cmath>

#include "sci/error.hpp"
#include "sci/nnet/checkpoint.hpp"
#include "sci/nnet/gradcheck.hpp"
#include "sci/nnet/model.hpp"
#include "sci/nnet/optim.hpp"
#include "support.hpp"

using namespace sci;
using namespace sci::nn;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.channels = 4;
  c.encoder_depth = 2;
  c.decoder_depth = 0;
  c.heads = 2;
  c.cr = 3;
  c.height = 5;
  c.width = 6;
  return c;
}

Tensor<float> random_input(const ModelConfig& c, RandomStream& r, std::size_t t = 0) {
  return testing::random_real({3, t ? t : c.cr, c.height, c.width}, r);
}

// Independent per-layer tally.
std::size_t tally(const ModelConfig& c) {
  const std::size_t ch = c.channels, hid = c.mlp_ratio * c.channels;
  const std::size_t tokengen = ch * 3 * 27 + ch;
  const std::size_t norms = 3 * 2 * ch;
  const std::size_t conv = ch * ch * 9 + ch;
  const std::size_t attn = 4 * (ch * ch + ch);
  const std::size_t mlp = (hid * ch + hid) + (ch * hid + ch);
  const std::size_t head = ch + 1;
  return tokengen + (c.encoder_depth + c.decoder_depth) * (norms + conv + attn + mlp) + head;
}

// Gradient of 0.5 * sum((out - target)^2) for a fresh forward.
template <class Real>
Real mse_backward(CompDae<Real>& m, const Tensor<Real>& x, const Tensor<Real>& target) {
  const auto out = m.forward(x);
  Tensor<Real> g(out.shape());
  Real loss = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    g[i] = out[i] - target[i];
    loss += Real(0.5) * g[i] * g[i];
  }
  m.backward(g);
  return loss;
}

}  // namespace

TEST_CASE("default configuration output shape") {
  ModelConfig c;
  RandomStream init(1, "init");
  CompDae<float> m(c, init);
  RandomStream r(2, "x");
  const auto out = m.forward(random_input(c, r));
  CHECK(out.shape() == Shape{8, 32, 32});
}

TEST_CASE("equal seeds give identical parameters") {
  const auto c = small_config();
  RandomStream a(9, "init"), b(9, "init"), other(10, "init");
  CompDae<float> ma(c, a), mb(c, b), mc(c, other);
  CHECK(param_digest(ma.params()) == param_digest(mb.params()));
  CHECK(param_digest(ma.params()) != param_digest(mc.params()));
  for (std::size_t i = 0; i < ma.params().size(); ++i) CHECK(ma.params()[i] == mb.params()[i]);
}

TEST_CASE("parameter count matches a per-layer tally") {
  for (std::size_t ch : {2, 4, 16}) {
    for (std::size_t m : {1, 4}) {
      for (std::size_t n : {0, 1}) {
        ModelConfig c;
        c.channels = ch;
        c.encoder_depth = m;
        c.decoder_depth = n;
        c.heads = ch >= 4 ? 2 : 1;
        c.height = c.width = 4;
        RandomStream init(3, "init");
        CompDae<float> model(c, init);
        CHECK(parameter_count(c) == tally(c));
        CHECK(model.params().total_count() == tally(c));
      }
    }
  }
  ModelConfig def;
  CHECK(parameter_count(def) == tally(def));
}

TEST_CASE("weights are Xavier bounded, biases zero, norms one") {
  const auto c = small_config();
  RandomStream init(4, "init");
  CompDae<float> m(c, init);
  const auto& tg = m.params().at("tokengen.weight");
  const double bound = xavier_bound(3 * 27, c.channels * 27);
  CHECK(bound == doctest::Approx(std::sqrt(6.0 / (81.0 + 27.0 * 4))));
  for (float v : tg.data()) CHECK(std::abs(v) <= bound);
  for (const auto& e : m.params().entries()) {
    const auto& n = e.name;
    if (n.size() >= 4 && n.substr(n.size() - 4) == "bias") {
      for (float v : e.value.data()) CHECK(v == 0.f);
    }
    if (n.find("gamma") != std::string::npos) {
      for (float v : e.value.data()) CHECK(v == 1.f);
    }
  }
}

TEST_CASE("fresh blocks are the identity") {
  const auto c = small_config();
  RandomStream init(5, "init");
  CompDae<double> m(c, init);
  RandomStream r(6, "x");
  const Geometry g{3, 5, 6};
  Tensor<double> x({c.channels, g.positions()});
  for (auto& v : x.vec()) v = r.normal();
  for (std::size_t i = 0; i < m.block_count(); ++i) CHECK(m.run_block(i, x, g) == x);
}

TEST_CASE("zero input gives finite reconstruction in (0, 1)") {
  const auto c = small_config();
  RandomStream init(7, "init");
  CompDae<float> m(c, init);
  const auto out = m.forward(Tensor<float>({3, c.cr, c.height, c.width}));
  for (float v : out.data()) {
    CHECK(std::isfinite(v));
    CHECK(v > 0.f);
    CHECK(v < 1.f);
  }
}

TEST_CASE("depth head stays within range") {
  auto c = small_config();
  c.head = HeadKind::kDepth;
  RandomStream init(8, "init"), r(9, "x");
  CompDae<float> m(c, init);
  // Push the logits far in both directions.
  m.params().at("head.weight").fill(50.f);
  for (int sign : {1, -1}) {
    m.params().at("head.bias").fill(static_cast<float>(sign) * 100.f);
    const auto out = m.forward(random_input(c, r));
    for (float v : out.data()) {
      CHECK(v >= kDepthMin);
      CHECK(v <= kDepthMax);
    }
  }
}

TEST_CASE("attention weights are distributions") {
  auto c = small_config();
  RandomStream init(10, "init"), r(11, "x");
  CompDae<float> m(c, init);
  // Make q/k informative so the weights are not uniform.
  for (const char* n : {"encoder.0.attn.q.weight", "encoder.0.attn.k.weight"}) {
    for (auto& v : m.params().at(n).vec()) v *= 4.f;
  }
  m.forward(random_input(c, r));
  const auto& w = m.block(0).attention().weights();
  REQUIRE(w.shape() == Shape{c.heads, c.cr, c.cr, c.height * c.width});
  const std::size_t t = c.cr, hw = c.height * c.width;
  for (std::size_t h = 0; h < c.heads; ++h) {
    for (std::size_t q = 0; q < t; ++q) {
      for (std::size_t p = 0; p < hw; ++p) {
        double s = 0;
        for (std::size_t k = 0; k < t; ++k) {
          const float v = w[((h * t + q) * t + k) * hw + p];
          CHECK(v >= 0.f);
          s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("single frame attention ignores queries and keys") {
  const auto c = small_config();
  RandomStream init(12, "init"), r(13, "x");
  CompDae<float> m(c, init);
  // Non-zero output projections so attention contributes.
  RandomStream pert(14, "p");
  for (std::size_t b = 0; b < c.encoder_depth; ++b) {
    for (auto& v : m.params().at("encoder." + std::to_string(b) + ".attn.out.weight").vec()) {
      v = static_cast<float>(pert.uniform(-0.5, 0.5));
    }
  }
  const auto x = random_input(c, r, 1);
  const auto before = m.forward(x);
  for (float v : m.block(0).attention().weights().data()) CHECK(v == 1.f);
  for (const char* n : {"encoder.0.attn.q.weight", "encoder.1.attn.k.weight", "encoder.1.attn.q.bias"}) {
    for (auto& v : m.params().at(n).vec()) v += static_cast<float>(pert.uniform(-1, 1));
  }
  CHECK(m.forward(x) == before);
}

TEST_CASE("forward is repeatable and samples are independent") {
  const auto c = small_config();
  RandomStream init(15, "init"), r(16, "x");
  CompDae<double> m(c, init);
  RandomStream pert(17, "p");
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    for (auto& v : m.params()[i].vec()) v += pert.uniform(-0.2, 0.2);
  }
  const auto a = random_input(c, r).cast<double>(), b = random_input(c, r).cast<double>();
  const auto ta = random_input(c, r).cast<double>(), tb = random_input(c, r).cast<double>();
  Tensor<double> target_a({c.cr, c.height, c.width}), target_b({c.cr, c.height, c.width});
  for (std::size_t i = 0; i < target_a.size(); ++i) {
    target_a[i] = ta[i];
    target_b[i] = tb[i];
  }

  const auto out_a = m.forward(a);
  m.forward(b);
  CHECK(m.forward(a) == out_a);

  // Gradients accumulated over a two-sample batch equal the per-sample sum.
  m.zero_grad();
  mse_backward(m, a, target_a);
  const auto ga = m.grads();
  m.zero_grad();
  mse_backward(m, b, target_b);
  const auto gb = m.grads();
  m.zero_grad();
  mse_backward(m, a, target_a);
  mse_backward(m, b, target_b);
  for (std::size_t i = 0; i < ga.size(); ++i) {
    for (std::size_t j = 0; j < ga[i].size(); ++j) {
      CHECK(m.grads()[i][j] == doctest::Approx(ga[i][j] + gb[i][j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero loss gradient gives zero parameter gradients") {
  const auto c = small_config();
  RandomStream init(18, "init"), r(19, "x");
  CompDae<float> m(c, init);
  const auto out = m.forward(random_input(c, r));
  m.zero_grad();
  m.backward(Tensor<float>(out.shape()));
  for (const auto& e : m.grads().entries()) {
    for (float v : e.value.data()) CHECK(v == 0.f);
  }
}

TEST_CASE("backward before forward is a usage error") {
  const auto c = small_config();
  RandomStream init(20, "init");
  CompDae<float> m(c, init);
  CHECK_THROWS_AS(m.backward(Tensor<float>({c.cr, c.height, c.width})), UsageError);
}

TEST_CASE("forward rejects mismatched spatial size") {
  const auto c = small_config();
  RandomStream init(21, "init");
  CompDae<float> m(c, init);
  CHECK_THROWS_AS(m.forward(Tensor<float>({3, c.cr, c.height + 1, c.width})), ShapeError);
  CHECK_THROWS_AS(m.forward(Tensor<float>({2, c.cr, c.height, c.width})), ShapeError);
}

TEST_CASE("invalid configurations are rejected") {
  for (int field = 0; field < 6; ++field) {
    auto c = small_config();
    if (field == 0) c.channels = 0;
    if (field == 1) c.height = 0;
    if (field == 2) c.heads = 0;
    if (field == 3) c.cr = 0;
    if (field == 4) c.heads = 3;  // does not divide the channels
    if (field == 5) c.mlp_ratio = 0;
    RandomStream init(22, "init");
    CHECK_THROWS_AS(CompDae<float>(c, init), ConfigError);
  }
}

TEST_CASE("1x1 channel map gradient by hand on a 2x2 input") {
  // out(o, p) = sum_i W(o, i) x(i, p) + b(o); loss = sum_o,p dout(o, p) * out(o, p).
  const std::size_t in = 2, out_ch = 3, pos = 4;
  ParamSetT<double> params;
  const double wv[] = {0.5, -1.0, 2.0, 0.25, -0.75, 1.5};
  params.add("w", Partition::kEncoder, Tensor<double>({out_ch, in}, std::vector<double>(wv, wv + 6)));
  params.add("b", Partition::kEncoder, Tensor<double>({out_ch}, std::vector<double>{0.1, 0.2, 0.3}));
  auto grads = params.zeros_like();
  std::vector<char> trainable(2, 1);
  ParamRefs<double> refs{&params, &grads, &trainable};
  Linear<double> lin(0, 1, in, out_ch);

  const Tensor<double> x({in, pos}, std::vector<double>{1, 2, 3, 4, -1, 0, 0.5, 2});
  const Tensor<double> dout({out_ch, pos}, std::vector<double>{1, 0, -1, 2, 0.5, 0.5, 0.5, 0.5, -2, 1, 0, 3});
  const auto y = lin.forward(refs, x);
  for (std::size_t o = 0; o < out_ch; ++o) {
    for (std::size_t p = 0; p < pos; ++p) {
      double v = params[1][o];
      for (std::size_t i = 0; i < in; ++i) v += params[0][o * in + i] * x[i * pos + p];
      CHECK(y[o * pos + p] == doctest::Approx(v));
    }
  }
  const auto dx = lin.backward(refs, dout, true);
  for (std::size_t o = 0; o < out_ch; ++o) {
    double db = 0;
    for (std::size_t p = 0; p < pos; ++p) db += dout[o * pos + p];
    CHECK(grads[1][o] == doctest::Approx(db));
    for (std::size_t i = 0; i < in; ++i) {
      double dw = 0;
      for (std::size_t p = 0; p < pos; ++p) dw += dout[o * pos + p] * x[i * pos + p];
      CHECK(grads[0][o * in + i] == doctest::Approx(dw));
    }
  }
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t p = 0; p < pos; ++p) {
      double v = 0;
      for (std::size_t o = 0; o < out_ch; ++o) v += params[0][o * in + i] * dout[o * pos + p];
      CHECK(dx[i * pos + p] == doctest::Approx(v));
    }
  }
  // Worked value: dW(0,0) = 1*1 + 0*2 + (-1)*3 + 2*4 = 6.
  CHECK(grads[0][0] == doctest::Approx(6.0));
}

TEST_CASE("full model gradient matches finite differences") {
  GradcheckOptions opts;
  CHECK(opts.model.channels == 4);
  CHECK(opts.model.encoder_depth == 1);
  CHECK(opts.model.decoder_depth == 0);
  CHECK(opts.model.cr == 2);
  CHECK(opts.model.height == 4);
  CHECK(opts.model.width == 4);
  const auto res = gradcheck(opts);
  CHECK(res.checked == parameter_count(opts.model));
  CHECK(res.max_rel_error < 1e-4);

  for (auto head : {HeadKind::kEdge, HeadKind::kDepth}) {
    GradcheckOptions o;
    o.model.head = head;
    o.model.decoder_depth = 1;
    o.model.encoder_depth = 2;
    o.seed = 3;
    CHECK(gradcheck(o).max_rel_error < 1e-4);
  }
}

TEST_CASE("frozen encoder survives training steps") {
  auto c = small_config();
  c.decoder_depth = 1;
  RandomStream init(23, "init"), r(24, "x");
  CompDae<float> m(c, init);
  m.freeze({Partition::kEncoder});
  const auto enc = param_digest(m.params(), Partition::kEncoder);
  const auto dec = param_digest(m.params(), Partition::kDecoder);
  const auto head = param_digest(m.params(), Partition::kHead);
  auto state = AdamState<float>::zeros_for(m.params());
  AdamConfig ac;
  ac.lr = 1e-2;
  for (int s = 0; s < 10; ++s) {
    const auto x = random_input(c, r);
    const auto target = testing::random_real({c.cr, c.height, c.width}, r);
    m.zero_grad();
    mse_backward(m, x, target);
    adam_update(m.params(), m.grads(), state, ac, m.trainable_mask());
  }
  CHECK(param_digest(m.params(), Partition::kEncoder) == enc);
  CHECK(param_digest(m.params(), Partition::kDecoder) != dec);
  CHECK(param_digest(m.params(), Partition::kHead) != head);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    if (m.params().entry(i).partition != Partition::kEncoder) continue;
    for (float v : m.grads()[i].data()) CHECK(v == 0.f);
    for (float v : state.m[i].data()) CHECK(v == 0.f);
  }
}

TEST_CASE("freezing everything leaves parameters and loss unchanged") {
  const auto c = small_config();
  RandomStream init(25, "init"), r(26, "x");
  CompDae<float> m(c, init);
  m.freeze({Partition::kEncoder, Partition::kDecoder, Partition::kHead});
  const auto x = random_input(c, r);
  const auto target = testing::random_real({c.cr, c.height, c.width}, r);
  const auto before = m.params();
  auto state = AdamState<float>::zeros_for(m.params());
  m.zero_grad();
  const float loss0 = mse_backward(m, x, target);
  adam_update(m.params(), m.grads(), state, AdamConfig{}, m.trainable_mask());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(m.params()[i] == before[i]);
  m.zero_grad();
  CHECK(mse_backward(m, x, target) == loss0);

  m.freeze({});
  for (char t : m.trainable_mask()) CHECK(t == 1);
}

TEST_CASE("unknown partition tag is a config error") {
  CHECK(parse_partitions({"encoder", "head"}) == std::set<Partition>{Partition::kEncoder, Partition::kHead});
  CHECK_THROWS_AS(parse_partitions({"encoder", "bottleneck"}), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  auto c = small_config();
  c.head = HeadKind::kEdge;
  RandomStream init(27, "init"), r(28, "x");
  CompDae<float> m(c, init);
  Checkpoint ck;
  ck.params = m.params();
  ck.meta = c.to_kv();
  ck.meta["note"] = "round trip";
  ck.adam = AdamState<float>::zeros_for(m.params());
  ck.adam->step = 7;
  ck.adam->m[0].fill(0.25f);
  SubMaskStack sub;
  sub.data = testing::random_binary({3, 8, 8}, r);
  ck.submask = sub;

  testing::TempDir dir("ckpt");
  save_checkpoint(dir / "a.cdp", ck);
  const auto back = load_checkpoint(dir / "a.cdp");
  CHECK(back.meta == ck.meta);
  CHECK(back.params.same_layout(ck.params));
  CHECK(param_digest(back.params) == param_digest(ck.params));
  for (std::size_t i = 0; i < ck.params.size(); ++i) CHECK(back.params.entry(i).partition == ck.params.entry(i).partition);
  REQUIRE(back.adam.has_value());
  CHECK(back.adam->step == 7);
  CHECK(back.adam->m[0] == ck.adam->m[0]);
  REQUIRE(back.submask.has_value());
  CHECK(back.submask->data == sub.data);
  CHECK(checkpoint_digest(back) == checkpoint_digest(ck));
  CHECK(encode_checkpoint(back) == encode_checkpoint(ck));

  const auto mc = back.model_config();
  CHECK(mc.channels == c.channels);
  CHECK(mc.head == HeadKind::kEdge);
  CompDae<float> again(mc, back.params);
  const auto x = random_input(c, r);
  CHECK(again.forward(x) == m.forward(x));
}

TEST_CASE("malformed checkpoints are format errors") {
  const auto c = small_config();
  RandomStream init(29, "init");
  CompDae<float> m(c, init);
  Checkpoint ck;
  ck.params = m.params();
  ck.meta = c.to_kv();
  auto bytes = encode_checkpoint(ck);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(decode_checkpoint(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + cut)), FormatError);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);

  auto other = c;
  other.channels = 8;
  CHECK_THROWS_AS(CompDae<float>(other, ck.params), FormatError);
}

TEST_CASE("float and double models agree") {
  auto c = small_config();
  c.decoder_depth = 1;
  RandomStream init(30, "init"), r(31, "x");
  CompDae<float> mf(c, init);
  RandomStream pert(32, "p");
  for (std::size_t i = 0; i < mf.params().size(); ++i) {
    for (auto& v : mf.params()[i].vec()) v += static_cast<float>(pert.uniform(-0.1, 0.1));
  }
  CompDae<double> md(c, mf.params().cast<double>());
  const auto x = random_input(c, r);
  const auto of = mf.forward(x);
  const auto od = md.forward(x.cast<double>());
  for (std::size_t i = 0; i < of.size(); ++i) CHECK(of[i] == doctest::Approx(od[i]).epsilon(1e-4));
}

TEST_CASE("head reset redraws only the head") {
  const auto c = small_config();
  RandomStream init(33, "init");
  CompDae<float> m(c, init);
  const auto enc = param_digest(m.params(), Partition::kEncoder);
  RandomStream h(34, "head");
  m.reset_head(HeadKind::kDepth, h);
  CHECK(m.config().head == HeadKind::kDepth);
  CHECK(param_digest(m.params(), Partition::kEncoder) == enc);
}
