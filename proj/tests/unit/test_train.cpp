#include <doctest.h>

#include <cmath>
#include <limits>

#include "sci/error.hpp"
#include "sci/maskgen.hpp"
#include "sci/train.hpp"
#include "support.hpp"

using namespace sci;
using namespace sci::train;

namespace {

nn::ModelConfig tiny_model() {
  nn::ModelConfig c;
  c.channels = 4;
  c.encoder_depth = 2;
  c.decoder_depth = 0;
  c.heads = 2;
  c.cr = 4;
  c.height = 8;
  c.width = 8;
  return c;
}

scene::SceneConfig tiny_scenes(std::size_t count, std::uint64_t seed) {
  scene::SceneConfig s;
  s.t = 4;
  s.h = 8;
  s.w = 8;
  s.count = count;
  s.min_size = 2;
  s.max_size = 5;
  s.max_objects = 2;
  s.seed = seed;
  return s;
}

TrainConfig tiny_train(std::uint64_t seed) {
  TrainConfig t;
  t.cr = 4;
  t.seed = seed;
  t.batch_size = 2;
  t.epochs = 2;
  t.lr = 1e-3;
  return t;
}

MaskStack tiny_mask() { return maskgen::make_mask(4, 8, 0.5, 8, 8, 5); }

std::vector<Example> fixed_batch(const scene::Dataset& d, std::size_t n, double apc = 20.0) {
  std::vector<Example> out;
  const auto mask = tiny_mask();
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_example(d.scenes[i], mask, apc, 0.01, 100 + i));
  return out;
}

nn::ParamSetT<double> random_params(RandomStream& r, bool with_zeros) {
  nn::ParamSetT<double> p;
  const std::size_t sizes[] = {7, 12, 1};
  for (std::size_t k = 0; k < 3; ++k) {
    Tensor<double> t({sizes[k]});
    for (auto& v : t.vec()) {
      // Keep magnitudes away from the kink so central differences are valid.
      const double mag = r.uniform(0.05, 3.0);
      v = r.bernoulli(0.5) ? mag : -mag;
      if (with_zeros && r.bernoulli(0.25)) v = 0.0;
    }
    p.add("p" + std::to_string(k), nn::Partition::kEncoder, std::move(t));
  }
  return p;
}

bool same_params(const nn::ParamSet& a, const nn::ParamSet& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i] == b[i])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("rate term examples") {
  nn::ParamSetT<double> zeros;
  zeros.add("a", nn::Partition::kEncoder, Tensor<double>({5}));
  CHECK(rate_term(zeros, 1e-8, 0.5) == doctest::Approx(1e-4).epsilon(1e-9));

  nn::ParamSetT<double> pm;
  pm.add("a", nn::Partition::kEncoder, Tensor<double>({2}, std::vector<double>{1.0, -1.0}));
  CHECK(rate_term(pm, 0.0, 0.5) == doctest::Approx(1.0));

  nn::ParamSetT<double> four;
  four.add("a", nn::Partition::kEncoder, Tensor<double>({1}, std::vector<double>{4.0}));
  CHECK(rate_term(four, 0.0, 0.5) == doctest::Approx(2.0));
  CHECK(rate_grad(four, 0.0, 0.5)[0][0] == doctest::Approx(0.25));
  CHECK(rate_grad(zeros, 1e-8, 0.5)[0][0] == 0.0);

  // N counts every tensor.
  nn::ParamSetT<float> split;
  split.add("a", nn::Partition::kEncoder, Tensor<float>({1}, std::vector<float>{4.f}));
  split.add("b", nn::Partition::kHead, Tensor<float>({3}));
  CHECK(rate_term(split, 0.0, 0.5) == doctest::Approx(0.5));
  CHECK(rate_grad(split, 0.0, 0.5)[0][0] == doctest::Approx(0.0625));
  CHECK(rate_term(split, 0.0, 1.0) == doctest::Approx(1.0));
  CHECK(rate_term(split, 0.0, 2.0) == doctest::Approx(4.0));
}

TEST_CASE("rate term argument and value checks") {
  nn::ParamSetT<double> p;
  p.add("a", nn::Partition::kEncoder, Tensor<double>({2}, std::vector<double>{1.0, 2.0}));
  CHECK_THROWS_AS(rate_term(p, -1e-3, 0.5), ConfigError);
  CHECK_THROWS_AS(rate_term(p, 1e-8, 0.0), ConfigError);
  CHECK_THROWS_AS(rate_term(p, 1e-8, 2.5), ConfigError);
  CHECK_THROWS_AS(rate_grad(p, 1e-8, -1.0), ConfigError);
  p[0][1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(rate_term(p, 1e-8, 0.5), NumericError);
  p[0][1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(rate_grad(p, 1e-8, 0.5), NumericError);
}

TEST_CASE("rate gradient matches central differences") {
  RandomStream r(1, "rate-fd");
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_params(r, true);
    const double nu = r.uniform(0.2, 2.0);
    const double eps = trial % 2 ? 1e-8 : 0.0;
    const auto g = rate_grad(p, eps, nu);
    for (std::size_t i = 0; i < p.size(); ++i) {
      for (std::size_t j = 0; j < p[i].size(); ++j) {
        const double keep = p[i][j];
        double numeric = 0.0;
        if (keep != 0.0) {
          p[i][j] = keep + h;
          const double up = rate_term(p, eps, nu);
          p[i][j] = keep - h;
          const double down = rate_term(p, eps, nu);
          p[i][j] = keep;
          numeric = (up - down) / (2 * h);
        }
        // At an exact zero the subgradient choice is 0, as is the symmetric difference.
        const double denom = std::max({std::abs(numeric), std::abs(g[i][j]), 1e-12});
        worst = std::max(worst, std::abs(numeric - g[i][j]) / denom);
        if (keep == 0.0) CHECK(g[i][j] == 0.0);
      }
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("half schedule covers the first ceil(E/2) epochs") {
  TrainConfig c;
  c.backslash_mode = BackslashMode::kHalf;
  for (std::size_t e : {1, 2, 7, 10}) {
    c.epochs = e;
    const std::size_t half = (e + 1) / 2;
    for (std::size_t k = 1; k <= e; ++k) CHECK(c.rate_active(k) == (k <= half));
  }
  c.backslash_mode = BackslashMode::kFull;
  for (std::size_t k = 1; k <= 10; ++k) CHECK(c.rate_active(k));
  c.backslash_mode = BackslashMode::kNone;
  for (std::size_t k = 1; k <= 10; ++k) CHECK_FALSE(c.rate_active(k));
}

TEST_CASE("mode and APC parsing") {
  for (auto m : {BackslashMode::kNone, BackslashMode::kFull, BackslashMode::kHalf}) {
    CHECK(backslash_from_string(to_string(m)) == m);
  }
  CHECK_THROWS_AS(backslash_from_string("quarter"), ConfigError);

  const auto f = ApcMode::parse("fixed(20)");
  CHECK_FALSE(f.is_uniform);
  CHECK(f.lo == 20.0);
  const auto u = ApcMode::parse("uniform(1,60)");
  CHECK(u.is_uniform);
  CHECK(u.lo == 1.0);
  CHECK(u.hi == 60.0);
  CHECK(ApcMode::parse(u.to_string()).hi == 60.0);
  CHECK(ApcMode::parse("12.5").lo == 12.5);
  for (const char* bad : {"uniform(5)", "fixed()", "gauss(1,2)", "", "uniform(1,2"}) {
    CHECK_THROWS_AS(ApcMode::parse(bad), ConfigError);
  }
}

TEST_CASE("train config from key = value text") {
  auto kv = KvConfig::parse("seed = 4\nepochs = 3\nbackslash_mode = half\napc_mode = fixed(10)\nlambda = 0.01\n");
  const auto c = TrainConfig::from_kv(kv);
  CHECK(c.seed == 4);
  CHECK(c.epochs == 3);
  CHECK(c.backslash_mode == BackslashMode::kHalf);
  CHECK(c.apc_mode.lo == 10.0);
  CHECK(c.lambda == 0.01);
  CHECK(c.lr == 1e-4);
  CHECK(c.sigma == 0.01);
  CHECK(c.cr == 8);
  CHECK(c.nu == 0.5);

  auto missing = KvConfig::parse("epochs = 3\n");
  CHECK_THROWS_AS(TrainConfig::from_kv(missing), ConfigError);
  auto bad_nu = KvConfig::parse("seed = 1\nnu = 3\n");
  CHECK_THROWS_AS(TrainConfig::from_kv(bad_nu), ConfigError);
  auto neg_lambda = KvConfig::parse("seed = 1\nlambda = -1\n");
  CHECK_THROWS_AS(TrainConfig::from_kv(neg_lambda), ConfigError);
}

TEST_CASE("J equals task loss plus weighted rate") {
  const auto data = scene::gen_dataset(tiny_scenes(4, 2));
  const auto batch = fixed_batch(data, 2);
  RandomStream init(3, "init");
  nn::CompDae<float> model(tiny_model(), init);
  auto cfg = tiny_train(3);
  Trainer tr(model, cfg);
  for (double lam : {0.0, 1e-3, 0.5}) {
    const auto before = rate_term(model.params(), cfg.eps_rate, cfg.nu);
    const auto s = tr.step(batch, lam);
    CHECK(s.rate == before);
    CHECK(s.lambda_effective == lam);
    CHECK(s.objective == s.task_loss + lam * s.rate);
  }
}

TEST_CASE("lambda zero is plain Adam") {
  const auto data = scene::gen_dataset(tiny_scenes(4, 4));
  const auto batch = fixed_batch(data, 3);
  RandomStream ia(5, "init"), ib(5, "init");
  nn::CompDae<float> a(tiny_model(), ia), b(tiny_model(), ib);
  auto cfg = tiny_train(5);
  cfg.lambda = 0.0;
  Trainer tr(a, cfg);
  auto state = nn::AdamState<float>::zeros_for(b.params());
  for (int s = 0; s < 5; ++s) {
    const auto st = tr.step(batch, 0.0);
    CHECK(st.objective == st.task_loss);

    const auto scale = loss_scale(b.config().head, batch);
    b.zero_grad();
    double loss = 0;
    for (const auto& ex : batch) {
      const auto out = b.forward(ex.input);
      const auto lg = sample_loss(b.config().head, out, ex.target, scale);
      loss += lg.value;
      b.backward(lg.grad);
    }
    nn::adam_update(b.params(), b.grads(), state, cfg.adam(), b.trainable_mask());
    CHECK(loss == st.task_loss);
    CHECK(same_params(a.params(), b.params()));
  }
}

TEST_CASE("fully frozen model does not move") {
  const auto data = scene::gen_dataset(tiny_scenes(2, 6));
  const auto batch = fixed_batch(data, 2);
  RandomStream init(7, "init");
  nn::CompDae<float> model(tiny_model(), init);
  model.freeze({nn::Partition::kEncoder, nn::Partition::kDecoder, nn::Partition::kHead});
  const auto before = model.params();
  Trainer tr(model, tiny_train(7));
  const auto s1 = tr.step(batch, 0.1);
  const auto s2 = tr.step(batch, 0.1);
  CHECK(s1.task_loss > 0.0);
  CHECK(s1.task_loss == s2.task_loss);
  CHECK(same_params(before, model.params()));
}

TEST_CASE("overfits one fixed batch") {
  const auto data = scene::gen_dataset(tiny_scenes(2, 8));
  const auto batch = fixed_batch(data, 2);
  RandomStream init(9, "init");
  nn::CompDae<float> model(tiny_model(), init);
  auto cfg = tiny_train(9);
  cfg.lr = 1e-2;
  Trainer tr(model, cfg);
  const double first = tr.step(batch, 0.0).task_loss;
  double last = first;
  for (int s = 1; s < 50; ++s) last = tr.step(batch, 0.0).task_loss;
  CHECK(last <= 0.5 * first);
}

TEST_CASE("non-finite activations name the batch seeds") {
  const auto data = scene::gen_dataset(tiny_scenes(2, 10));
  const auto batch = fixed_batch(data, 2);
  RandomStream init(11, "init");
  nn::CompDae<float> model(tiny_model(), init);
  model.params().at("tokengen.bias")[0] = std::numeric_limits<float>::quiet_NaN();
  Trainer tr(model, tiny_train(11));
  try {
    tr.step(batch, 0.0);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("100") != std::string::npos);
    CHECK(msg.find("101") != std::string::npos);
  }
}

TEST_CASE("batch loss scales") {
  const auto data = scene::gen_dataset(tiny_scenes(3, 12));
  const auto batch = fixed_batch(data, 3);
  const auto rs = loss_scale(nn::HeadKind::kReconstruction, batch);
  CHECK(rs.batch == 3);

  // Edge weight over the whole batch: negatives / positives.
  std::size_t pos = 0, total = 0;
  for (const auto& ex : batch) {
    for (auto v : ex.target.edges.data()) pos += v;
    total += ex.target.edges.size();
  }
  const auto es = loss_scale(nn::HeadKind::kEdge, batch);
  REQUIRE(pos > 0);
  CHECK(es.pos_weight == doctest::Approx(static_cast<double>(total - pos) / static_cast<double>(pos)));

  std::size_t valid = 0;
  for (const auto& ex : batch) {
    for (auto v : ex.target.valid.data()) valid += v;
  }
  CHECK(loss_scale(nn::HeadKind::kDepth, batch).valid == valid);

  auto empty = batch;
  for (auto& ex : empty) ex.target.valid.fill(0);
  CHECK_THROWS_AS(loss_scale(nn::HeadKind::kDepth, empty), DataError);
}

TEST_CASE("run_training rejects bad inputs") {
  RandomStream init(13, "init");
  nn::CompDae<float> model(tiny_model(), init);
  const auto mask = tiny_mask();
  scene::Dataset empty;
  CHECK_THROWS_AS(run_training(empty, model, tiny_train(13), mask), ConfigError);

  const auto data = scene::gen_dataset(tiny_scenes(2, 13));
  auto cfg = tiny_train(13);
  cfg.cr = 8;
  CHECK_THROWS_AS(run_training(data, model, cfg, mask), ConfigError);

  auto wide = tiny_scenes(2, 13);
  wide.w = 10;
  CHECK_THROWS_AS(run_training(scene::gen_dataset(wide), model, tiny_train(13), mask), ShapeError);
  CHECK_THROWS_AS(run_training(data, model, tiny_train(13), maskgen::make_mask(4, 8, 0.5, 8, 16, 1)), ShapeError);
}

TEST_CASE("half mode logs lambda only in the early epochs") {
  const auto data = scene::gen_dataset(tiny_scenes(4, 14));
  RandomStream init(15, "init");
  nn::CompDae<float> model(tiny_model(), init);
  auto cfg = tiny_train(15);
  cfg.epochs = 10;
  cfg.backslash_mode = BackslashMode::kHalf;
  cfg.batch_size = 4;
  const auto res = run_training(data, model, cfg, tiny_mask());
  REQUIRE(res.log.size() == 10);
  for (const auto& l : res.log) {
    if (l.epoch <= 5) {
      CHECK(l.lambda_effective == cfg.lambda);
    } else {
      CHECK(l.lambda_effective == 0.0);
    }
    CHECK(l.objective == l.task_loss + l.lambda_effective * l.rate);
  }
}

TEST_CASE("uniform APC draws average to the midpoint") {
  const auto data = scene::gen_dataset(tiny_scenes(100, 16));
  RandomStream init(17, "init");
  nn::ModelConfig mc = tiny_model();
  mc.channels = 2;
  mc.heads = 1;
  mc.encoder_depth = 1;
  nn::CompDae<float> model(mc, init);
  auto cfg = tiny_train(17);
  cfg.batch_size = 1;
  cfg.epochs = 10;
  const auto res = run_training(data, model, cfg, tiny_mask());
  REQUIRE(res.log.size() == 1000);
  double mean = 0;
  for (const auto& l : res.log) {
    CHECK(l.apc >= 1.0);
    CHECK(l.apc <= 60.0);
    mean += l.apc;
  }
  mean /= 1000.0;
  CHECK(std::abs(mean - 30.5) <= 0.05 * 30.5);
}

TEST_CASE("fixed APC is logged verbatim") {
  const auto data = scene::gen_dataset(tiny_scenes(3, 18));
  RandomStream init(19, "init");
  nn::CompDae<float> model(tiny_model(), init);
  auto cfg = tiny_train(19);
  cfg.apc_mode = ApcMode::fixed(7.5);
  for (const auto& l : run_training(data, model, cfg, tiny_mask()).log) CHECK(l.apc == 7.5);
}

TEST_CASE("equal seeds give identical logs") {
  const auto data = scene::gen_dataset(tiny_scenes(6, 20));
  auto run = [&](std::uint64_t seed) {
    RandomStream init(21, "init");
    nn::CompDae<float> model(tiny_model(), init);
    auto cfg = tiny_train(seed);
    cfg.epochs = 3;
    cfg.augment = true;
    cfg.backslash_mode = BackslashMode::kFull;
    std::vector<std::string> lines;
    for (const auto& l : run_training(data, model, cfg, tiny_mask()).log) lines.push_back(l.to_json());
    return std::make_pair(lines, nn::param_digest(model.params()));
  };
  const auto a = run(22), b = run(22), c = run(23);
  REQUIRE(a.first.size() >= 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(a.first[i] == b.first[i]);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first != c.first);
}

TEST_CASE("log lines carry the documented fields") {
  StepLog l;
  l.epoch = 2;
  l.step = 7;
  l.task_loss = 0.5;
  l.rate = 0.25;
  l.objective = 0.75;
  l.lambda_effective = 1.0;
  l.apc = 30;
  CHECK(l.to_json() ==
        R"({"epoch":2,"step":7,"task_loss":0.5,"rate":0.25,"J":0.75,"lambda_effective":1.0,"apc":30.0})");
}

TEST_CASE("checkpoints are written per epoch") {
  const auto data = scene::gen_dataset(tiny_scenes(4, 24));
  RandomStream init(25, "init");
  nn::CompDae<float> model(tiny_model(), init);
  auto cfg = tiny_train(25);
  cfg.epochs = 3;
  testing::TempDir dir("train");
  RunOptions opts;
  opts.checkpoint_dir = dir.path();
  opts.meta["origin"] = "unit";
  RandomStream ms(26, "mask");
  opts.submask = maskgen::gen_submask(4, 8, 0.5, ms);
  const auto mask = maskgen::tile_mask(*opts.submask, 8, 8);
  std::size_t steps = 0;
  opts.on_step = [&](const StepLog&) { ++steps; };
  const auto res = run_training(data, model, cfg, mask, opts);
  CHECK(steps == res.log.size());
  REQUIRE(res.checkpoints.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    const auto ck = nn::load_checkpoint(res.checkpoints[e]);
    CHECK(ck.meta.at("epoch") == std::to_string(e + 1));
    CHECK(ck.meta.at("origin") == "unit");
    CHECK(ck.adam.has_value());
    CHECK(ck.submask.has_value());
  }
  CHECK(res.checkpoints[2].filename() == "epoch_003.cdp");
  CHECK(nn::param_digest(nn::load_checkpoint(res.checkpoints[2]).params) == nn::param_digest(model.params()));
  CHECK(nn::param_digest(res.last.params) == nn::param_digest(model.params()));
}

TEST_CASE("rate term shrinks under full BackSlash") {
  const auto data = scene::gen_dataset(tiny_scenes(4, 27));
  auto run = [&](BackslashMode mode) {
    RandomStream init(28, "init");
    nn::CompDae<float> model(tiny_model(), init);
    auto cfg = tiny_train(28);
    cfg.epochs = 5;
    cfg.lambda = 1.0;
    cfg.backslash_mode = mode;
    run_training(data, model, cfg, tiny_mask());
    return rate_term(model.params(), cfg.eps_rate, cfg.nu);
  };
  CHECK(run(BackslashMode::kFull) < run(BackslashMode::kNone));
}
