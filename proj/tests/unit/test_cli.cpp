#include <doctest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sci/cli.hpp"
#include "sci/nnet/checkpoint.hpp"
#include "sci/tensor_io.hpp"
#include "support.hpp"

using namespace sci;
using Json = nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
  Json json() const { return Json::parse(out); }
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "sci");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p);
  f << s;
}

std::string p(const testing::TempDir& d, const std::string& name) { return (d / name).string(); }

}  // namespace

TEST_CASE("maskgen writes a tiled uint8 stack") {
  testing::TempDir d("cli_mask");
  const auto r = run({"maskgen", "--t", "8", "--size", "8", "--rho", "0.5", "--height", "32", "--width", "32",
                      "--seed", "1", "--out", p(d, "m.cdt")});
  REQUIRE(r.code == cli::kOk);
  const auto m = read_u8_tensor(d / "m.cdt");
  CHECK(m.shape() == Shape{8, 32, 32});
  for (auto v : m.data()) CHECK(v <= 1);
  // One JSON line.
  CHECK(r.out.find('\n') == r.out.size() - 1);
  const auto j = r.json();
  CHECK(j.at("command") == "maskgen");
  CHECK(j.at("seed") == 1);
  CHECK(j.at("out") == p(d, "m.cdt"));
}

TEST_CASE("simulate reports mismatched shapes") {
  testing::TempDir d("cli_sim_bad");
  RandomStream r(1, "cube");
  tensor_write(d / "cube.cdt", testing::random_real({8, 16, 16}, r));
  REQUIRE(run({"maskgen", "--t", "8", "--size", "8", "--rho", "0.5", "--height", "32", "--width", "32", "--seed", "1",
               "--out", p(d, "m.cdt")})
              .code == 0);
  const auto res = run({"simulate", "--cube", p(d, "cube.cdt"), "--mask", p(d, "m.cdt"), "--apc", "20", "--sigma",
                        "0.01", "--seed", "3", "--out", p(d, "y.cdt")});
  CHECK(res.code == cli::kData);
  CHECK(res.err.find("(8,16,16)") != std::string::npos);
  CHECK(res.err.find("(8,32,32)") != std::string::npos);
  CHECK(res.out.empty());
}

TEST_CASE("simulate is deterministic per seed") {
  testing::TempDir d("cli_sim");
  RandomStream r(2, "cube");
  tensor_write(d / "cube.cdt", testing::random_real({4, 16, 16}, r));
  REQUIRE(run({"maskgen", "--t", "4", "--size", "8", "--rho", "0.5", "--height", "16", "--width", "16", "--seed", "5",
               "--out", p(d, "m.cdt")})
              .code == 0);
  auto sim = [&](const std::string& out, const std::string& seed) {
    return run({"simulate", "--cube", p(d, "cube.cdt"), "--mask", p(d, "m.cdt"), "--apc", "10", "--sigma", "0.01",
                "--seed", seed, "--out", p(d, out), "--clean-out", p(d, out + ".clean")});
  };
  const auto a = sim("a.cdt", "7"), b = sim("b.cdt", "7"), c = sim("c.cdt", "8");
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  REQUIRE(c.code == 0);
  CHECK(read_file_bytes(d / "a.cdt") == read_file_bytes(d / "b.cdt"));
  CHECK(read_file_bytes(d / "a.cdt.meta") == read_file_bytes(d / "b.cdt.meta"));
  CHECK(read_file_bytes(d / "a.cdt") != read_file_bytes(d / "c.cdt"));
  CHECK(read_file_bytes(d / "a.cdt.clean") == read_file_bytes(d / "c.cdt.clean"));
  CHECK(a.json().at("alpha") == b.json().at("alpha"));
  CHECK(a.json().at("mask_id") == c.json().at("mask_id"));
}

TEST_CASE("usage errors exit 1") {
  CHECK(run({"transmogrify"}).code == cli::kUsage);
  CHECK(run({}).code == cli::kUsage);
  CHECK(run({"maskgen", "--t", "8"}).code == cli::kUsage);
  testing::TempDir d("cli_usage");
  CHECK(run({"maskgen", "--t", "8", "--size", "8", "--rho", "1.5", "--height", "32", "--width", "32", "--seed", "1",
             "--out", p(d, "m.cdt")})
            .code == cli::kUsage);
  CHECK(run({"scenegen", "--config", p(d, "absent.txt"), "--out", p(d, "s"), "--seed", "1"}).code == cli::kUsage);
  write_text(d / "bad.txt", "count = 2\nwobble = 3\n");
  const auto r = run({"scenegen", "--config", p(d, "bad.txt"), "--out", p(d, "s"), "--seed", "1"});
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find("wobble") != std::string::npos);
}

TEST_CASE("pipeline from scenes to reports") {
  testing::TempDir d("cli_pipe");
  write_text(d / "scenes.txt", "t = 4\nh = 8\nw = 8\ncount = 6\nmin_size = 3\nmax_size = 6\nmax_objects = 2\n");
  const auto sg = run({"scenegen", "--config", p(d, "scenes.txt"), "--out", p(d, "data"), "--seed", "11"});
  REQUIRE(sg.code == 0);
  CHECK(sg.json().at("command") == "scenegen");
  const auto again = run({"scenegen", "--config", p(d, "scenes.txt"), "--out", p(d, "data2"), "--seed", "11"});
  CHECK(read_file_bytes(d / "data" / "video.cdt") == read_file_bytes(d / "data2" / "video.cdt"));

  write_text(d / "pre.txt",
             "seed = 3\nepochs = 2\nbatch_size = 2\nlr = 1e-3\ncr = 4\nchannels = 4\nencoder_depth = 2\n"
             "decoder_depth = 0\nheads = 2\nrho = 0.5\nbackslash_mode = half\n");
  const auto pt = run({"pretrain", "--config", p(d, "pre.txt"), "--data", p(d, "data"), "--out", p(d, "pre")});
  REQUIRE_MESSAGE(pt.code == 0, pt.err);
  CHECK(pt.json().at("steps") == 6);
  CHECK(std::filesystem::exists(d / "pre" / "epoch_001.cdp"));
  CHECK(std::filesystem::exists(d / "pre" / "final.cdp"));
  {
    std::ifstream log(d / "pre" / "log.jsonl");
    std::string line;
    std::size_t n = 0;
    while (std::getline(log, line)) {
      const auto j = Json::parse(line);
      CHECK(j.contains("J"));
      CHECK(j.contains("lambda_effective"));
      ++n;
    }
    CHECK(n == 6);
  }
  const auto ck = nn::load_checkpoint(d / "pre" / "final.cdp");
  CHECK(ck.meta.at("rho") == "0.5");
  CHECK(ck.submask.has_value());

  write_text(d / "ft.txt", "seed = 4\nepochs = 1\nbatch_size = 3\nlr = 1e-3\n");
  const auto ft = run({"finetune", "--task", "edge", "--ckpt", p(d, "pre/final.cdp"), "--config", p(d, "ft.txt"),
                       "--data", p(d, "data"), "--out", p(d, "ft")});
  REQUIRE_MESSAGE(ft.code == 0, ft.err);
  CHECK(ft.json().at("pretrain_digest") == pt.json().at("checkpoint_digest"));

  const auto ev = run({"eval", "--task", "edge", "--ckpt", p(d, "ft/final.cdp"), "--data", p(d, "data"), "--apc", "20",
                       "--seed", "5", "--report", p(d, "edge.json")});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  CHECK(ev.json().at("mask") == "checkpoint");
  std::ifstream rep(d / "edge.json");
  const auto report = Json::parse(rep);
  CHECK(report.at("task") == "edge");
  CHECK(report.at("ods") == ev.json().at("ods"));

  const auto recon = run({"eval", "--task", "recon", "--ckpt", p(d, "pre/final.cdp"), "--data", p(d, "data"), "--apc",
                          "20", "--seed", "5", "--report", p(d, "recon.json")});
  REQUIRE(recon.code == 0);
  CHECK(recon.json().contains("psnr_db"));

  // Head mismatch.
  CHECK(run({"eval", "--task", "depth", "--ckpt", p(d, "ft/final.cdp"), "--data", p(d, "data"), "--apc", "20", "--seed",
             "5", "--report", p(d, "x.json")})
            .code == cli::kUsage);

  // A longer clip evaluates with a derived mask.
  write_text(d / "long.txt", "t = 8\nh = 8\nw = 8\ncount = 2\nmin_size = 3\nmax_size = 6\nmax_objects = 2\n");
  REQUIRE(run({"scenegen", "--config", p(d, "long.txt"), "--out", p(d, "long"), "--seed", "12"}).code == 0);
  const auto cr16 = run({"eval", "--task", "edge", "--ckpt", p(d, "ft/final.cdp"), "--data", p(d, "long"), "--apc",
                         "20", "--seed", "5", "--report", p(d, "long.json")});
  REQUIRE_MESSAGE(cr16.code == 0, cr16.err);
  CHECK(cr16.json().at("mask") == "derived");

  const auto eg = run({"egcr", "--ckpt", p(d, "pre/final.cdp")});
  REQUIRE(eg.code == 0);
  CHECK(eg.json().at("total_params") == nn::parameter_count(ck.model_config()));
  CHECK(eg.json().at("order") == 0);

  // Corrupt checkpoint.
  auto bytes = read_file_bytes(d / "pre" / "final.cdp");
  bytes.resize(bytes.size() / 2);
  write_file_bytes(d / "broken.cdp", bytes);
  CHECK(run({"egcr", "--ckpt", p(d, "broken.cdp")}).code == cli::kData);
  CHECK(run({"egcr", "--ckpt", p(d, "nothing.cdp")}).code == cli::kData);
}

TEST_CASE("gradcheck subcommand") {
  const auto r = run({"gradcheck", "--seed", "2"});
  REQUIRE(r.code == cli::kOk);
  const auto j = r.json();
  CHECK(j.at("pass") == true);
  CHECK(j.at("max_rel_error").get<double>() < 1e-4);
}
