#include <cstdlib>
#include <fstream>
#include <sstream>

#include "idguard/png_io.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace idtest;
using nlohmann::json;

#ifndef IDGUARD_CLI_PATH
#define IDGUARD_CLI_PATH "idguard"
#endif

namespace {

int run_cli(const std::string& args, const std::string& stderr_file = "") {
  std::string cmd = std::string(IDGUARD_CLI_PATH) + " " + args;
  if (!stderr_file.empty()) cmd += " 2>" + stderr_file;
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// One micro workspace shared by the whole pipeline run.
struct CliWorld {
  TempDir tmp{"idguard_cli"};
  std::string cfg_path;
  std::string out;

  CliWorld() {
    RunConfig cfg = micro_config();
    cfg.optimizer.max_iterations = 6;
    cfg.trainer.checkpoint_every = 3;
    cfg_path = tmp.path + "/micro.json";
    out = tmp.path + "/out";
    std::ofstream os(cfg_path);
    os << cfg.to_json().dump(2);
  }
};

CliWorld& cli_world() {
  static CliWorld w;
  return w;
}

std::string common(const CliWorld& w) { return "--config " + w.cfg_path + " --out " + w.out; }

}  // namespace

TEST_CASE("missing artifacts name the producing command") {
  CliWorld& w = cli_world();
  const std::string err = w.tmp.path + "/err.txt";
  CHECK(run_cli("evaluate " + common(w), err) == 1);
  const std::string msg = slurp(err);
  INFO(msg);
  CHECK(msg.find("prepare-data") != std::string::npos);
}

TEST_CASE("full micro pipeline runs end to end") {
  CliWorld& w = cli_world();
  REQUIRE(run_cli("prepare-data " + common(w)) == 0);
  CHECK(std::filesystem::exists(w.out + "/dataset/manifest.json"));
  CHECK(std::filesystem::exists(w.out + "/dataset/resolved_config.json"));

  // evaluate still fails, now pointing at train-models
  const std::string err = w.tmp.path + "/err2.txt";
  CHECK(run_cli("evaluate " + common(w), err) == 1);
  CHECK(slurp(err).find("train-models") != std::string::npos);

  REQUIRE(run_cli("train-models " + common(w)) == 0);
  CHECK(std::filesystem::exists(w.out + "/models/gates.json"));

  // evaluate without a generator names train-generator
  const std::string err3 = w.tmp.path + "/err3.txt";
  CHECK(run_cli("evaluate " + common(w), err3) == 1);
  CHECK(slurp(err3).find("train-generator") != std::string::npos);

  REQUIRE(run_cli("derive-prior " + common(w)) == 0);
  CHECK(std::filesystem::exists(w.out + "/prior/delta_p.bin"));
  CHECK(std::filesystem::exists(w.out + "/prior/delta_p.png"));
  CHECK(std::filesystem::exists(w.out + "/prior/estimated_alpha.json"));

  REQUIRE(run_cli("train-generator " + common(w)) == 0);
  CHECK(std::filesystem::exists(w.out + "/generator/train_log.jsonl"));
  CHECK(std::filesystem::exists(w.out + "/generator/generator/params.bin"));

  REQUIRE(run_cli("evaluate " + common(w)) == 0);
  CHECK(std::filesystem::exists(w.out + "/eval/report.json"));
  CHECK(std::filesystem::exists(w.out + "/eval/summary.csv"));

  REQUIRE(run_cli("report " + common(w)) == 0);
  CHECK(std::filesystem::exists(w.out + "/report/weight_trajectories.svg"));
  CHECK(std::filesystem::exists(w.out + "/report/loss_curves.svg"));

  RunConfig cfg = micro_config();
  cfg.adv_train.iterations = 2;
  {
    std::ofstream os(w.cfg_path);  // shrink adv-train for the smoke run
    os << cfg.to_json().dump(2);
  }
  REQUIRE(run_cli("adv-train " + common(w)) == 0);
  CHECK(std::filesystem::exists(w.out + "/advtrain/robustness.csv"));
}

TEST_CASE("protect bounds the 8-bit pixel delta by the quantized epsilon") {
  CliWorld& w = cli_world();
  REQUIRE(std::filesystem::exists(w.out + "/generator/generator/params.bin"));
  const std::string input = w.out + "/dataset/images/sample_00000.png";
  const std::string dest = w.tmp.path + "/protected";
  REQUIRE(run_cli("protect " + common(w) + " --dest " + dest + " " + input) == 0);
  const std::string prot = dest + "/sample_00000_protected.png";
  REQUIRE(std::filesystem::exists(prot));
  CHECK(std::filesystem::exists(dest + "/sample_00000_perturbation.png"));

  Rgb8 orig = read_png_rgb8(input);
  Rgb8 protected_img = read_png_rgb8(prot);
  REQUIRE(orig.px.size() == protected_img.px.size());
  const int bound = static_cast<int>(std::floor(0.05 * 127.5 + 0.5));
  int max_delta = 0;
  for (size_t i = 0; i < orig.px.size(); ++i)
    max_delta = std::max(max_delta, std::abs(int(orig.px[i]) - int(protected_img.px[i])));
  INFO("max 8-bit delta ", max_delta, " bound ", bound);
  CHECK(max_delta <= bound);
}

TEST_CASE("config validation failures exit with code 1") {
  CliWorld& w = cli_world();
  const std::string bad = w.tmp.path + "/bad.json";
  {
    std::ofstream os(bad);
    os << R"({"unknown_key": 1})";
  }
  const std::string err = w.tmp.path + "/err4.txt";
  CHECK(run_cli("prepare-data --config " + bad + " --out " + w.out, err) == 1);
  CHECK(slurp(err).find("unknown config key") != std::string::npos);
}

TEST_CASE("overrides echo into the resolved config dump") {
  CliWorld& w = cli_world();
  const std::string out2 = w.tmp.path + "/out_override";
  REQUIRE(run_cli("prepare-data --config " + w.cfg_path + " --out " + out2 +
                  " --set epsilon=0.03 --seed 5") == 0);
  json resolved = json::parse(slurp(out2 + "/dataset/resolved_config.json"));
  CHECK(resolved["epsilon"] == 0.03);
  CHECK(resolved["seed"] == 5);
}

TEST_CASE("re-running a command reproduces its artifacts bit-exactly") {
  CliWorld& w = cli_world();
  const std::string out_a = w.tmp.path + "/det_a";
  const std::string out_b = w.tmp.path + "/det_b";
  REQUIRE(run_cli("prepare-data --config " + w.cfg_path + " --out " + out_a) == 0);
  REQUIRE(run_cli("prepare-data --config " + w.cfg_path + " --out " + out_b) == 0);
  CHECK(slurp(out_a + "/dataset/manifest.json") == slurp(out_b + "/dataset/manifest.json"));
  CHECK(slurp(out_a + "/dataset/images/sample_00000.png") ==
        slurp(out_b + "/dataset/images/sample_00000.png"));
  CHECK(slurp(out_a + "/dataset/masks/sample_00000.png") ==
        slurp(out_b + "/dataset/masks/sample_00000.png"));
}
