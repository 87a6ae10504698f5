#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mrt/commands.hpp"
#include "mrt/training.hpp"

using namespace mrt;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg = default_experiment_config();
  cfg.dataset.nodes = 25;
  cfg.dataset.steps = 4;
  cfg.dataset.dt = 0.001;
  cfg.dataset.train_trajectories = 2;
  cfg.dataset.test_trajectories = 1;
  cfg.dataset.seed = 4;
  cfg.model.depth = 1;
  cfg.model.width = 8;
  cfg.model.heads = 2;
  cfg.model.jumper_frac = 0.0;
  cfg.train.epochs = 1;
  cfg.train.max_steps = 3;
  cfg.train.warmup_steps = 2;
  cfg.train.noise.sigma = {0.0, 0.0, 0.0};
  cfg.train.precision = Precision::f64;
  cfg.eval_horizon = 3;
  cfg.seeds = {1, 2};
  return cfg;
}

std::string tmp_dir(const std::string& name) {
  std::string d = (fs::temp_directory_path() / name).string();
  fs::remove_all(d);
  return d;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config: parse round trip and unknown-key rejection") {
  ExperimentConfig cfg = tiny_config();
  ExperimentConfig back = parse_experiment_config(cfg.to_json());
  CHECK(back.content_hash() == cfg.content_hash());
  CHECK(back.dataset.nodes == 25);
  CHECK(back.seeds == std::vector<uint64_t>{1, 2});

  CHECK_THROWS_WITH_AS(parse_experiment_config(R"({"modle": {}})"),
                       doctest::Contains("unknown key"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(R"({"model": {"depht": 3}})"),
      doctest::Contains("model.depht"), std::invalid_argument);
  CHECK_THROWS_AS(parse_experiment_config(R"({"seeds": []})"),
                  std::invalid_argument);
}

TEST_CASE("config: hash is stable and content sensitive") {
  ExperimentConfig a = tiny_config();
  ExperimentConfig b = tiny_config();
  CHECK(a.content_hash() == b.content_hash());
  b.model.width = 16;
  CHECK(a.content_hash() != b.content_hash());
}

TEST_CASE("param matching lands within 2 percent") {
  ModelConfig full = tiny_config().model;
  full.width = 16;
  full.mnp.enabled = true;
  full.temporal.enabled = true;
  full.pe_mode = PeMode::rope;
  size_t in_w = feature_layout(advection_diffusion_schema(), false).width;
  size_t target = count_model_params(full, in_w, 3, 2);

  ModelConfig plain = tiny_config().model;
  plain.width = 16;
  ModelConfig matched = match_param_count(plain, target, in_w, 3, 2);
  size_t got = count_model_params(matched, in_w, 3, 2);
  double rel = std::abs(static_cast<double>(got) - static_cast<double>(target)) /
               static_cast<double>(target);
  CHECK(rel <= 0.02);
  CHECK(matched.width >= plain.width);
}

TEST_CASE("cmd_train writes checkpoints, metrics, and a manifest") {
  ExperimentConfig cfg = tiny_config();
  std::string out = tmp_dir("mrt_cli_train");
  CHECK(cmd_train(cfg, out, 1) == 0);
  CHECK(fs::exists(fs::path(out) / "manifest.json"));
  CHECK(fs::exists(fs::path(out) / "metrics.csv"));
  for (uint64_t s : cfg.seeds) {
    CHECK(fs::exists(fs::path(out) / ("checkpoint_seed" + std::to_string(s) + ".mrck")));
    CHECK(fs::exists(fs::path(out) / ("train_log_seed" + std::to_string(s) + ".csv")));
  }

  // Epochs=0 still produces a usable checkpoint of the initial model.
  ExperimentConfig zero = cfg;
  zero.train.epochs = 0;
  zero.train.max_steps = 0;
  std::string out0 = tmp_dir("mrt_cli_train0");
  CHECK(cmd_train(zero, out0, 1) == 0);
  CHECK(cmd_eval(zero, out0, false, false) == 0);
  fs::remove_all(out);
  fs::remove_all(out0);
}

TEST_CASE("cmd_eval on the ground-truth oracle reports zero RMSE") {
  ExperimentConfig cfg = tiny_config();
  std::string out = tmp_dir("mrt_cli_oracle");
  CHECK(cmd_eval(cfg, out, /*oracle=*/true, false) == 0);
  std::string csv = read_file((fs::path(out) / "metrics.csv").string());
  CHECK(csv.find("mean,0,0,") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("determinism: identical config+seed reproduces metrics.csv bytes") {
  ExperimentConfig cfg = tiny_config();
  cfg.seeds = {3};
  std::string out1 = tmp_dir("mrt_cli_det1");
  std::string out2 = tmp_dir("mrt_cli_det2");
  CHECK(cmd_train(cfg, out1, 1) == 0);
  CHECK(cmd_train(cfg, out2, 1) == 0);
  CHECK(read_file((fs::path(out1) / "metrics.csv").string()) ==
        read_file((fs::path(out2) / "metrics.csv").string()));
  // Training log bytes too: wall_ms differs, so compare without it.
  auto strip_wall = [](std::string s) {
    std::string out;
    size_t pos = 0;
    while (pos < s.size()) {
      size_t eol = s.find('\n', pos);
      if (eol == std::string::npos) eol = s.size();
      std::string line = s.substr(pos, eol - pos);
      size_t last = line.rfind(',');
      out += line.substr(0, last) + "\n";
      pos = eol + 1;
    }
    return out;
  };
  CHECK(strip_wall(read_file((fs::path(out1) / "train_log_seed3.csv").string())) ==
        strip_wall(read_file((fs::path(out2) / "train_log_seed3.csv").string())));
  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST_CASE("cmd_ablate: single-cell sweep equals train+eval, structure checks") {
  ExperimentConfig cfg = tiny_config();
  cfg.seeds = {5};

  // mnp_centers axis has three monotone cells.
  auto cells = ablation_cells(cfg, "mnp_centers");
  REQUIRE(cells.size() == 3);
  CHECK(cells[0].cfg.model.mnp.centers == 0);
  CHECK(cells[1].cfg.model.mnp.centers == 64);
  CHECK(cells[2].cfg.model.mnp.centers == 256);
  CHECK(!cells[0].cfg.model.mnp.enabled);

  auto pe_cells = ablation_cells(cfg, "pe_mode");
  CHECK(pe_cells.size() == 5);
  auto wd = ablation_cells(cfg, "width_vs_depth");
  CHECK(wd.size() == 4);
  CHECK_THROWS_AS(ablation_cells(cfg, "nope"), std::invalid_argument);

  // Degenerate single-seed sweep: the cell metrics equal a direct run, and
  // the std column is zero.
  std::string out = tmp_dir("mrt_cli_ablate");
  DatasetSplit data = ensure_dataset(cfg, out, 1);
  SeedMetrics direct = run_seed(cells[0].cfg, data, 5, "", "", "", false);
  CHECK(cmd_ablate(cfg, "mnp_centers", out, 1) == 0);
  std::string csv = read_file((fs::path(out) / "ablate_mnp_centers.csv").string());
  char expect[128];
  std::snprintf(expect, sizeof(expect), "centers_0,%.12g,0,%.12g,0,1",
                direct.rmse_1step, direct.rmse_rollout);
  CHECK(csv.find(expect) != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("cmd_verify passes on defaults") {
  std::string out = tmp_dir("mrt_cli_verify");
  CHECK(cmd_verify(out) == 0);
  CHECK(fs::exists(fs::path(out) / "theorem1_sweep.csv"));
  fs::remove_all(out);
}
