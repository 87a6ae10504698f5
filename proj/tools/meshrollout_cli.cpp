#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mrt/commands.hpp"

namespace {

mrt::ExperimentConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return mrt::default_experiment_config();
  return mrt::load_experiment_config(path);
}

void apply_env_precision(mrt::ExperimentConfig& cfg) {
  const char* p = std::getenv("MESHROLLOUT_PRECISION");
  if (!p) return;
  std::string s(p);
  if (s == "f32") cfg.train.precision = mrt::Precision::f32;
  else if (s == "f64") cfg.train.precision = mrt::Precision::f64;
  else throw std::invalid_argument("MESHROLLOUT_PRECISION must be f32 or f64");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mesh surrogate training, evaluation, and verification"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  std::vector<uint64_t> seeds;
  size_t threads = 1;

  // generate
  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
  mrt::GenerateOptions gopt;
  gen->add_option("--nodes", gopt.nodes, "nodes per mesh");
  gen->add_option("--steps", gopt.steps, "timesteps per trajectory");
  gen->add_option("--dt", gopt.dt, "solver timestep (s)");
  gen->add_option("--trajectories", gopt.trajectories, "total trajectories");
  gen->add_option("--test-trajectories", gopt.test_trajectories,
                  "test split size (default: total/6)");
  gen->add_option("--seed", gopt.seed, "master seed");
  gen->add_option("--out-dir", gopt.out_dir, "output directory")->required();
  gen->add_option("--threads", gopt.threads, "worker threads");

  // train / eval / ablate / verify
  auto* train = app.add_subcommand("train", "train models per seed");
  train->add_option("--config", config_path, "experiment config JSON");
  train->add_option("--out", out_dir, "output directory");
  train->add_option("--seeds", seeds, "seed list override");
  train->add_option("--threads", threads, "worker threads");

  auto* eval = app.add_subcommand("eval", "evaluate trained checkpoints");
  bool oracle = false, probes = false;
  eval->add_option("--config", config_path, "experiment config JSON");
  eval->add_option("--out", out_dir, "output directory");
  eval->add_option("--seeds", seeds, "seed list override");
  eval->add_flag("--oracle", oracle, "evaluate the ground-truth oracle model");
  eval->add_flag("--probes", probes, "run latent-distance and subtask probes");

  auto* ablate = app.add_subcommand("ablate", "run an ablation sweep");
  std::string axis;
  ablate->add_option("--axis", axis,
                     "pe_mode | mnp_centers | temporal_frequency | gate_mixer | "
                     "aux_losses | width_vs_depth")
      ->required();
  ablate->add_option("--config", config_path, "experiment config JSON");
  ablate->add_option("--out", out_dir, "output directory");
  ablate->add_option("--seeds", seeds, "seed list override");
  ablate->add_option("--threads", threads, "worker threads");

  auto* verify = app.add_subcommand("verify", "numerical verification suites");
  verify->add_option("--out", out_dir, "output directory for sweep CSVs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return mrt::cmd_generate(gopt);
    mrt::ExperimentConfig cfg = load_config_or_default(config_path);
    if (!seeds.empty()) cfg.seeds = seeds;
    apply_env_precision(cfg);
    if (train->parsed()) return mrt::cmd_train(cfg, out_dir, threads);
    if (eval->parsed()) return mrt::cmd_eval(cfg, out_dir, oracle, probes);
    if (ablate->parsed()) return mrt::cmd_ablate(cfg, axis, out_dir, threads);
    if (verify->parsed()) return mrt::cmd_verify(out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
