#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrt/config.hpp"
#include "mrt/rollout.hpp"

namespace mrt {

struct GenerateOptions {
  size_t nodes = 1000;
  size_t steps = 100;
  double dt = 0.002;
  size_t trajectories = 60;  // split 5:1 train:test by default
  size_t test_trajectories = 0;  // 0 -> trajectories / 6
  uint64_t seed = 1;
  std::string out_dir;
  size_t threads = 1;
};

int cmd_generate(const GenerateOptions& opt);

struct SeedMetrics {
  uint64_t seed = 0;
  double rmse_1step = 0.0;
  double rmse_rollout = 0.0;
  uint64_t steps_trained = 0;
};

struct EvalSummary {
  std::vector<SeedMetrics> per_seed;
  double mean_1step = 0.0, std_1step = 0.0;
  double mean_rollout = 0.0, std_rollout = 0.0;
};

/// Trains one model for one seed (resuming from the checkpoint when present
/// and `resume` is set) and evaluates it on the test split.
SeedMetrics run_seed(const ExperimentConfig& cfg, const DatasetSplit& data,
                     uint64_t seed, const std::string& checkpoint_path,
                     const std::string& train_log_path,
                     const std::string& latent_probe_path, bool resume);

/// Generates (or reloads) the dataset an experiment describes, caching it
/// under <out_dir>/dataset.
DatasetSplit ensure_dataset(const ExperimentConfig& cfg, const std::string& out_dir,
                            size_t threads);

int cmd_train(const ExperimentConfig& cfg, const std::string& out_dir, size_t threads);
int cmd_eval(const ExperimentConfig& cfg, const std::string& out_dir, bool oracle,
             bool probes);

struct AblationCell {
  std::string label;
  ExperimentConfig cfg;
};

std::vector<AblationCell> ablation_cells(const ExperimentConfig& base,
                                         const std::string& axis);
int cmd_ablate(const ExperimentConfig& cfg, const std::string& axis,
               const std::string& out_dir, size_t threads);

int cmd_verify(const std::string& out_dir);

EvalSummary summarize(std::vector<SeedMetrics> rows);
void write_metrics_csv(const std::string& path, const EvalSummary& summary);
void write_manifest(const std::string& out_dir, const ExperimentConfig& cfg,
                    const std::string& command);

}  // namespace mrt
