#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mrt/model.hpp"
#include "mrt/synthetic.hpp"

namespace mrt {

struct AuxLossConfig {
  double grad_supervision = 0.0;
  double divergence = 0.0;
  double cosine_sim = 0.0;
  bool any() const { return grad_supervision > 0 || divergence > 0 || cosine_sim > 0; }
};

struct TrainConfig {
  size_t epochs = 1;
  size_t max_steps = 0;  // 0 = no cap
  double max_lr = 1e-3;
  size_t warmup_steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.01;
  double adam_eps = 1e-8;
  NoiseSpec noise;
  AuxLossConfig aux;
  bool exclude_enforced_from_loss = false;
  double intermediate_supervision_weight = 0.1;
  size_t latent_probe_interval = 0;  // steps between latent-distance probes, 0 = off
  uint64_t seed = 1;
  Precision precision = Precision::f32;
};

/// Deterministic independent seed streams derived from (seed, purpose, step).
uint64_t substream(uint64_t seed, uint64_t purpose, uint64_t step);

/// Linear warmup to max_lr, then cosine decay to zero at total_steps.
double lr_at(size_t step, const TrainConfig& cfg, size_t total_steps);

struct AdamWState {
  std::vector<std::vector<double>> m, v;
  size_t step = 0;
};

AdamWState make_adamw_state(const std::vector<Parameter*>& params);

/// One decoupled-weight-decay Adam step; gradients are read from each
/// parameter's grad buffer. Aborts on non-finite gradients.
void adamw_step(std::vector<Parameter*>& params, AdamWState& state,
                const TrainConfig& cfg, double lr);

struct StepLosses {
  double main = 0.0;
  double mnp = 0.0;
  double grad_supervision = 0.0;
  double divergence = 0.0;
  double cosine = 0.0;
  double intermediate = 0.0;
  double total = 0.0;
};

/// Squared-error losses and the optimizer update for one (trajectory, t)
/// pair. MNP centers are freshly sampled from (seed, step).
StepLosses train_step(Model& model, const GraphCache& cache, const Trajectory& traj,
                      size_t t, const TrainConfig& cfg, AdamWState& opt,
                      size_t step_index, size_t total_steps);

/// Loss-only evaluation used by structural tests; no optimizer update, but
/// gradients are left in the parameters.
StepLosses compute_losses(Model& model, const GraphCache& cache, const Trajectory& traj,
                          size_t t, const TrainConfig& cfg, size_t step_index,
                          bool do_backward);

/// Mean-over-nodes L2 distance between each layer's latent and the encoded
/// next-step target, on clean features.
std::vector<double> latent_distance(Model& model, const GraphCache& cache,
                                    const Trajectory& traj, size_t t);

struct TrainLogRow {
  size_t step;
  double lr;
  StepLosses losses;
  double wall_ms;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::vector<std::pair<size_t, std::vector<double>>> latent_probe;  // step, per-layer
  size_t steps_run = 0;
};

/// Epoch loop over all (trajectory, t) pairs in seeded random order,
/// optionally capped at cfg.max_steps. Per-trajectory graph caches are built
/// once. `start_step` supports checkpoint resume.
TrainResult train_model(Model& model, const std::vector<Trajectory>& train_set,
                        const TrainConfig& cfg, AdamWState& opt,
                        size_t start_step = 0);

void write_train_log_csv(const std::string& path, const TrainResult& result);
void write_latent_probe_csv(const std::string& path, const TrainResult& result);

// --- checkpointing -------------------------------------------------------------

struct Checkpoint {
  uint64_t config_hash = 0;
  uint64_t step = 0;
  // parameter names/shapes/values plus optimizer moments, in model order
};

void save_checkpoint(const std::string& path, const Model& model,
                     const AdamWState& opt, uint64_t step, uint64_t config_hash);
/// Restores parameter values and optimizer moments into a model built from
/// the same config; returns the stored step counter.
uint64_t load_checkpoint(const std::string& path, Model& model, AdamWState& opt,
                         uint64_t expected_config_hash = 0);

}  // namespace mrt
