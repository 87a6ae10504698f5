#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mrt/model.hpp"
#include "mrt/synthetic.hpp"

namespace mrt {

/// Overwrites enforced boundary values with ground truth: velocity
/// components on every node type except Normal and Outflow, pressure-like
/// components at Inflow only.
std::vector<double> enforce_bc(const std::vector<double>& pred,
                               const std::vector<double>& truth,
                               const MeshGraph& mesh, const TrajectorySchema& schema);

/// Advances one state: given the state at step t (N x c doubles) and the
/// previous state (empty at t = 0 when history is unused), returns the
/// predicted state at t + 1 before BC enforcement.
using StepFn = std::function<std::vector<double>(const std::vector<double>& state,
                                                 const std::vector<double>& prev,
                                                 size_t t)>;

/// Wraps a trained model as a StepFn for the given trajectory's mesh.
StepFn model_stepper(Model& model, const GraphCache& cache, const Trajectory& traj);

struct RolloutResult {
  std::vector<std::vector<double>> predicted;  // per step, N x c (step 0 = truth)
  std::vector<double> per_step_rmse;
  double rollout_rmse = 0.0;
  size_t divergence_step = SIZE_MAX;  // first aborted step, SIZE_MAX if none
};

/// Autoregressive rollout with BC enforcement; the model consumes its own
/// outputs and never sees noise. Aborts when the state magnitude exceeds
/// 1e6 times the initial maximum. Passing `resume_from` continues a previous
/// rollout of the same trajectory up to the larger horizon.
RolloutResult rollout(const StepFn& step, const Trajectory& traj, size_t horizon,
                      const RolloutResult* resume_from = nullptr);

using StepperFactory = std::function<StepFn(const Trajectory&, size_t index)>;

StepperFactory model_stepper_factory(Model& model, uint64_t jumper_seed_base);
/// Ground-truth stepper, used as the zero-error reference model.
StepperFactory oracle_stepper_factory();

/// sqrt of mean over trajectories of mean over steps of mean over nodes of
/// mean over components of the squared one-step error.
double rmse_1step(const StepperFactory& make, const std::vector<Trajectory>& dataset);
double rmse_rollout(const StepperFactory& make, const std::vector<Trajectory>& dataset,
                    size_t horizon);
double rmse_1step(Model& model, const std::vector<Trajectory>& dataset,
                  uint64_t jumper_seed);
double rmse_rollout(Model& model, const std::vector<Trajectory>& dataset,
                    size_t horizon, uint64_t jumper_seed);

/// Per-layer mean L2 distance between the rollout latents and the encoded
/// next-step target for one step of one trajectory.
std::vector<double> latent_distance_probe(Model& model, const GraphCache& cache,
                                          const Trajectory& traj, size_t t);

struct ProbeTask {
  std::string name;
  std::vector<double> targets;  // rows x task_dim
  size_t task_dim = 1;
};

struct ProbeConfig {
  size_t hidden = 32;
  size_t train_steps = 300;
  double lr = 1e-2;
  double holdout_fraction = 0.2;
  uint64_t seed = 1;
};

struct ProbeReport {
  std::vector<std::string> tasks;
  // held-out MSE indexed [layer][task]
  std::vector<std::vector<double>> loss;
};

/// Trains a fresh 2-layer MLP per (layer, task) on frozen latents and
/// reports held-out loss.
ProbeReport subtask_probe(const std::vector<std::vector<double>>& latents_per_layer,
                          size_t latent_width, const std::vector<ProbeTask>& tasks,
                          const ProbeConfig& cfg);

/// Frozen per-layer latents and probe targets collected from a model over
/// sampled steps of a trajectory: next-step velocity, next-step scalar
/// (pressure proxy), and the WLS gradient magnitude of the scalar (wall
/// shear stress analogue).
struct ProbeData {
  std::vector<std::vector<double>> latents;  // per layer, rows x d
  std::vector<ProbeTask> tasks;
  size_t rows = 0;
};

ProbeData collect_probe_data(Model& model, const GraphCache& cache,
                             const Trajectory& traj, const std::vector<size_t>& steps);

}  // namespace mrt
