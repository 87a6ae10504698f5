#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrt/mesh.hpp"

namespace mrt {

enum class FieldKind : uint8_t { Velocity = 0, Pressure = 1, Generic = 2 };

struct FieldComponent {
  std::string name;
  bool dynamical = true;  // eligible for training noise
  FieldKind kind = FieldKind::Generic;
};

struct TrajectorySchema {
  std::vector<FieldComponent> components;
  size_t num_components() const { return components.size(); }
  bool operator==(const TrajectorySchema&) const = default;
};

/// Time-indexed field states on a fixed mesh. States are stored in single
/// precision, matching the on-disk format, so serialization round-trips are
/// bit exact.
struct Trajectory {
  MeshGraph mesh;
  TrajectorySchema schema;
  double delta_t = 0.0;
  size_t num_steps = 0;          // T
  std::vector<float> states;     // T x N x c row major
  std::vector<float> inflow;     // T, per-step inflow scalar

  size_t num_nodes() const { return mesh.num_nodes(); }
  float at(size_t t, size_t i, size_t c) const {
    return states[(t * num_nodes() + i) * schema.num_components() + c];
  }
  /// One timestep as doubles, N x c.
  std::vector<double> step_values(size_t t) const;
};

/// Per-component noise standard deviation, aligned with the schema.
struct NoiseSpec {
  std::vector<double> sigma;
};

struct SimParams {
  double kappa = 2e-3;        // diffusivity
  double u0 = 1.0;            // channel inflow speed at t=0
  double vortex = 0.5;        // vortex stream-function amplitude
  double decay = 2.0;         // exponential velocity decay rate
  double inflow_scalar = 0.0; // Dirichlet value of the scalar at inflow nodes
  int blobs = 3;              // Gaussian blobs in the initial scalar
  double background = 0.0;    // uniform initial scalar level
};

struct DatasetConfig {
  size_t nodes = 1000;
  size_t steps = 100;
  double dt = 0.002;
  size_t train_trajectories = 50;
  size_t test_trajectories = 10;
  uint64_t seed = 1;
  SimParams params;  // per-trajectory u0/vortex are jittered around these
};

struct DatasetSplit {
  std::vector<Trajectory> train;
  std::vector<Trajectory> test;
  uint64_t seed = 0;
};

/// Columns of the model input matrix built from a trajectory step.
struct FeatureLayout {
  size_t width = 0;
  size_t onehot_offset = 0;      // kNumNodeTypes columns
  size_t state_offset = 0;       // one column per schema component
  size_t num_components = 0;
  size_t inflow_offset = 0;      // single column
  ptrdiff_t history_offset = -1; // -1 when absent
};

// --- generation -------------------------------------------------------------

/// Seeded Delaunay triangulation of the unit square with exactly num_points
/// nodes. Left edge nodes are Inflow, right edge Outflow, top/bottom Wall,
/// interior Normal.
MeshGraph generate_mesh(size_t num_points, uint64_t seed);

/// Explicit advection-diffusion stepping in double precision; returns one
/// N x c state vector per step (c = 3: vx, vy, scalar).
std::vector<std::vector<double>> simulate_states(const MeshGraph& mesh, size_t steps,
                                                 double delta_t, const SimParams& params,
                                                 uint64_t seed);

Trajectory simulate(const MeshGraph& mesh, size_t steps, double delta_t,
                    const SimParams& params, uint64_t seed);

TrajectorySchema advection_diffusion_schema();

DatasetSplit generate_dataset(const DatasetConfig& cfg, size_t threads = 1);

// --- features ----------------------------------------------------------------

FeatureLayout feature_layout(const TrajectorySchema& schema, bool with_history);

/// Input features for predicting step t+1 from step t:
/// [node-type one-hot | state at t | inflow scalar | optional history].
NodeFeatures build_features(const Trajectory& traj, size_t t, bool with_history);

/// First-order history augmentation (u_t - u_{t-1}) / dt for dynamical
/// components; errors at t = 0.
std::vector<double> history_feature(const Trajectory& traj, size_t t);

/// Adds N(0, sigma_c) to the state columns of dynamical components. Node
/// type, inflow, and derived history columns are untouched.
NodeFeatures add_training_noise(const NodeFeatures& features, const FeatureLayout& layout,
                                const TrajectorySchema& schema, const NoiseSpec& spec,
                                uint64_t seed);

// --- serialization -------------------------------------------------------------

enum class TrajIoCode {
  BadMagic,
  BadEndianness,
  BadVersion,
  Truncated,
  SchemaMismatch,
  WriteFailed,
};

class TrajectoryIoError : public std::runtime_error {
 public:
  TrajectoryIoError(TrajIoCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  TrajIoCode code() const { return code_; }

 private:
  TrajIoCode code_;
};

void write_trajectory(const std::string& path, const Trajectory& traj);
Trajectory read_trajectory(const std::string& path);

void save_dataset(const std::string& dir, const DatasetSplit& split);
DatasetSplit load_dataset(const std::string& dir);

}  // namespace mrt
