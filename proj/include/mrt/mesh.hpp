#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mrt {

enum class NodeType : uint8_t { Normal = 0, Inflow = 1, Outflow = 2, Wall = 3, Obstacle = 4 };
constexpr size_t kNumNodeTypes = 5;

/// Unstructured mesh as an undirected graph. Edges are stored directed, both
/// orientations present: (i,j) in the list iff (j,i) is. Immutable after
/// construction; safe to share across threads.
struct MeshGraph {
  std::vector<std::array<double, 3>> positions;  // z = 0 for 2D meshes
  int dim = 2;
  std::vector<std::pair<uint32_t, uint32_t>> edges;  // (sender, receiver)
  std::vector<NodeType> node_type;

  size_t num_nodes() const { return positions.size(); }
  size_t num_directed_edges() const { return edges.size(); }
  size_t num_undirected_edges() const { return edges.size() / 2; }

  /// Builds from an undirected pair list (each pair inserted both ways).
  static MeshGraph from_undirected(std::vector<std::array<double, 3>> pos, int dim,
                                   const std::vector<std::pair<uint32_t, uint32_t>>& undirected,
                                   std::vector<NodeType> types);

  /// Validates index ranges, symmetry, and absence of self-loops.
  void check_valid() const;
};

/// Symmetric boolean adjacency in compressed sparse row form, neighbor lists
/// sorted ascending.
struct Adjacency {
  size_t n = 0;
  std::vector<size_t> offsets;  // n + 1
  std::vector<uint32_t> cols;
  std::vector<uint32_t> degree;

  bool has_edge(uint32_t i, uint32_t j) const;
};

/// Per-mesh geometric quantities: coordinates centered on the mesh mean and
/// the maximum edge length h.
struct GeometricContext {
  std::vector<std::array<double, 3>> centered_positions;
  std::array<double, 3> mean_position{0, 0, 0};
  double mesh_size_h = 0.0;
  double min_edge_length = 0.0;
};

/// N x p input attribute matrix plus which columns carry dynamical state.
struct NodeFeatures {
  size_t num_nodes = 0;
  size_t width = 0;
  std::vector<double> values;  // row major N x p

  double& at(size_t i, size_t j) { return values[i * width + j]; }
  double at(size_t i, size_t j) const { return values[i * width + j]; }
};

Adjacency build_adjacency(const MeshGraph& mesh);

/// Neighbors of node i in ascending index order.
std::vector<uint32_t> neighborhood(const MeshGraph& mesh, uint32_t i);
std::vector<uint32_t> neighborhood(const Adjacency& adj, uint32_t i);

/// Adds `count` random long-distance edges (jumpers) between non-adjacent
/// node pairs, sampled without replacement. Deterministic under seed.
MeshGraph add_jumpers(const MeshGraph& mesh, size_t count, uint64_t seed);

/// Indices of nodes with node_type == Normal.
std::vector<uint32_t> internal_nodes(const MeshGraph& mesh);

GeometricContext geometric_context(const MeshGraph& mesh);

/// One-hot encoding of node types, N x 5.
std::vector<double> node_type_onehot(const MeshGraph& mesh);

std::string node_type_name(NodeType t);

}  // namespace mrt
