#include "mrt/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mrt {

MeshGraph MeshGraph::from_undirected(
    std::vector<std::array<double, 3>> pos, int dim,
    const std::vector<std::pair<uint32_t, uint32_t>>& undirected,
    std::vector<NodeType> types) {
  MeshGraph m;
  m.positions = std::move(pos);
  m.dim = dim;
  m.node_type = std::move(types);
  if (m.node_type.empty()) m.node_type.assign(m.positions.size(), NodeType::Normal);
  m.edges.reserve(undirected.size() * 2);
  for (auto [a, b] : undirected) {
    m.edges.emplace_back(a, b);
    m.edges.emplace_back(b, a);
  }
  m.check_valid();
  return m;
}

void MeshGraph::check_valid() const {
  size_t n = num_nodes();
  if (node_type.size() != n)
    throw std::invalid_argument("MeshGraph: node_type size != num_nodes");
  std::set<std::pair<uint32_t, uint32_t>> seen;
  for (auto [s, r] : edges) {
    if (s >= n || r >= n) {
      std::ostringstream os;
      os << "MeshGraph: edge (" << s << "," << r << ") out of range for " << n
         << " nodes";
      throw std::invalid_argument(os.str());
    }
    if (s == r) throw std::invalid_argument("MeshGraph: self-loop in edge list");
    seen.insert({s, r});
  }
  for (auto [s, r] : edges)
    if (!seen.count({r, s}))
      throw std::invalid_argument("MeshGraph: edge list not symmetric");
}

bool Adjacency::has_edge(uint32_t i, uint32_t j) const {
  auto b = cols.begin() + offsets[i], e = cols.begin() + offsets[i + 1];
  return std::binary_search(b, e, j);
}

Adjacency build_adjacency(const MeshGraph& mesh) {
  mesh.check_valid();
  size_t n = mesh.num_nodes();
  std::vector<std::vector<uint32_t>> nbrs(n);
  for (auto [s, r] : mesh.edges) nbrs[s].push_back(r);
  Adjacency adj;
  adj.n = n;
  adj.offsets.assign(n + 1, 0);
  for (size_t i = 0; i < n; ++i) {
    auto& v = nbrs[i];
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    adj.offsets[i + 1] = adj.offsets[i] + v.size();
  }
  adj.cols.reserve(adj.offsets[n]);
  adj.degree.resize(n);
  for (size_t i = 0; i < n; ++i) {
    adj.degree[i] = static_cast<uint32_t>(nbrs[i].size());
    adj.cols.insert(adj.cols.end(), nbrs[i].begin(), nbrs[i].end());
  }
  return adj;
}

std::vector<uint32_t> neighborhood(const Adjacency& adj, uint32_t i) {
  if (i >= adj.n) throw std::invalid_argument("neighborhood: node index out of range");
  return {adj.cols.begin() + adj.offsets[i], adj.cols.begin() + adj.offsets[i + 1]};
}

std::vector<uint32_t> neighborhood(const MeshGraph& mesh, uint32_t i) {
  if (i >= mesh.num_nodes())
    throw std::invalid_argument("neighborhood: node index out of range");
  std::vector<uint32_t> out;
  for (auto [s, r] : mesh.edges)
    if (s == i) out.push_back(r);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

MeshGraph add_jumpers(const MeshGraph& mesh, size_t count, uint64_t seed) {
  MeshGraph out = mesh;
  if (count == 0) return out;
  size_t n = mesh.num_nodes();
  Adjacency adj = build_adjacency(mesh);
  size_t existing = mesh.num_undirected_edges();
  size_t total_pairs = n * (n - 1) / 2;
  size_t available = total_pairs - existing;
  if (count > available) {
    std::ostringstream os;
    os << "add_jumpers: requested " << count << " jumpers but only " << available
       << " non-adjacent pairs exist";
    throw std::invalid_argument(os.str());
  }

  std::mt19937_64 rng(seed);
  std::set<std::pair<uint32_t, uint32_t>> chosen;
  if (count * 2 > available) {
    // Dense case: enumerate candidates and take a seeded shuffle prefix.
    std::vector<std::pair<uint32_t, uint32_t>> cand;
    cand.reserve(available);
    for (uint32_t i = 0; i < n; ++i)
      for (uint32_t j = i + 1; j < n; ++j)
        if (!adj.has_edge(i, j)) cand.emplace_back(i, j);
    std::shuffle(cand.begin(), cand.end(), rng);
    chosen.insert(cand.begin(), cand.begin() + count);
  } else {
    std::uniform_int_distribution<uint32_t> pick(0, static_cast<uint32_t>(n - 1));
    while (chosen.size() < count) {
      uint32_t a = pick(rng), b = pick(rng);
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      if (adj.has_edge(a, b)) continue;
      chosen.insert({a, b});
    }
  }
  for (auto [a, b] : chosen) {
    out.edges.emplace_back(a, b);
    out.edges.emplace_back(b, a);
  }
  return out;
}

std::vector<uint32_t> internal_nodes(const MeshGraph& mesh) {
  std::vector<uint32_t> out;
  for (uint32_t i = 0; i < mesh.num_nodes(); ++i)
    if (mesh.node_type[i] == NodeType::Normal) out.push_back(i);
  return out;
}

GeometricContext geometric_context(const MeshGraph& mesh) {
  GeometricContext ctx;
  size_t n = mesh.num_nodes();
  ctx.centered_positions.resize(n);
  std::array<double, 3> mean{0, 0, 0};
  for (const auto& p : mesh.positions)
    for (int a = 0; a < 3; ++a) mean[a] += p[a];
  for (int a = 0; a < 3; ++a) mean[a] /= static_cast<double>(n);
  ctx.mean_position = mean;
  for (size_t i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a)
      ctx.centered_positions[i][a] = mesh.positions[i][a] - mean[a];
  double hmax = 0.0, hmin = std::numeric_limits<double>::infinity();
  for (auto [s, r] : mesh.edges) {
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      double d = mesh.positions[s][a] - mesh.positions[r][a];
      d2 += d * d;
    }
    double d = std::sqrt(d2);
    hmax = std::max(hmax, d);
    hmin = std::min(hmin, d);
  }
  ctx.mesh_size_h = hmax;
  ctx.min_edge_length = mesh.edges.empty() ? 0.0 : hmin;
  return ctx;
}

std::vector<double> node_type_onehot(const MeshGraph& mesh) {
  std::vector<double> out(mesh.num_nodes() * kNumNodeTypes, 0.0);
  for (size_t i = 0; i < mesh.num_nodes(); ++i)
    out[i * kNumNodeTypes + static_cast<size_t>(mesh.node_type[i])] = 1.0;
  return out;
}

std::string node_type_name(NodeType t) {
  switch (t) {
    case NodeType::Normal: return "Normal";
    case NodeType::Inflow: return "Inflow";
    case NodeType::Outflow: return "Outflow";
    case NodeType::Wall: return "Wall";
    case NodeType::Obstacle: return "Obstacle";
  }
  return "?";
}

}  // namespace mrt
