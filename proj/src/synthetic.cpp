#include "mrt/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace mrt {

namespace {

// --- Bowyer-Watson Delaunay ---------------------------------------------------

struct Pt {
  double x, y;
};

struct Tri {
  uint32_t a, b, c;
};

double orient(const Pt& a, const Pt& b, const Pt& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

// > 0 when p lies strictly inside the circumcircle of CCW triangle (a,b,c).
double incircle(const Pt& a, const Pt& b, const Pt& c, const Pt& p) {
  double ax = a.x - p.x, ay = a.y - p.y;
  double bx = b.x - p.x, by = b.y - p.y;
  double cx = c.x - p.x, cy = c.y - p.y;
  double ad = ax * ax + ay * ay;
  double bd = bx * bx + by * by;
  double cd = cx * cx + cy * cy;
  return ax * (by * cd - bd * cy) - ay * (bx * cd - bd * cx) +
         ad * (bx * cy - by * cx);
}

std::vector<Tri> delaunay(const std::vector<Pt>& pts) {
  size_t n = pts.size();
  std::vector<Pt> all = pts;
  // Super-triangle comfortably enclosing the unit square.
  all.push_back({-40.0, -40.0});
  all.push_back({80.0, -40.0});
  all.push_back({0.5, 80.0});
  uint32_t s0 = static_cast<uint32_t>(n), s1 = s0 + 1, s2 = s0 + 2;

  std::vector<Tri> tris{{s0, s1, s2}};
  for (uint32_t ip = 0; ip < n; ++ip) {
    const Pt& p = all[ip];
    std::vector<Tri> keep;
    std::map<std::pair<uint32_t, uint32_t>, int> edge_count;
    keep.reserve(tris.size());
    for (const Tri& t : tris) {
      if (incircle(all[t.a], all[t.b], all[t.c], p) > 0.0) {
        auto bump = [&](uint32_t u, uint32_t v) {
          if (u > v) std::swap(u, v);
          edge_count[{u, v}]++;
        };
        bump(t.a, t.b);
        bump(t.b, t.c);
        bump(t.c, t.a);
      } else {
        keep.push_back(t);
      }
    }
    tris.swap(keep);
    for (const auto& [e, cnt] : edge_count) {
      if (cnt != 1) continue;  // interior edge of the cavity
      Tri t{e.first, e.second, ip};
      if (orient(all[t.a], all[t.b], all[t.c]) < 0.0) std::swap(t.b, t.c);
      tris.push_back(t);
    }
  }
  std::vector<Tri> out;
  for (const Tri& t : tris)
    if (t.a < n && t.b < n && t.c < n) out.push_back(t);
  return out;
}

NodeType label_for(double x, double y) {
  if (x == 0.0) return NodeType::Inflow;
  if (x == 1.0) return NodeType::Outflow;
  if (y == 0.0 || y == 1.0) return NodeType::Wall;
  return NodeType::Normal;
}

// Analytic velocity field at unit decay: channel profile plus a vortex from
// the stream function psi = vortex * sin(pi x) sin(pi y).
void base_velocity(const SimParams& p, double x, double y, double& vx, double& vy) {
  constexpr double pi = 3.14159265358979323846;
  vx = p.u0 * 4.0 * y * (1.0 - y) + p.vortex * pi * std::sin(pi * x) * std::cos(pi * y);
  vy = -p.vortex * pi * std::cos(pi * x) * std::sin(pi * y);
}

// --- binary IO helpers ----------------------------------------------------------

void put_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
void put(std::ostream& os, T v) {
  put_bytes(os, &v, sizeof(T));
}

void get_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n)
    throw TrajectoryIoError(TrajIoCode::Truncated, "trajectory file truncated");
}

template <class T>
T get(std::istream& is) {
  T v;
  get_bytes(is, &v, sizeof(T));
  return v;
}

constexpr char kMagic[4] = {'M', 'R', 'T', '1'};
constexpr uint8_t kLittleEndian = 1;
constexpr uint8_t kVersion = 1;

}  // namespace

std::vector<double> Trajectory::step_values(size_t t) const {
  size_t n = num_nodes(), c = schema.num_components();
  std::vector<double> out(n * c);
  for (size_t i = 0; i < n * c; ++i) out[i] = states[t * n * c + i];
  return out;
}

TrajectorySchema advection_diffusion_schema() {
  TrajectorySchema s;
  s.components = {{"vx", true, FieldKind::Velocity},
                  {"vy", true, FieldKind::Velocity},
                  {"s", true, FieldKind::Pressure}};
  return s;
}

MeshGraph generate_mesh(size_t num_points, uint64_t seed) {
  if (num_points < 4)
    throw std::invalid_argument("generate_mesh: need at least 4 points");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jb(-0.2, 0.2), ji(-0.3, 0.3), ju(0.0, 1.0);

  size_t k = 0;
  while ((k + 3) * (k + 3) <= num_points) ++k;  // largest k with (k+2)^2 <= n
  double sp = 1.0 / static_cast<double>(k + 1);

  std::vector<Pt> pts;
  pts.reserve(num_points);
  pts.push_back({0.0, 0.0});
  pts.push_back({1.0, 0.0});
  pts.push_back({1.0, 1.0});
  pts.push_back({0.0, 1.0});
  for (size_t i = 1; i <= k; ++i) {  // boundary, jittered along the edge
    double t0 = (static_cast<double>(i) + jb(rng)) * sp;
    double t1 = (static_cast<double>(i) + jb(rng)) * sp;
    double t2 = (static_cast<double>(i) + jb(rng)) * sp;
    double t3 = (static_cast<double>(i) + jb(rng)) * sp;
    pts.push_back({t0, 0.0});
    pts.push_back({t1, 1.0});
    pts.push_back({0.0, t2});
    pts.push_back({1.0, t3});
  }
  for (size_t i = 1; i <= k; ++i)
    for (size_t j = 1; j <= k; ++j)
      pts.push_back({(static_cast<double>(i) + ji(rng)) * sp,
                     (static_cast<double>(j) + ji(rng)) * sp});

  while (pts.size() < num_points) {  // extras with a spacing guard
    Pt best{0.5, 0.5};
    double best_d = -1.0;
    for (int attempt = 0; attempt < 200; ++attempt) {
      Pt c{0.05 + 0.9 * ju(rng), 0.05 + 0.9 * ju(rng)};
      double dmin = 1e30;
      for (const Pt& q : pts)
        dmin = std::min(dmin, std::hypot(q.x - c.x, q.y - c.y));
      if (dmin > 0.4 * sp) {
        best = c;
        best_d = dmin;
        break;
      }
      if (dmin > best_d) {
        best = c;
        best_d = dmin;
      }
    }
    pts.push_back(best);
  }

  std::vector<Tri> tris = delaunay(pts);
  if (tris.empty())
    throw std::invalid_argument("generate_mesh: degenerate point set");

  std::set<std::pair<uint32_t, uint32_t>> und;
  for (const Tri& t : tris) {
    auto ins = [&](uint32_t a, uint32_t b) {
      if (a > b) std::swap(a, b);
      und.insert({a, b});
    };
    ins(t.a, t.b);
    ins(t.b, t.c);
    ins(t.c, t.a);
  }

  std::vector<std::array<double, 3>> pos(pts.size());
  std::vector<NodeType> types(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) {
    pos[i] = {pts[i].x, pts[i].y, 0.0};
    types[i] = label_for(pts[i].x, pts[i].y);
  }
  return MeshGraph::from_undirected(std::move(pos), 2,
                                    {und.begin(), und.end()}, std::move(types));
}

std::vector<std::vector<double>> simulate_states(const MeshGraph& mesh, size_t steps,
                                                 double delta_t, const SimParams& params,
                                                 uint64_t seed) {
  if (steps < 2) throw std::invalid_argument("simulate: need at least 2 steps");
  size_t n = mesh.num_nodes();
  Adjacency adj = build_adjacency(mesh);

  // Per-edge geometry for the stencil operators.
  std::vector<std::vector<double>> inv_len2(n), dirx(n), diry(n), inv_len(n);
  for (size_t i = 0; i < n; ++i) {
    for (size_t kk = adj.offsets[i]; kk < adj.offsets[i + 1]; ++kk) {
      uint32_t j = adj.cols[kk];
      double dx = mesh.positions[j][0] - mesh.positions[i][0];
      double dy = mesh.positions[j][1] - mesh.positions[i][1];
      double l = std::hypot(dx, dy);
      inv_len2[i].push_back(1.0 / (l * l));
      inv_len[i].push_back(1.0 / l);
      dirx[i].push_back(dx / l);
      diry[i].push_back(dy / l);
    }
  }

  // CFL check at t = 0 (velocity magnitude is maximal there).
  double max_rate = 0.0;
  for (size_t i = 0; i < n; ++i) {
    uint32_t deg = adj.degree[i];
    if (deg == 0) continue;
    double vx, vy;
    base_velocity(params, mesh.positions[i][0], mesh.positions[i][1], vx, vy);
    double vnorm = std::hypot(vx, vy);
    double den = 0.0;
    for (size_t kk = 0; kk < deg; ++kk) {
      double up = std::max(0.0, -(vx * dirx[i][kk] + vy * diry[i][kk]) /
                                     std::max(vnorm, 1e-300));
      den += up * up;
    }
    double adv_rate = 0.0;
    if (den > 1e-12 && vnorm > 0.0) {
      for (size_t kk = 0; kk < deg; ++kk) {
        double up = std::max(0.0, -(vx * dirx[i][kk] + vy * diry[i][kk]) / vnorm);
        adv_rate += vnorm * up * inv_len[i][kk] / den;
      }
    }
    double lap_rate = 0.0;
    for (size_t kk = 0; kk < deg; ++kk) lap_rate += inv_len2[i][kk];
    lap_rate *= params.kappa * 4.0 / static_cast<double>(deg);
    max_rate = std::max(max_rate, adv_rate + lap_rate);
  }
  if (delta_t * max_rate > 0.9) {
    std::ostringstream os;
    os << "simulate: delta_t " << delta_t << " violates the CFL bound; use delta_t <= "
       << 0.9 / max_rate;
    throw std::invalid_argument(os.str());
  }

  // Initial scalar: a few Gaussian blobs.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> upos(0.2, 0.8), uamp(0.5, 1.0),
      uwid(0.05, 0.12);
  struct Blob {
    double x, y, a, w;
  };
  std::vector<Blob> blobs;
  for (int b = 0; b < params.blobs; ++b)
    blobs.push_back({upos(rng), upos(rng), uamp(rng), uwid(rng)});

  std::vector<double> s(n, params.background);
  for (size_t i = 0; i < n; ++i) {
    double x = mesh.positions[i][0], y = mesh.positions[i][1];
    for (const Blob& b : blobs) {
      double d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y);
      s[i] += b.a * std::exp(-d2 / (2.0 * b.w * b.w));
    }
    if (mesh.node_type[i] == NodeType::Inflow) s[i] = params.inflow_scalar;
  }

  std::vector<std::vector<double>> out;
  out.reserve(steps);
  std::vector<double> snew(n);
  for (size_t t = 0; t < steps; ++t) {
    double time = static_cast<double>(t) * delta_t;
    double decay = std::exp(-params.decay * time);
    std::vector<double> state(n * 3);
    for (size_t i = 0; i < n; ++i) {
      double vx, vy;
      base_velocity(params, mesh.positions[i][0], mesh.positions[i][1], vx, vy);
      state[i * 3 + 0] = decay * vx;
      state[i * 3 + 1] = decay * vy;
      state[i * 3 + 2] = s[i];
    }
    out.push_back(std::move(state));
    if (t + 1 == steps) break;

    for (size_t i = 0; i < n; ++i) {
      if (mesh.node_type[i] == NodeType::Inflow) {
        snew[i] = params.inflow_scalar;
        continue;
      }
      uint32_t deg = adj.degree[i];
      if (deg == 0) {
        snew[i] = s[i];
        continue;
      }
      double vx = out.back()[i * 3 + 0], vy = out.back()[i * 3 + 1];
      double vnorm = std::hypot(vx, vy);
      double adv = 0.0;
      if (vnorm > 1e-14) {
        double den = 0.0;
        for (size_t kk = 0; kk < deg; ++kk) {
          double up = std::max(0.0, -(vx * dirx[i][kk] + vy * diry[i][kk]) / vnorm);
          den += up * up;
        }
        if (den > 1e-12) {
          for (size_t kk = 0; kk < deg; ++kk) {
            uint32_t j = adj.cols[adj.offsets[i] + kk];
            double up = std::max(0.0, -(vx * dirx[i][kk] + vy * diry[i][kk]) / vnorm);
            adv += vnorm * up * inv_len[i][kk] / den * (s[j] - s[i]);
          }
        }
      }
      double lap = 0.0;
      for (size_t kk = 0; kk < deg; ++kk) {
        uint32_t j = adj.cols[adj.offsets[i] + kk];
        lap += (s[j] - s[i]) * inv_len2[i][kk];
      }
      lap *= 4.0 / static_cast<double>(deg);
      snew[i] = s[i] + delta_t * (adv + params.kappa * lap);
    }
    s = snew;
  }
  return out;
}

Trajectory simulate(const MeshGraph& mesh, size_t steps, double delta_t,
                    const SimParams& params, uint64_t seed) {
  auto dense = simulate_states(mesh, steps, delta_t, params, seed);
  Trajectory traj;
  traj.mesh = mesh;
  traj.schema = advection_diffusion_schema();
  traj.delta_t = delta_t;
  traj.num_steps = steps;
  traj.states.reserve(steps * mesh.num_nodes() * 3);
  for (const auto& st : dense)
    for (double v : st) traj.states.push_back(static_cast<float>(v));
  traj.inflow.resize(steps);
  for (size_t t = 0; t < steps; ++t)
    traj.inflow[t] = static_cast<float>(
        params.u0 * std::exp(-params.decay * static_cast<double>(t) * delta_t));
  return traj;
}

DatasetSplit generate_dataset(const DatasetConfig& cfg, size_t threads) {
  DatasetSplit split;
  split.seed = cfg.seed;
  size_t total = cfg.train_trajectories + cfg.test_trajectories;
  std::vector<Trajectory> all(total);

  auto make_one = [&](size_t idx) {
    std::mt19937_64 rng(cfg.seed * 7919 + idx);
    std::uniform_real_distribution<double> du0(0.8, 1.2), dvx(0.3, 0.7);
    SimParams p = cfg.params;
    p.u0 = cfg.params.u0 * du0(rng);
    p.vortex = cfg.params.vortex * 2.0 * dvx(rng);
    MeshGraph mesh = generate_mesh(cfg.nodes, cfg.seed * 104729 + idx);
    all[idx] = simulate(mesh, cfg.steps, cfg.dt, p, cfg.seed * 15485863 + idx);
  };

  if (threads <= 1) {
    for (size_t i = 0; i < total; ++i) make_one(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (size_t w = 0; w < threads; ++w)
      pool.emplace_back([&]() {
        for (size_t i = next.fetch_add(1); i < total; i = next.fetch_add(1))
          make_one(i);
      });
    for (auto& th : pool) th.join();
  }
  for (size_t i = 0; i < cfg.train_trajectories; ++i)
    split.train.push_back(std::move(all[i]));
  for (size_t i = 0; i < cfg.test_trajectories; ++i)
    split.test.push_back(std::move(all[cfg.train_trajectories + i]));
  return split;
}

// --- features -------------------------------------------------------------------

FeatureLayout feature_layout(const TrajectorySchema& schema, bool with_history) {
  FeatureLayout l;
  l.onehot_offset = 0;
  l.state_offset = kNumNodeTypes;
  l.num_components = schema.num_components();
  l.inflow_offset = l.state_offset + l.num_components;
  size_t w = l.inflow_offset + 1;
  if (with_history) {
    l.history_offset = static_cast<ptrdiff_t>(w);
    size_t dyn = 0;
    for (const auto& c : schema.components)
      if (c.dynamical) ++dyn;
    w += dyn;
  }
  l.width = w;
  return l;
}

NodeFeatures build_features(const Trajectory& traj, size_t t, bool with_history) {
  if (t >= traj.num_steps)
    throw std::invalid_argument("build_features: step out of range");
  FeatureLayout l = feature_layout(traj.schema, with_history);
  size_t n = traj.num_nodes(), c = traj.schema.num_components();
  NodeFeatures f;
  f.num_nodes = n;
  f.width = l.width;
  f.values.assign(n * l.width, 0.0);
  auto onehot = node_type_onehot(traj.mesh);
  for (size_t i = 0; i < n; ++i) {
    for (size_t k = 0; k < kNumNodeTypes; ++k)
      f.at(i, l.onehot_offset + k) = onehot[i * kNumNodeTypes + k];
    for (size_t k = 0; k < c; ++k) f.at(i, l.state_offset + k) = traj.at(t, i, k);
    f.at(i, l.inflow_offset) = traj.inflow[t];
  }
  if (with_history) {
    auto h = history_feature(traj, t);
    size_t dyn = h.size() / n;
    for (size_t i = 0; i < n; ++i)
      for (size_t k = 0; k < dyn; ++k)
        f.at(i, static_cast<size_t>(l.history_offset) + k) = h[i * dyn + k];
  }
  return f;
}

std::vector<double> history_feature(const Trajectory& traj, size_t t) {
  if (t == 0)
    throw std::invalid_argument("history_feature: no history at step 0");
  size_t n = traj.num_nodes(), c = traj.schema.num_components();
  std::vector<size_t> dyn;
  for (size_t k = 0; k < c; ++k)
    if (traj.schema.components[k].dynamical) dyn.push_back(k);
  std::vector<double> out(n * dyn.size());
  for (size_t i = 0; i < n; ++i)
    for (size_t k = 0; k < dyn.size(); ++k)
      out[i * dyn.size() + k] =
          (static_cast<double>(traj.at(t, i, dyn[k])) -
           static_cast<double>(traj.at(t - 1, i, dyn[k]))) /
          traj.delta_t;
  return out;
}

NodeFeatures add_training_noise(const NodeFeatures& features, const FeatureLayout& layout,
                                const TrajectorySchema& schema, const NoiseSpec& spec,
                                uint64_t seed) {
  if (spec.sigma.size() != schema.num_components())
    throw std::invalid_argument("add_training_noise: sigma count != components");
  for (double s : spec.sigma)
    if (s < 0.0) throw std::invalid_argument("add_training_noise: negative sigma");
  NodeFeatures out = features;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (size_t i = 0; i < features.num_nodes; ++i) {
    for (size_t k = 0; k < schema.num_components(); ++k) {
      if (!schema.components[k].dynamical) continue;
      out.at(i, layout.state_offset + k) += spec.sigma[k] * gauss(rng);
    }
  }
  return out;
}

// --- serialization -----------------------------------------------------------------

void write_trajectory(const std::string& path, const Trajectory& traj) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw TrajectoryIoError(TrajIoCode::WriteFailed, "cannot open " + path);
  put_bytes(os, kMagic, 4);
  put<uint8_t>(os, kLittleEndian);
  put<uint8_t>(os, kVersion);
  put<uint16_t>(os, 0);
  put<uint64_t>(os, traj.mesh.num_nodes());
  put<uint64_t>(os, traj.mesh.edges.size());
  put<uint64_t>(os, traj.num_steps);
  put<uint64_t>(os, traj.schema.num_components());
  put<uint64_t>(os, static_cast<uint64_t>(traj.mesh.dim));
  put<double>(os, traj.delta_t);
  for (const auto& c : traj.schema.components) {
    put<uint32_t>(os, static_cast<uint32_t>(c.name.size()));
    put_bytes(os, c.name.data(), c.name.size());
    put<uint8_t>(os, c.dynamical ? 1 : 0);
    put<uint8_t>(os, static_cast<uint8_t>(c.kind));
  }
  for (const auto& p : traj.mesh.positions)
    for (int a = 0; a < traj.mesh.dim; ++a) put<double>(os, p[a]);
  for (NodeType t : traj.mesh.node_type) put<uint8_t>(os, static_cast<uint8_t>(t));
  for (auto [s, r] : traj.mesh.edges) {
    put<uint32_t>(os, s);
    put<uint32_t>(os, r);
  }
  put_bytes(os, traj.states.data(), traj.states.size() * sizeof(float));
  put_bytes(os, traj.inflow.data(), traj.inflow.size() * sizeof(float));
  if (!os) throw TrajectoryIoError(TrajIoCode::WriteFailed, "write failed: " + path);
}

Trajectory read_trajectory(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw TrajectoryIoError(TrajIoCode::Truncated, "cannot open " + path);
  char magic[4];
  get_bytes(is, magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw TrajectoryIoError(TrajIoCode::BadMagic, "bad magic bytes in " + path);
  uint8_t endian = get<uint8_t>(is);
  if (endian != kLittleEndian)
    throw TrajectoryIoError(TrajIoCode::BadEndianness,
                            "file written with a different endianness flag");
  uint8_t version = get<uint8_t>(is);
  if (version != kVersion)
    throw TrajectoryIoError(TrajIoCode::BadVersion, "unsupported version");
  get<uint16_t>(is);

  uint64_t n = get<uint64_t>(is);
  uint64_t ne = get<uint64_t>(is);
  uint64_t steps = get<uint64_t>(is);
  uint64_t comps = get<uint64_t>(is);
  uint64_t dim = get<uint64_t>(is);
  if (comps == 0 || comps > 64 || dim < 1 || dim > 3)
    throw TrajectoryIoError(TrajIoCode::SchemaMismatch, "implausible header counts");

  Trajectory traj;
  traj.delta_t = get<double>(is);
  traj.num_steps = steps;
  traj.mesh.dim = static_cast<int>(dim);
  for (uint64_t k = 0; k < comps; ++k) {
    uint32_t len = get<uint32_t>(is);
    if (len > 256)
      throw TrajectoryIoError(TrajIoCode::SchemaMismatch, "schema name too long");
    std::string name(len, '\0');
    get_bytes(is, name.data(), len);
    uint8_t dynamical = get<uint8_t>(is);
    uint8_t kind = get<uint8_t>(is);
    if (kind > 2)
      throw TrajectoryIoError(TrajIoCode::SchemaMismatch, "unknown field kind");
    traj.schema.components.push_back(
        {name, dynamical != 0, static_cast<FieldKind>(kind)});
  }
  traj.mesh.positions.resize(n);
  for (uint64_t i = 0; i < n; ++i) {
    traj.mesh.positions[i] = {0, 0, 0};
    for (uint64_t a = 0; a < dim; ++a) traj.mesh.positions[i][a] = get<double>(is);
  }
  traj.mesh.node_type.resize(n);
  for (uint64_t i = 0; i < n; ++i) {
    uint8_t t = get<uint8_t>(is);
    if (t >= kNumNodeTypes)
      throw TrajectoryIoError(TrajIoCode::SchemaMismatch, "unknown node type");
    traj.mesh.node_type[i] = static_cast<NodeType>(t);
  }
  traj.mesh.edges.resize(ne);
  for (uint64_t k = 0; k < ne; ++k) {
    uint32_t s = get<uint32_t>(is);
    uint32_t r = get<uint32_t>(is);
    traj.mesh.edges[k] = {s, r};
  }
  traj.states.resize(steps * n * comps);
  get_bytes(is, traj.states.data(), traj.states.size() * sizeof(float));
  traj.inflow.resize(steps);
  get_bytes(is, traj.inflow.data(), traj.inflow.size() * sizeof(float));
  traj.mesh.check_valid();
  return traj;
}

void save_dataset(const std::string& dir, const DatasetSplit& split) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["seed"] = split.seed;
  manifest["train"] = nlohmann::json::array();
  manifest["test"] = nlohmann::json::array();
  char buf[64];
  for (size_t i = 0; i < split.train.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "train_%03zu.mrt", i);
    write_trajectory((fs::path(dir) / buf).string(), split.train[i]);
    manifest["train"].push_back(buf);
  }
  for (size_t i = 0; i < split.test.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "test_%03zu.mrt", i);
    write_trajectory((fs::path(dir) / buf).string(), split.test[i]);
    manifest["test"].push_back(buf);
  }
  std::ofstream os(fs::path(dir) / "dataset.json");
  os << manifest.dump(2) << "\n";
}

DatasetSplit load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(fs::path(dir) / "dataset.json");
  if (!is)
    throw TrajectoryIoError(TrajIoCode::Truncated, "missing dataset.json in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(is);
  DatasetSplit split;
  split.seed = manifest.value("seed", 0);
  for (const auto& f : manifest["train"])
    split.train.push_back(read_trajectory((fs::path(dir) / f.get<std::string>()).string()));
  for (const auto& f : manifest["test"])
    split.test.push_back(read_trajectory((fs::path(dir) / f.get<std::string>()).string()));
  const TrajectorySchema* ref = nullptr;
  for (const auto& t : split.train) {
    if (!ref) ref = &t.schema;
    else if (!(t.schema == *ref))
      throw TrajectoryIoError(TrajIoCode::SchemaMismatch,
                              "trajectories in " + dir + " have differing schemas");
  }
  for (const auto& t : split.test)
    if (ref && !(t.schema == *ref))
      throw TrajectoryIoError(TrajIoCode::SchemaMismatch,
                              "trajectories in " + dir + " have differing schemas");
  return split;
}

}  // namespace mrt
