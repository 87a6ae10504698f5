#include "mrt/theory.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mrt/synthetic.hpp"

namespace mrt {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegeneracyFactor = 1e-12;

void fill_moment(WlsStencil& st) {
  int d = st.dim;
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      double m = 0.0;
      for (size_t k = 0; k < st.size(); ++k)
        m += st.weights[k] * st.offsets[k * d + a] * st.offsets[k * d + b];
      st.moment[a * d + b] = m;
    }
  Eigen::MatrixXd M(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) M(a, b) = st.moment[a * d + b];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
  st.eig_min = es.eigenvalues().minCoeff();
  st.eig_max = es.eigenvalues().maxCoeff();
}

}  // namespace

WlsStencil make_stencil(const std::vector<double>& offsets, int dim, double h,
                        WlsWeighting weighting) {
  if (dim != 2 && dim != 3)
    throw std::invalid_argument("make_stencil: dim must be 2 or 3");
  if (offsets.empty() || offsets.size() % static_cast<size_t>(dim) != 0)
    throw std::invalid_argument("make_stencil: offset list size mismatch");
  WlsStencil st;
  st.dim = dim;
  st.offsets = offsets;
  st.h = h;
  size_t n = offsets.size() / static_cast<size_t>(dim);
  st.weights.assign(n, 0.0);
  if (weighting == WlsWeighting::uniform) {
    std::fill(st.weights.begin(), st.weights.end(), 1.0 / static_cast<double>(n));
  } else {
    double total = 0.0;
    for (size_t k = 0; k < n; ++k) {
      double l = 0.0;
      for (int a = 0; a < dim; ++a) l += offsets[k * dim + a] * offsets[k * dim + a];
      st.weights[k] = 1.0 / std::sqrt(l);
      total += st.weights[k];
    }
    for (double& w : st.weights) w /= total;
  }
  fill_moment(st);
  return st;
}

WlsStencil mesh_stencil(const MeshGraph& mesh, const GeometricContext& geo, uint32_t i,
                        WlsWeighting weighting) {
  auto nbrs = neighborhood(mesh, i);
  std::vector<double> offs;
  offs.reserve(nbrs.size() * mesh.dim);
  for (uint32_t j : nbrs)
    for (int a = 0; a < mesh.dim; ++a)
      offs.push_back(mesh.positions[j][a] - mesh.positions[i][a]);
  return make_stencil(offs, mesh.dim, geo.mesh_size_h, weighting);
}

std::vector<double> wls_gradient(const std::vector<double>& value_diffs,
                                 const WlsStencil& st) {
  if (value_diffs.size() != st.size())
    throw std::invalid_argument("wls_gradient: value count != stencil size");
  double floor = kDegeneracyFactor * st.h * st.h;
  if (st.eig_min <= floor) {
    std::ostringstream os;
    os << "wls_gradient: degenerate stencil, min eigenvalue " << st.eig_min
       << " below " << floor;
    throw std::invalid_argument(os.str());
  }
  int d = st.dim;
  Eigen::MatrixXd M(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) M(a, b) = st.moment[a * d + b];
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
  for (size_t k = 0; k < st.size(); ++k)
    for (int a = 0; a < d; ++a)
      rhs(a) += st.weights[k] * st.offsets[k * d + a] * value_diffs[k];
  Eigen::VectorXd g = M.ldlt().solve(rhs);
  std::vector<double> out(d);
  for (int a = 0; a < d; ++a) out[a] = g(a);
  return out;
}

AssumptionReport check_assumption(const WlsStencil& st) {
  AssumptionReport rep;
  double h2 = st.h * st.h;
  rep.c0_hat = st.eig_min / h2;
  rep.c1_hat = st.eig_max / h2;
  rep.satisfied = st.eig_min > kDegeneracyFactor * h2;
  return rep;
}

WlsGradientOperator build_wls_operator(const MeshGraph& mesh, WlsWeighting weighting) {
  GeometricContext geo = geometric_context(mesh);
  size_t n = mesh.num_nodes();
  int d = mesh.dim;
  WlsGradientOperator op;
  op.dim = d;
  op.matrix.rows = n * static_cast<size_t>(d);
  op.matrix.cols = n;
  op.matrix.offsets.assign(op.matrix.rows + 1, 0);

  // Row coefficients: grad_a(i) = sum_j G[a][k] (v_j - v_i), so column j gets
  // G[a][k] and column i the negated sum.
  std::vector<std::vector<std::pair<uint32_t, double>>> rows(op.matrix.rows);
  Adjacency adj = build_adjacency(mesh);
  double floor = kDegeneracyFactor * geo.mesh_size_h * geo.mesh_size_h;
  for (uint32_t i = 0; i < n; ++i) {
    if (adj.degree[i] == 0) {
      ++op.skipped;
      continue;
    }
    WlsStencil st = mesh_stencil(mesh, geo, i, weighting);
    if (st.eig_min <= floor) {
      ++op.skipped;
      continue;
    }
    Eigen::MatrixXd M(d, d);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) M(a, b) = st.moment[a * d + b];
    Eigen::MatrixXd Minv = M.inverse();
    auto nbrs = neighborhood(adj, i);
    for (int a = 0; a < d; ++a) {
      auto& row = rows[i * static_cast<size_t>(d) + a];
      double self = 0.0;
      for (size_t k = 0; k < nbrs.size(); ++k) {
        double coef = 0.0;
        for (int b = 0; b < d; ++b)
          coef += Minv(a, b) * st.weights[k] * st.offsets[k * d + b];
        row.emplace_back(nbrs[k], coef);
        self -= coef;
      }
      row.emplace_back(i, self);
    }
  }
  for (size_t r = 0; r < op.matrix.rows; ++r)
    op.matrix.offsets[r + 1] = op.matrix.offsets[r] + rows[r].size();
  op.matrix.col.reserve(op.matrix.offsets.back());
  op.matrix.w.reserve(op.matrix.offsets.back());
  for (auto& row : rows)
    for (auto [c, w] : row) {
      op.matrix.col.push_back(c);
      op.matrix.w.push_back(w);
    }
  return op;
}

Theorem1Report theorem1_bound_check(const std::vector<size_t>& mesh_points,
                                    const std::vector<double>& eps_levels,
                                    uint64_t seed) {
  auto u = [](double x, double y) { return std::sin(kPi * x) * std::sin(kPi * y); };
  auto ux = [](double x, double y) { return kPi * std::cos(kPi * x) * std::sin(kPi * y); };
  auto uy = [](double x, double y) { return kPi * std::sin(kPi * x) * std::cos(kPi * y); };
  // |u|_C2 for sin(pi x) sin(pi y): second derivatives bounded by pi^2.
  double u_c2 = kPi * kPi;

  Theorem1Report rep;
  std::vector<double> consistency_h, consistency_lhs;
  for (size_t mp = 0; mp < mesh_points.size(); ++mp) {
    MeshGraph mesh = generate_mesh(mesh_points[mp], seed + mp);
    GeometricContext geo = geometric_context(mesh);
    Adjacency adj = build_adjacency(mesh);
    size_t n = mesh.num_nodes();

    std::mt19937_64 rng(seed * 733 + mp);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> center_noise(n), patch_noise;
    for (double& v : center_noise) v = gauss(rng);

    for (double eps : eps_levels) {
      double lhs = 0.0;
      size_t counted = 0;
      std::mt19937_64 prng(seed * 7741 + mp);
      for (uint32_t i = 0; i < n; ++i) {
        if (adj.degree[i] < 2) continue;
        WlsStencil st = mesh_stencil(mesh, geo, i);
        if (st.eig_min <= kDegeneracyFactor * st.h * st.h) continue;
        auto nbrs = neighborhood(adj, i);
        double xi = mesh.positions[i][0], yi = mesh.positions[i][1];
        // Predicted patch: v_i = u_i + eps*xi_i, v_j = u_j + eps*xi_{j|i}.
        std::vector<double> diffs(nbrs.size());
        for (size_t k = 0; k < nbrs.size(); ++k) {
          double xj = mesh.positions[nbrs[k]][0], yj = mesh.positions[nbrs[k]][1];
          double vj = u(xj, yj) + eps * gauss(prng);
          double vi = u(xi, yi) + eps * center_noise[i];
          diffs[k] = vj - vi;
        }
        auto g = wls_gradient(diffs, st);
        double ex = g[0] - ux(xi, yi), ey = g[1] - uy(xi, yi);
        lhs += ex * ex + ey * ey;
        ++counted;
      }
      lhs /= static_cast<double>(counted);
      Theorem1Cell cell;
      cell.h = geo.mesh_size_h;
      cell.eps = eps;
      cell.lhs = lhs;
      cell.rhs_basis = eps * eps / (geo.mesh_size_h * geo.mesh_size_h) +
                       geo.mesh_size_h * geo.mesh_size_h * u_c2 * u_c2;
      cell.constant = cell.lhs / cell.rhs_basis;
      rep.cells.push_back(cell);
      if (eps == 0.0) {
        consistency_h.push_back(std::log(geo.mesh_size_h));
        consistency_lhs.push_back(std::log(lhs));
      }
    }
  }
  rep.c_min = rep.cells.front().constant;
  rep.c_max = rep.cells.front().constant;
  for (const auto& c : rep.cells) {
    rep.c_min = std::min(rep.c_min, c.constant);
    rep.c_max = std::max(rep.c_max, c.constant);
  }
  rep.constant_stable = rep.c_max / rep.c_min < 10.0;
  if (consistency_h.size() >= 2) {
    // Least-squares slope of log(lhs) against log(h).
    double mx = 0, my = 0;
    for (size_t i = 0; i < consistency_h.size(); ++i) {
      mx += consistency_h[i];
      my += consistency_lhs[i];
    }
    mx /= consistency_h.size();
    my /= consistency_h.size();
    double num = 0, den = 0;
    for (size_t i = 0; i < consistency_h.size(); ++i) {
      num += (consistency_h[i] - mx) * (consistency_lhs[i] - my);
      den += (consistency_h[i] - mx) * (consistency_h[i] - mx);
    }
    rep.consistency_slope = num / den;
  }
  return rep;
}

std::complex<double> amplification(double theta, std::complex<double> z) {
  std::complex<double> denom = 1.0 - theta * z;
  if (std::abs(denom) == 0.0)
    throw std::invalid_argument("amplification: pole at 1 - theta*z = 0");
  return (1.0 + (1.0 - theta) * z) / denom;
}

StabilityGrid stability_region(double theta, size_t nx, size_t ny, double extent) {
  StabilityGrid grid;
  grid.nx = nx;
  grid.ny = ny;
  grid.re_min = -extent;
  grid.re_max = 0.0;
  grid.im_min = -extent;
  grid.im_max = extent;
  grid.stable.assign(nx * ny, 0);
  for (size_t ix = 0; ix < nx; ++ix) {
    double re = grid.re_min + (grid.re_max - grid.re_min) * static_cast<double>(ix) /
                                  static_cast<double>(nx - 1);
    for (size_t iy = 0; iy < ny; ++iy) {
      double im = grid.im_min + (grid.im_max - grid.im_min) * static_cast<double>(iy) /
                                    static_cast<double>(ny - 1);
      std::complex<double> r = amplification(theta, {re, im});
      grid.stable[ix * ny + iy] = std::abs(r) <= 1.0 ? 1 : 0;
    }
  }
  return grid;
}

double identity_check(double theta, std::complex<double> z) {
  double a = z.real(), b = z.imag();
  double den = (1.0 - theta * a) * (1.0 - theta * a) + theta * theta * b * b;
  double num = (1.0 + (1.0 - theta) * a) * (1.0 + (1.0 - theta) * a) +
               (1.0 - theta) * (1.0 - theta) * b * b;
  double closed = -2.0 * a + (2.0 * theta - 1.0) * (a * a + b * b);
  return std::abs((den - num) - closed);
}

}  // namespace mrt
