#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>

#include "mrt/synthetic.hpp"
#include "mrt/theory.hpp"

using namespace mrt;

TEST_CASE("wls gradient: exact on linear fields, zero on constants") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int rep = 0; rep < 50; ++rep) {
    size_t n = 3 + rep % 4;
    std::vector<double> offs;
    for (size_t k = 0; k < n; ++k) {
      offs.push_back(0.08 * u(rng));
      offs.push_back(0.08 * u(rng));
    }
    WlsStencil st = make_stencil(offs, 2, 0.1);
    if (st.eig_min < 1e-10 * st.h * st.h) continue;
    double ax = u(rng), ay = u(rng);
    std::vector<double> lin(n), con(n, 0.0);
    for (size_t k = 0; k < n; ++k) lin[k] = ax * offs[k * 2] + ay * offs[k * 2 + 1];
    auto g = wls_gradient(lin, st);
    CHECK(std::abs(g[0] - ax) < 1e-10);
    CHECK(std::abs(g[1] - ay) < 1e-10);
    auto gz = wls_gradient(con, st);
    CHECK(std::abs(gz[0]) < 1e-12);
    CHECK(std::abs(gz[1]) < 1e-12);
  }
}

TEST_CASE("wls gradient: quadratic field error is first order in h") {
  std::vector<double> hs = {0.1, 0.05, 0.025};
  std::vector<double> errs;
  auto u = [](double x, double y) { return 1.5 * x * x - x * y + 2.0 * y * y; };
  for (double h : hs) {
    std::vector<double> offs;
    for (int k = 0; k < 6; ++k) {
      double ang = 2.0 * 3.14159265358979323846 * k / 6.0 + 0.4;
      double r = h * (0.6 + 0.4 * ((k * 31 % 7) / 7.0));
      offs.push_back(r * std::cos(ang));
      offs.push_back(r * std::sin(ang));
    }
    WlsStencil st = make_stencil(offs, 2, h);
    std::vector<double> diffs(6);
    for (int k = 0; k < 6; ++k) diffs[k] = u(offs[k * 2], offs[k * 2 + 1]) - u(0, 0);
    auto g = wls_gradient(diffs, st);
    errs.push_back(std::hypot(g[0], g[1]));  // exact gradient at origin is 0
  }
  double slope = std::log(errs.front() / errs.back()) / std::log(hs.front() / hs.back());
  CHECK(slope >= 0.9);
  double slope_sq = std::log(errs.front() * errs.front() /
                             (errs.back() * errs.back())) /
                    std::log(hs.front() / hs.back());
  CHECK(slope_sq >= 1.8);
}

TEST_CASE("wls gradient: degenerate stencil errors with the eigenvalue") {
  std::vector<double> collinear = {0.1, 0.0, -0.1, 0.0, 0.2, 0.0};
  WlsStencil st = make_stencil(collinear, 2, 0.2);
  CHECK_THROWS_WITH_AS(wls_gradient({1, 2, 3}, st),
                       doctest::Contains("eigenvalue"), std::invalid_argument);
}

TEST_CASE("check_assumption: symmetric cross stencil gives c0 = c1 = 1/2") {
  double h = 0.3;
  std::vector<double> offs = {h, 0, -h, 0, 0, h, 0, -h};
  WlsStencil st = make_stencil(offs, 2, h);
  AssumptionReport rep = check_assumption(st);
  CHECK(rep.c0_hat == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rep.c1_hat == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rep.satisfied);

  // Collinear: rank deficient, not satisfied.
  WlsStencil bad = make_stencil({h, 0, -h, 0}, 2, h);
  AssumptionReport brep = check_assumption(bad);
  CHECK(brep.c0_hat == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(!brep.satisfied);
}

TEST_CASE("check_assumption: triangulation stencils are uniformly nondegenerate") {
  MeshGraph mesh = generate_mesh(300, 5);
  GeometricContext geo = geometric_context(mesh);
  Adjacency adj = build_adjacency(mesh);
  size_t satisfied = 0, total = 0;
  double min_c0 = 1e30;
  for (uint32_t i = 0; i < mesh.num_nodes(); ++i) {
    if (adj.degree[i] < 3) continue;
    AssumptionReport rep = check_assumption(mesh_stencil(mesh, geo, i));
    ++total;
    if (rep.satisfied) {
      ++satisfied;
      min_c0 = std::min(min_c0, rep.c0_hat);
    }
  }
  CHECK(satisfied == total);
  CHECK(min_c0 > 1e-4);  // bounded away from zero
}

TEST_CASE("eigenvalue sandwich: c0 h^2 |v|^2 <= v^T M v <= c1 h^2 |v|^2") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> offs;
  for (int k = 0; k < 6; ++k) {
    offs.push_back(0.12 * u(rng));
    offs.push_back(0.12 * u(rng));
  }
  WlsStencil st = make_stencil(offs, 2, 0.15);
  AssumptionReport rep = check_assumption(st);
  double h2 = st.h * st.h;
  for (int rep_i = 0; rep_i < 100; ++rep_i) {
    double v0 = u(rng), v1 = u(rng);
    double quad = st.moment[0] * v0 * v0 + 2 * st.moment[1] * v0 * v1 +
                  st.moment[3] * v1 * v1;
    double norm2 = v0 * v0 + v1 * v1;
    CHECK(quad >= rep.c0_hat * h2 * norm2 - 1e-12);
    CHECK(quad <= rep.c1_hat * h2 * norm2 + 1e-12);
  }
}

TEST_CASE("theorem 1: epsilon scaling and exactness on linear fields") {
  Theorem1Report rep = theorem1_bound_check({121, 441}, {0.0, 1e-3, 2e-3}, 3);
  // Doubling epsilon at fixed h raises the LHS by at most ~4x (+ margin).
  for (size_t mp = 0; mp < 2; ++mp) {
    const Theorem1Cell& c1 = rep.cells[mp * 3 + 1];
    const Theorem1Cell& c2 = rep.cells[mp * 3 + 2];
    CHECK(c2.lhs <= 4.0 * 1.25 * c1.lhs);
  }
  CHECK(rep.constant_stable);

  // Linear u with zero perturbation: LHS is exactly zero (to roundoff).
  MeshGraph mesh = generate_mesh(150, 9);
  GeometricContext geo = geometric_context(mesh);
  Adjacency adj = build_adjacency(mesh);
  double worst = 0.0;
  for (uint32_t i = 0; i < mesh.num_nodes(); ++i) {
    if (adj.degree[i] < 3) continue;
    WlsStencil st = mesh_stencil(mesh, geo, i);
    if (!check_assumption(st).satisfied) continue;
    auto nbrs = neighborhood(adj, i);
    std::vector<double> diffs(nbrs.size());
    for (size_t k = 0; k < nbrs.size(); ++k)
      diffs[k] = 2.0 * (mesh.positions[nbrs[k]][0] - mesh.positions[i][0]) -
                 0.7 * (mesh.positions[nbrs[k]][1] - mesh.positions[i][1]);
    auto g = wls_gradient(diffs, st);
    worst = std::max({worst, std::abs(g[0] - 2.0), std::abs(g[1] + 0.7)});
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("amplification: formula values and pole") {
  CHECK(amplification(0.0, {-0.5, 0.25}) ==
        std::complex<double>(0.5, 0.25));  // 1 + z exactly
  auto r = amplification(0.5, {-2.0, 0.0});
  CHECK(std::abs(r) < 1e-15);
  CHECK(std::abs(amplification(1.0, {-1e6, 0.0})) ==
        doctest::Approx(1.0 / (1.0 + 1e6)).epsilon(1e-12));
  CHECK_THROWS_AS(amplification(0.5, {2.0, 0.0}), std::invalid_argument);
}

TEST_CASE("stability regions: A-stability for theta >= 1/2, Euler disk") {
  for (double theta : {0.5, 0.75, 1.0}) {
    StabilityGrid g = stability_region(theta, 101, 101);
    for (size_t ix = 0; ix < g.nx; ++ix) {
      double re = g.re_min + (g.re_max - g.re_min) * ix / double(g.nx - 1);
      for (size_t iy = 0; iy < g.ny; ++iy) {
        double im = g.im_min + (g.im_max - g.im_min) * iy / double(g.ny - 1);
        std::complex<double> R = amplification(theta, {re, im});
        CHECK(std::abs(R) <= 1.0 + 1e-12);
        CHECK(g.stable[ix * g.ny + iy] == 1);
      }
    }
  }
  // theta = 0: stable exactly on the |1+z| <= 1 disk.
  StabilityGrid g0 = stability_region(0.0, 101, 101);
  for (size_t ix = 0; ix < g0.nx; ++ix) {
    double re = g0.re_min + (g0.re_max - g0.re_min) * ix / double(g0.nx - 1);
    for (size_t iy = 0; iy < g0.ny; ++iy) {
      double im = g0.im_min + (g0.im_max - g0.im_min) * iy / double(g0.ny - 1);
      bool disk = std::abs(std::complex<double>(1.0 + re, im)) <= 1.0;
      CHECK((g0.stable[ix * g0.ny + iy] != 0) == disk);
    }
  }
  // Boundary point z = -2 has |R| = 1 exactly for forward Euler.
  CHECK(std::abs(amplification(0.0, {-2.0, 0.0})) == 1.0);
}

TEST_CASE("theta-difference identity") {
  // Closed forms at special values.
  CHECK(identity_check(0.5, {-1.3, 2.1}) < 1e-12);
  {
    // theta = 1/2: difference reduces to -2a.
    double a = -1.3, b = 2.1;
    double den = (1 - 0.5 * a) * (1 - 0.5 * a) + 0.25 * b * b;
    double num = (1 + 0.5 * a) * (1 + 0.5 * a) + 0.25 * b * b;
    CHECK(den - num == doctest::Approx(-2.0 * a).epsilon(1e-12));
  }
  {
    // a = 0: difference reduces to (2 theta - 1) b^2.
    double theta = 0.8, b = 1.7;
    double den = 1.0 + theta * theta * b * b;
    double num = 1.0 + (1 - theta) * (1 - theta) * b * b;
    CHECK(den - num ==
          doctest::Approx((2 * theta - 1) * b * b).epsilon(1e-12));
  }
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ut(0, 1), uz(-5, 5);
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k)
    worst = std::max(worst, identity_check(ut(rng), {uz(rng), uz(rng)}));
  CHECK(worst < 1e-12);
}

TEST_CASE("wls operator: linear fields map to exact constant gradients") {
  MeshGraph mesh = generate_mesh(80, 13);
  WlsGradientOperator op = build_wls_operator(mesh);
  size_t n = mesh.num_nodes();
  Tape tape;
  std::vector<double> v(n);
  for (size_t i = 0; i < n; ++i)
    v[i] = 3.0 * mesh.positions[i][0] + 0.5 * mesh.positions[i][1];
  DTensor vt = tape.constant(n, 1, v);
  DTensor g = sparse_matmul(op.matrix, vt);
  Adjacency adj = build_adjacency(mesh);
  GeometricContext geo = geometric_context(mesh);
  for (uint32_t i = 0; i < n; ++i) {
    if (adj.degree[i] == 0) continue;
    WlsStencil st = mesh_stencil(mesh, geo, i);
    if (!check_assumption(st).satisfied) continue;  // skipped rows are zero
    CHECK(tape.val(g)[i * 2 + 0] == doctest::Approx(3.0).epsilon(1e-8));
    CHECK(tape.val(g)[i * 2 + 1] == doctest::Approx(0.5).epsilon(1e-8));
  }
}
