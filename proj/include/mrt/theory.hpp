#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "mrt/mesh.hpp"
#include "mrt/tensor.hpp"

namespace mrt {

enum class WlsWeighting { uniform, inverse_distance };

/// One-hop weighted least-squares stencil at a node: offset rows B, weights
/// normalized to unit sum, and the moment matrix B^T W B with its extremal
/// eigenvalues.
struct WlsStencil {
  int dim = 2;
  std::vector<double> offsets;  // |N(i)| x dim, rows x_j - x_i
  std::vector<double> weights;  // |N(i)|, nonnegative, sums to 1
  double h = 0.0;               // mesh size used for the spectral bounds
  double moment[9] = {0};       // dim x dim, row major
  double eig_min = 0.0, eig_max = 0.0;

  size_t size() const { return weights.size(); }
};

WlsStencil make_stencil(const std::vector<double>& offsets, int dim, double h,
                        WlsWeighting weighting = WlsWeighting::uniform);
WlsStencil mesh_stencil(const MeshGraph& mesh, const GeometricContext& geo, uint32_t i,
                        WlsWeighting weighting = WlsWeighting::uniform);

/// Closed-form WLS gradient (B^T W B)^{-1} B^T W d of the value differences
/// d_j = v_j - v_center. Errors on degenerate stencils (min eigenvalue below
/// 1e-12 h^2).
std::vector<double> wls_gradient(const std::vector<double>& value_diffs,
                                 const WlsStencil& stencil);

struct AssumptionReport {
  double c0_hat = 0.0;
  double c1_hat = 0.0;
  bool satisfied = false;
};

/// Extremal eigenvalues of the moment matrix divided by h^2, flagging
/// degeneracy against the same 1e-12 h^2 floor.
AssumptionReport check_assumption(const WlsStencil& stencil);

/// Sparse operator mapping per-node values to stacked per-node WLS gradients
/// (rows n*dim). Degenerate stencils contribute zero rows and are counted.
struct WlsGradientOperator {
  CsrMatrix matrix;   // (n*dim) x n
  size_t skipped = 0; // degenerate stencils
  int dim = 2;
};

WlsGradientOperator build_wls_operator(const MeshGraph& mesh,
                                       WlsWeighting weighting = WlsWeighting::uniform);

struct Theorem1Cell {
  double h = 0.0;
  double eps = 0.0;
  double lhs = 0.0;       // mean squared WLS-gradient error of predicted patches
  double rhs_basis = 0.0; // eps^2 / h^2 + h^2 * |u|_C2^2
  double constant = 0.0;  // lhs / rhs_basis
};

struct Theorem1Report {
  std::vector<Theorem1Cell> cells;
  double c_min = 0.0, c_max = 0.0;
  double consistency_slope = 0.0;  // log-log slope of lhs vs h at eps = 0
  bool constant_stable = false;    // c_max / c_min < 10
};

/// Measures the discrete-H1 bound on generated meshes: predictions are the
/// analytic field u = sin(pi x) sin(pi y) plus seeded unit perturbations
/// scaled by eps.
Theorem1Report theorem1_bound_check(const std::vector<size_t>& mesh_points,
                                    const std::vector<double>& eps_levels,
                                    uint64_t seed);

/// theta-method amplification R_theta(z) = (1 + (1-theta) z) / (1 - theta z).
std::complex<double> amplification(double theta, std::complex<double> z);

struct StabilityGrid {
  size_t nx = 0, ny = 0;
  double re_min = -8.0, re_max = 0.0, im_min = -8.0, im_max = 8.0;
  std::vector<uint8_t> stable;  // |R| <= 1 per grid point, row major over (re, im)
};

StabilityGrid stability_region(double theta, size_t nx = 401, size_t ny = 401,
                               double extent = 8.0);

/// Residual of the closed-form identity
/// den^2 - num^2 = -2a + (2 theta - 1)(a^2 + b^2) at z = a + ib.
double identity_check(double theta, std::complex<double> z);

}  // namespace mrt
