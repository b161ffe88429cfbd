#pragma once

#include <cmath>
#include <stdexcept>

#include "agediff/diffusion.hpp"
#include "agediff/equilibrium.hpp"
#include "agediff/model.hpp"

namespace agediff {

/// Frozen linearization data at an equilibrium phi:
///   A_phi(a)    = A(a) - m(ubar_phi, a, x)            (gen_phi)
///   b_phi(a,x)  = b(ubar_phi,a,x) + rho(a,x) c(x),    c = int d1b(ubar_phi,s,x) phi(s,x) ds
///   (B_phi w)(a,x) = g(a,x) * wbar(x),                g = -d1m(ubar_phi,a,x) phi(a,x)
/// All operators act by pointwise multiplication on the spatial grid.
struct LinearizedModel {
  GeneratorSpec gen_phi;
  AgeSpaceField birth_base;       // b(ubar_phi, a_j, x_i)
  SpatialField birth_correction;  // c(x_i)
  AgeSpaceField rho_grid;
  AgeSpaceField kernel_factor;    // g(a_j, x_i)
  SpatialField ubar_phi;
  bool kernel_is_zero = true;
  bool correction_is_zero = true;

  /// Multiplier realizing b_phi(a_j) on the grid.
  double birth_multiplier(int j, int i) const {
    return birth_base(j, i) + rho_grid(j, i) * birth_correction[i];
  }
};

/// Evaluates all frozen fields on the grid. For the trivial equilibrium the
/// correction and the nonlocal kernel are exactly zero arrays.
inline LinearizedModel build_linearization(const Equilibrium& eq, const ModelSpec& spec) {
  if (!eq.accepted)
    throw std::invalid_argument("build_linearization: equilibrium was not accepted (residual too large)");
  const int n_nodes = spec.age.n_nodes();
  const int n_x = spec.spatial.n_x;
  if (eq.phi.rows != n_nodes || eq.phi.cols != n_x)
    throw std::invalid_argument("build_linearization: equilibrium shape does not match the grids");

  LinearizedModel lin;
  lin.gen_phi = GeneratorSpec{spec.rates.d, AbsorbM{spec.rates.m, eq.ubar}};
  lin.ubar_phi = eq.ubar;
  lin.rho_grid = rho_grid(spec);
  lin.birth_base = AgeSpaceField(n_nodes, n_x);
  lin.birth_correction = SpatialField(n_x, 0.0);
  lin.kernel_factor = AgeSpaceField(n_nodes, n_x, 0.0);

  for (int j = 0; j < n_nodes; ++j) {
    const double a = spec.age.node(j);
    for (int i = 0; i < n_x; ++i)
      lin.birth_base(j, i) = spec.eval_rate(spec.rates.b, eq.ubar[i], a, spec.spatial.node(i));
  }

  const bool phi_is_zero = sup_norm(eq.phi) == 0.0;
  if (eq.kind == EquilibriumKind::trivial || phi_is_zero) {
    lin.kernel_is_zero = true;
    lin.correction_is_zero = true;
    return lin;
  }

  auto w = age_weights(spec.age);
  bool kernel_zero = true, correction_zero = true;
  for (int i = 0; i < n_x; ++i) {
    const double x = spec.spatial.node(i);
    double c = 0.0;
    for (int j = 0; j < n_nodes; ++j) {
      const double a = spec.age.node(j);
      c += w[j] * spec.eval_rate(spec.rates.db_dz, eq.ubar[i], a, x) * eq.phi(j, i);
      const double g = -spec.eval_rate(spec.rates.dm_dz, eq.ubar[i], a, x) * eq.phi(j, i);
      lin.kernel_factor(j, i) = g;
      if (g != 0.0) kernel_zero = false;
    }
    lin.birth_correction[i] = c;
    if (c != 0.0) correction_zero = false;
  }
  lin.kernel_is_zero = kernel_zero;
  lin.correction_is_zero = correction_zero;
  return lin;
}

/// Frozen birth/death data at an arbitrary state total (not an equilibrium):
/// base fields evaluated at ubar, correction and kernel exactly zero. Used by
/// the amplitude-shooting iteration.
inline LinearizedModel freeze_state(const SpatialField& ubar, const ModelSpec& spec) {
  if (static_cast<int>(ubar.size()) != spec.spatial.n_x)
    throw std::invalid_argument("freeze_state: total length does not match the grid");
  LinearizedModel lin;
  lin.gen_phi = GeneratorSpec{spec.rates.d, AbsorbM{spec.rates.m, ubar}};
  lin.ubar_phi = ubar;
  lin.rho_grid = rho_grid(spec);
  lin.birth_base = AgeSpaceField(spec.age.n_nodes(), spec.spatial.n_x);
  lin.birth_correction = SpatialField(spec.spatial.n_x, 0.0);
  lin.kernel_factor = AgeSpaceField(spec.age.n_nodes(), spec.spatial.n_x, 0.0);
  for (int j = 0; j < spec.age.n_nodes(); ++j) {
    const double a = spec.age.node(j);
    for (int i = 0; i < spec.spatial.n_x; ++i)
      lin.birth_base(j, i) = spec.eval_rate(spec.rates.b, ubar[i], a, spec.spatial.node(i));
  }
  return lin;
}

/// (B_phi w)(a,x) = g(a,x) * wbar(x), rank one in age per spatial node.
inline AgeSpaceField apply_Bphi(const LinearizedModel& lin, const AgeSpaceField& w,
                                const ModelSpec& spec) {
  if (w.rows != lin.kernel_factor.rows || w.cols != lin.kernel_factor.cols)
    throw std::invalid_argument("apply_Bphi: shape mismatch");
  AgeSpaceField out(w.rows, w.cols, 0.0);
  if (lin.kernel_is_zero) return out;
  SpatialField wbar = weighted_total(w, lin.rho_grid, age_weights(spec.age));
  for (int j = 0; j < w.rows; ++j)
    for (int i = 0; i < w.cols; ++i) out(j, i) = lin.kernel_factor(j, i) * wbar[i];
  return out;
}

/// Linearized age-boundary value: trapezoid of birth_base * w plus the
/// correction times the weighted total of w.
inline SpatialField apply_birth(const LinearizedModel& lin, const AgeSpaceField& w,
                                const ModelSpec& spec) {
  if (w.rows != lin.birth_base.rows || w.cols != lin.birth_base.cols)
    throw std::invalid_argument("apply_birth: shape mismatch");
  auto wa = age_weights(spec.age);
  SpatialField out(w.cols, 0.0);
  for (int j = 0; j < w.rows; ++j) {
    const double* br = lin.birth_base.row(j);
    const double* wr = w.row(j);
    for (int i = 0; i < w.cols; ++i) out[i] += wa[j] * br[i] * wr[i];
  }
  if (!lin.correction_is_zero) {
    SpatialField wbar = weighted_total(w, lin.rho_grid, wa);
    for (int i = 0; i < w.cols; ++i) out[i] += lin.birth_correction[i] * wbar[i];
  }
  return out;
}

}  // namespace agediff
