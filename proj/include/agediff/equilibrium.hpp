#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "agediff/diffusion.hpp"
#include "agediff/model.hpp"

namespace agediff {

/// Model-level refusal (preconditions on the data, not numerics).
struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class EquilibriumKind { trivial, homogeneous, shooting };

inline const char* to_string(EquilibriumKind k) {
  switch (k) {
    case EquilibriumKind::trivial: return "trivial";
    case EquilibriumKind::homogeneous: return "homogeneous";
    case EquilibriumKind::shooting: return "shooting";
  }
  return "?";
}

/// Time-independent solution candidate with its measured defect.
struct Equilibrium {
  AgeSpaceField phi;
  SpatialField ubar;
  double residual = 0.0;
  EquilibriumKind kind = EquilibriumKind::trivial;
  bool accepted = true;
  std::string note;
};

/// Residual threshold below which an equilibrium is accepted for linearization.
inline constexpr double default_residual_accept = 1e-4;

/// Mild-formulation defect of phi: the larger of (i) the sup-norm defect of
/// phi(a_{j+1}) against one propagation step of phi(a_j) with death frozen at
/// ubar_phi, and (ii) the sup-norm defect of phi(0) against the birth
/// quadrature. Exactly zero for the trivial equilibrium.
inline double residual(const Equilibrium& eq, const ModelSpec& spec, int n_substeps = 1) {
  const int n_nodes = spec.age.n_nodes();
  const int n_x = spec.spatial.n_x;
  if (eq.phi.rows != n_nodes || eq.phi.cols != n_x)
    throw std::invalid_argument("residual: equilibrium shape does not match the grids");

  double defect = 0.0;
  for (int j = 0; j + 1 < n_nodes; ++j) {
    SpatialField stepped =
        evolve_cell_split(spec.rates.d, &spec.rates.m, eq.ubar, eq.phi.row_copy(j),
                          spec.age.node(j), spec.age.node(j + 1), n_substeps, spec);
    for (int i = 0; i < n_x; ++i)
      defect = std::max(defect, std::abs(eq.phi(j + 1, i) - stepped[i]));
  }

  auto w = age_weights(spec.age);
  for (int i = 0; i < n_x; ++i) {
    double birth = 0.0;
    const double x = spec.spatial.node(i);
    for (int j = 0; j < n_nodes; ++j)
      birth += w[j] * spec.eval_rate(spec.rates.b, eq.ubar[i], spec.age.node(j), x) * eq.phi(j, i);
    defect = std::max(defect, std::abs(eq.phi(0, i) - birth));
  }
  return defect;
}

/// phi == 0, always an equilibrium, residual exactly 0.
inline Equilibrium trivial_equilibrium(const ModelSpec& spec) {
  Equilibrium eq;
  eq.phi = AgeSpaceField(spec.age.n_nodes(), spec.spatial.n_x, 0.0);
  eq.ubar = SpatialField(spec.spatial.n_x, 0.0);
  eq.residual = 0.0;
  eq.kind = EquilibriumKind::trivial;
  eq.accepted = true;
  return eq;
}

/// Net reproduction R(z) = int b(z,a) exp(-int_0^a m(z,s) ds) da for
/// x-independent rates under Neumann conditions, by trapezoid quadrature
/// (cumulative trapezoid in the survival exponent).
inline double net_reproduction_scalar(double z, const ModelSpec& spec) {
  if (spec.spatial.boundary != Boundary::neumann)
    throw ModelError("net_reproduction_scalar requires Neumann boundary conditions");
  if (!rate_is_x_independent(spec, spec.rates.m, spec.z_max) ||
      !rate_is_x_independent(spec, spec.rates.b, spec.z_max))
    throw ModelError("net_reproduction_scalar: x-dependence detected in m or b");

  const double x0 = spec.spatial.node(0);
  const double da = spec.age.delta_a();
  const int n_nodes = spec.age.n_nodes();
  double cumulative_m = 0.0;
  double survival = 1.0;
  double m_prev = spec.eval_rate(spec.rates.m, z, 0.0, x0);
  double r = 0.5 * da * spec.eval_rate(spec.rates.b, z, 0.0, x0);  // j = 0, E = 1
  for (int j = 1; j < n_nodes; ++j) {
    const double a = spec.age.node(j);
    const double m_here = spec.eval_rate(spec.rates.m, z, a, x0);
    cumulative_m += 0.5 * da * (m_prev + m_here);
    m_prev = m_here;
    survival = std::exp(-cumulative_m);
    const double wj = (j + 1 == n_nodes) ? 0.5 * da : da;
    r += wj * spec.eval_rate(spec.rates.b, z, a, x0) * survival;
  }
  return r;
}

/// Spatially homogeneous positive equilibrium: solves R(ubar*) = 1 by bisection
/// on [0, z_max] (R must be strictly monotone and bracket 1), then builds the
/// survival profile phi(a) = phi0 exp(-int_0^a m(ubar*, s) ds) with phi0 fixed
/// so that the weighted total reproduces ubar*.
inline Equilibrium homogeneous_equilibrium(const ModelSpec& spec, int n_substeps = 1) {
  if (spec.spatial.boundary != Boundary::neumann)
    throw ModelError("homogeneous_equilibrium requires Neumann boundary conditions");
  for (const Expr* e : {&spec.rates.m, &spec.rates.b, &spec.rates.rho})
    if (!rate_is_x_independent(spec, *e, spec.z_max))
      throw ModelError("homogeneous_equilibrium: x-dependent rates; use solve_equilibrium");

  auto R = [&](double z) { return net_reproduction_scalar(z, spec); };

  // Strict monotonicity by sampling; either direction is usable for bisection.
  const int n_samples = 33;
  double prev = R(0.0);
  const double r_at_zero = prev;
  int direction = 0;
  for (int k = 1; k < n_samples; ++k) {
    double v = R(spec.z_max * k / (n_samples - 1));
    int s = v > prev ? 1 : (v < prev ? -1 : 0);
    if (s == 0 || (direction != 0 && s != direction))
      throw ModelError("homogeneous_equilibrium: net reproduction is not strictly monotone on [0, z_max]");
    direction = s;
    prev = v;
  }
  const double r_at_max = prev;

  if ((r_at_zero - 1.0) * (r_at_max - 1.0) >= 0.0) {
    if (direction < 0 && r_at_zero <= 1.0)
      throw ModelError("homogeneous_equilibrium: no positive homogeneous equilibrium (R(0) <= 1)");
    if (direction > 0 && r_at_zero >= 1.0)
      throw ModelError("homogeneous_equilibrium: no positive homogeneous equilibrium (R(0) >= 1)");
    throw ModelError("homogeneous_equilibrium: net reproduction does not bracket 1 on [0, z_max]");
  }

  double lo = 0.0, hi = spec.z_max;
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    mid = 0.5 * (lo + hi);
    double rm = R(mid);
    if (std::abs(rm - 1.0) <= 1e-12) break;
    const bool go_right = direction < 0 ? (rm > 1.0) : (rm < 1.0);
    (go_right ? lo : hi) = mid;
    if (hi - lo <= 1e-15 * std::max(1.0, std::abs(mid))) break;
  }
  const double ubar_star = mid;

  // Survival profile at the critical total.
  const double x0 = spec.spatial.node(0);
  const double da = spec.age.delta_a();
  const int n_nodes = spec.age.n_nodes();
  std::vector<double> survival(n_nodes, 1.0);
  double cumulative_m = 0.0;
  double m_prev = spec.eval_rate(spec.rates.m, ubar_star, 0.0, x0);
  for (int j = 1; j < n_nodes; ++j) {
    double m_here = spec.eval_rate(spec.rates.m, ubar_star, spec.age.node(j), x0);
    cumulative_m += 0.5 * da * (m_prev + m_here);
    m_prev = m_here;
    survival[j] = std::exp(-cumulative_m);
  }

  auto w = age_weights(spec.age);
  double weighted_survival = 0.0;
  for (int j = 0; j < n_nodes; ++j)
    weighted_survival += w[j] * spec.eval_rate(spec.rates.rho, 0.0, spec.age.node(j), x0) * survival[j];
  if (!(weighted_survival > 0.0))
    throw ModelError("homogeneous_equilibrium: weight rho annihilates the survival profile");
  const double phi0 = ubar_star / weighted_survival;

  Equilibrium eq;
  eq.kind = EquilibriumKind::homogeneous;
  eq.phi = AgeSpaceField(n_nodes, spec.spatial.n_x);
  for (int j = 0; j < n_nodes; ++j)
    for (int i = 0; i < spec.spatial.n_x; ++i) eq.phi(j, i) = phi0 * survival[j];
  eq.ubar = weighted_total(eq.phi, spec);
  eq.residual = residual(eq, spec, n_substeps);
  eq.accepted = eq.residual <= default_residual_accept;
  if (!eq.accepted) eq.note = "residual above acceptance threshold";
  return eq;
}

}  // namespace agediff
