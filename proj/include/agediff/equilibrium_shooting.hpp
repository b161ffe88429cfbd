#pragma once

#include <cmath>
#include <string>

#include "agediff/equilibrium.hpp"
#include "agediff/linearization.hpp"
#include "agediff/spectral.hpp"

namespace agediff {

struct ShootingOptions {
  int n_substeps = 1;
  int max_inner_iterations = 200;
  double damping = 0.5;
  double inner_tol = 1e-10;       // fixed-point tolerance on the total
  double r_tol = 1e-8;            // bisection target |r(Q0) - 1|
  int max_bisections = 100;
  double accept_residual = default_residual_accept;
};

namespace detail {

struct AmplitudeState {
  AgeSpaceField phi;
  SpatialField ubar;
  double r = 0.0;  // r(Q0) at the converged frozen total
};

/// Inner damped fixed point at fixed amplitude s: Perron vector of Q0 frozen
/// at the current total, propagate it (with death frozen at the same total),
/// recompute the total, damp, repeat.
inline AmplitudeState amplitude_fixed_point(double s, const ModelSpec& spec,
                                            const SpatialField& ubar_start,
                                            const ShootingOptions& opts) {
  const int n_x = spec.spatial.n_x;
  const int n_nodes = spec.age.n_nodes();
  const auto w_age = age_weights(spec.age);
  const AgeSpaceField rho = rho_grid(spec);

  AmplitudeState st;
  SpatialField ubar = ubar_start;

  for (int it = 0; it < opts.max_inner_iterations; ++it) {
    LinearizedModel frozen = freeze_state(ubar, spec);
    LinearizedAssembler as(frozen, spec, opts.n_substeps);
    PowerIterationResult perron = perron_power_iteration(as.Q(0.0));
    Eigen::VectorXd v = perron.vec;
    const double vmax = v.maxCoeff();
    if (!(vmax > 0.0)) throw NumericalError("amplitude shooting: Perron vector not positive");
    v /= vmax;  // normalized to max 1

    AgeSpaceField phi(n_nodes, n_x);
    SpatialField row(n_x);
    for (int i = 0; i < n_x; ++i) row[i] = s * v[i];
    phi.set_row(0, row);
    for (int j = 0; j + 1 < n_nodes; ++j) {
      row = evolve_cell_split(spec.rates.d, &spec.rates.m, ubar, row, spec.age.node(j),
                              spec.age.node(j + 1), opts.n_substeps, spec);
      phi.set_row(j + 1, row);
    }

    SpatialField ubar_new = weighted_total(phi, rho, w_age);
    double change = 0.0, scale = 1.0;
    for (int i = 0; i < n_x; ++i) {
      change = std::max(change, std::abs(ubar_new[i] - ubar[i]));
      scale = std::max(scale, std::abs(ubar_new[i]));
    }
    if (change <= opts.inner_tol * scale) {
      st.phi = std::move(phi);
      st.ubar = std::move(ubar_new);
      st.r = spectral_radius(LinearizedAssembler(freeze_state(st.ubar, spec), spec,
                                                 opts.n_substeps)
                                 .Q(0.0));
      return st;
    }
    for (int i = 0; i < n_x; ++i)
      ubar[i] = (1.0 - opts.damping) * ubar[i] + opts.damping * ubar_new[i];
  }
  throw NumericalError("amplitude shooting: inner fixed point did not converge");
}

}  // namespace detail

/// General equilibrium by amplitude shooting: bisects the amplitude s on the
/// scalar map s -> r(Q0(ubar(s))) - 1 over a sign-changing bracket, with a
/// damped inner fixed point at each s. The result is accepted only through
/// the measured residual, never by iteration count.
inline Equilibrium solve_equilibrium(const ModelSpec& spec, double s_lo, double s_hi,
                                     ShootingOptions opts = {}) {
  if (s_lo == 0.0 && s_hi == 0.0) return trivial_equilibrium(spec);
  if (!(s_lo >= 0.0) || !(s_hi > s_lo))
    throw std::invalid_argument("solve_equilibrium: need 0 <= s_lo < s_hi");

  SpatialField warm(spec.spatial.n_x, 0.0);
  detail::AmplitudeState lo_state = detail::amplitude_fixed_point(s_lo, spec, warm, opts);
  detail::AmplitudeState hi_state = detail::amplitude_fixed_point(s_hi, spec, lo_state.ubar, opts);
  double f_lo = lo_state.r - 1.0;
  double f_hi = hi_state.r - 1.0;
  if (f_lo * f_hi >= 0.0)
    throw std::invalid_argument(
        "solve_equilibrium: bracket invalid, r(Q0) - 1 does not change sign over [s_lo, s_hi]");

  detail::AmplitudeState mid_state = lo_state;
  double s_mid = s_lo;
  SpatialField ubar_warm = lo_state.ubar;
  for (int it = 0; it < opts.max_bisections; ++it) {
    s_mid = 0.5 * (s_lo + s_hi);
    mid_state = detail::amplitude_fixed_point(s_mid, spec, ubar_warm, opts);
    ubar_warm = mid_state.ubar;
    const double f_mid = mid_state.r - 1.0;
    if (std::abs(f_mid) <= opts.r_tol) break;
    if (f_mid * f_lo > 0.0) {
      s_lo = s_mid;
      f_lo = f_mid;
    } else {
      s_hi = s_mid;
    }
    if (s_hi - s_lo <= 1e-14 * std::max(1.0, s_hi)) break;
  }

  Equilibrium eq;
  eq.kind = EquilibriumKind::shooting;
  eq.phi = std::move(mid_state.phi);
  eq.ubar = std::move(mid_state.ubar);
  eq.residual = residual(eq, spec, opts.n_substeps);
  eq.accepted = eq.residual <= opts.accept_residual;
  if (!eq.accepted)
    eq.note = "shooting residual " + std::to_string(eq.residual) + " above acceptance threshold";
  return eq;
}

}  // namespace agediff
