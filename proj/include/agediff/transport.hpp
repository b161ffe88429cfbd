#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "agediff/diffusion.hpp"
#include "agediff/linearization.hpp"
#include "agediff/model.hpp"

namespace agediff {

/// Characteristic-aligned time history (dt = da). Norms, birth traces and
/// totals are recorded every step; full field snapshots every stride.
struct Trajectory {
  double dt = 0.0;
  std::vector<double> times;
  std::vector<double> norm_l1sup;
  std::vector<double> norm_l1l2;
  std::vector<double> birth_sup;
  std::vector<SpatialField> birth_series;
  std::vector<SpatialField> totals;
  std::vector<long> snapshot_steps;
  std::vector<AgeSpaceField> snapshots;
  bool blew_up = false;
  long blowup_step = -1;
};

struct StepOptions {
  int n_substeps = 1;
  double sup_cap = 1e12;  // blow-up cap on the sup norm
};

namespace detail {

struct StepperCache {
  AgeSpaceField rho;
  std::vector<double> w_age;
  bool b_depends_on_z;
  bool m_depends_on_z;
  AgeSpaceField b_static;       // b(a_j, x_i) when z-free
  AgeSpaceField death_static;   // exp(-da m(a_j, x_i)) per cell when z-free

  explicit StepperCache(const ModelSpec& spec)
      : rho(rho_grid(spec)),
        w_age(age_weights(spec.age)),
        b_depends_on_z(depends_on_z(spec.rates.b)),
        m_depends_on_z(depends_on_z(spec.rates.m)) {
    if (!b_depends_on_z) {
      b_static = AgeSpaceField(spec.age.n_nodes(), spec.spatial.n_x);
      for (int j = 0; j < b_static.rows; ++j)
        for (int i = 0; i < b_static.cols; ++i)
          b_static(j, i) =
              spec.eval_rate(spec.rates.b, 0.0, spec.age.node(j), spec.spatial.node(i));
    }
    if (!m_depends_on_z) {
      const double da = spec.age.delta_a();
      death_static = AgeSpaceField(spec.age.n_a, spec.spatial.n_x);
      for (int j = 0; j < spec.age.n_a; ++j)
        for (int i = 0; i < spec.spatial.n_x; ++i)
          death_static(j, i) = std::exp(
              -da * spec.eval_rate(spec.rates.m, 0.0, spec.age.node(j), spec.spatial.node(i)));
    }
  }

  double birth_rate(const ModelSpec& spec, double z, int j, int i) const {
    return b_depends_on_z ? spec.eval_rate(spec.rates.b, z, spec.age.node(j), spec.spatial.node(i))
                          : b_static(j, i);
  }
};

/// Closes the age boundary: solves beta(x) = sum_j w_j b(ubar(x),a_j,x) u(j,x)
/// with u(0,.) = beta entering both the quadrature and ubar. Each pass solves
/// the boundary value exactly with b frozen at the current total; passes
/// repeat until stationary to roundoff (the pass map contracts at rate
/// ~ w0 * b << 1).
inline void close_birth_boundary(AgeSpaceField& u, const ModelSpec& spec,
                                 const StepperCache& cache) {
  const int n_x = u.cols;
  const int n_nodes = u.rows;
  const double w0 = cache.w_age[0];
  SpatialField beta(n_x, 0.0);
  for (int pass = 0; pass < 50; ++pass) {
    SpatialField ubar = weighted_total(u, cache.rho, cache.w_age);
    double change = 0.0, scale = 1.0;
    for (int i = 0; i < n_x; ++i) {
      double num = 0.0;
      for (int j = 1; j < n_nodes; ++j)
        num += cache.w_age[j] * cache.birth_rate(spec, ubar[i], j, i) * u(j, i);
      const double den = 1.0 - w0 * cache.birth_rate(spec, ubar[i], 0, i);
      if (!(den > 1e-8))
        throw NumericalError("age grid too coarse for the birth rate (implicit boundary weight ~ 1)");
      beta[i] = num / den;
      change = std::max(change, std::abs(beta[i] - u(0, i)));
      scale = std::max(scale, std::abs(beta[i]));
    }
    u.set_row(0, beta);
    if (change <= 1e-14 * scale) return;
  }
  // The pass map contracts strongly; reaching here means the state is on the
  // edge of blow-up and the caller's cap check will trip.
}

}  // namespace detail

namespace detail {

inline std::pair<AgeSpaceField, SpatialField> nonlinear_step_impl(const AgeSpaceField& u,
                                                                  const ModelSpec& spec,
                                                                  const StepperCache& cache,
                                                                  int n_substeps) {
  if (u.rows != spec.age.n_nodes() || u.cols != spec.spatial.n_x)
    throw std::invalid_argument("nonlinear_step: state shape does not match the grids");

  SpatialField ubar = weighted_total(u, cache.rho, cache.w_age);
  AgeSpaceField u_new(u.rows, u.cols);

  const double da = spec.age.delta_a();
  GeneratorSpec diffusion_only{spec.rates.d, std::nullopt};
  for (int j = 0; j + 1 < u.rows; ++j) {
    SpatialField row = evolve(diffusion_only, u.row_copy(j), spec.age.node(j),
                              spec.age.node(j + 1), n_substeps, spec);
    if (cache.m_depends_on_z) {
      for (int i = 0; i < u.cols; ++i)
        row[i] *= std::exp(-da * spec.eval_rate(spec.rates.m, ubar[i], spec.age.node(j),
                                                spec.spatial.node(i)));
    } else {
      for (int i = 0; i < u.cols; ++i) row[i] *= cache.death_static(j, i);
    }
    u_new.set_row(j + 1, row);
  }

  u_new.set_row(0, u.row_copy(0));  // predictor seed: old boundary value
  close_birth_boundary(u_new, spec, cache);

  if (!u_new.all_finite()) throw NumericalError("non-finite state after step (blow-up)");
  SpatialField birth = u_new.row_copy(0);
  return {std::move(u_new), std::move(birth)};
}

}  // namespace detail

/// One step of the characteristic recursion with dt = da: the weighted total
/// is frozen at the step start, each age cell advances by implicit diffusion
/// plus the exact death factor, and the age boundary closes by the implicit
/// birth quadrature. Returns the new state and the birth trace B = u(t,0,.).
inline std::pair<AgeSpaceField, SpatialField> nonlinear_step(const AgeSpaceField& u,
                                                             const ModelSpec& spec,
                                                             int n_substeps = 1) {
  detail::StepperCache cache(spec);
  return detail::nonlinear_step_impl(u, spec, cache, n_substeps);
}

namespace detail {

inline void record_step(Trajectory& traj, double t, const AgeSpaceField& u,
                        const SpatialField& birth, const SpatialField& ubar,
                        const ModelSpec& spec) {
  traj.times.push_back(t);
  traj.norm_l1sup.push_back(norm_l1_age_sup_x(u, spec.age));
  traj.norm_l1l2.push_back(norm_l1_age_l2_x(u, spec.age, spec.spatial));
  traj.birth_sup.push_back(sup_norm(birth));
  traj.birth_series.push_back(birth);
  traj.totals.push_back(ubar);
}

}  // namespace detail

/// Runs the nonlinear stepper to the horizon (a multiple of da). Terminates
/// early with the blow-up flag set when the sup norm exceeds the cap.
inline Trajectory simulate(const AgeSpaceField& u0, double horizon, const ModelSpec& spec,
                           long snapshot_stride = 0, StepOptions opts = {}) {
  const double da = spec.age.delta_a();
  const double steps_real = horizon / da;
  const long n_steps = std::lround(steps_real);
  if (std::abs(steps_real - n_steps) > 1e-9 * std::max(1.0, steps_real) || horizon < 0.0)
    throw std::invalid_argument("simulate: horizon must be a nonnegative multiple of delta_a");

  detail::StepperCache cache(spec);
  Trajectory traj;
  traj.dt = da;

  AgeSpaceField u = u0;
  {
    SpatialField ubar = weighted_total(u, cache.rho, cache.w_age);
    SpatialField birth(u.cols, 0.0);
    for (int i = 0; i < u.cols; ++i)
      for (int j = 0; j < u.rows; ++j)
        birth[i] += cache.w_age[j] * cache.birth_rate(spec, ubar[i], j, i) * u(j, i);
    detail::record_step(traj, 0.0, u, birth, ubar, spec);
    if (snapshot_stride > 0) {
      traj.snapshot_steps.push_back(0);
      traj.snapshots.push_back(u);
    }
  }

  for (long k = 1; k <= n_steps; ++k) {
    std::pair<AgeSpaceField, SpatialField> stepped;
    try {
      stepped = detail::nonlinear_step_impl(u, spec, cache, opts.n_substeps);
    } catch (NumericalError& err) {
      throw NumericalError(std::string(err.what()) + " at step " + std::to_string(k), k);
    }
    u = std::move(stepped.first);
    SpatialField ubar = weighted_total(u, cache.rho, cache.w_age);
    detail::record_step(traj, k * da, u, stepped.second, ubar, spec);
    if (snapshot_stride > 0 && (k % snapshot_stride == 0 || k == n_steps)) {
      traj.snapshot_steps.push_back(k);
      traj.snapshots.push_back(u);
    }
    if (sup_norm(u) > opts.sup_cap) {
      traj.blew_up = true;
      traj.blowup_step = k;
      break;
    }
  }
  return traj;
}

/// Frozen-coefficient stepper for the linearization: same cell propagation
/// with (b_phi, A_phi) and, when include_nonlocal is set, the nonlocal source
/// (B_phi w)(a) accumulated per cell by trapezoid. Linear in the state; the
/// boundary closes by the exact one-shot linear solve.
inline Trajectory linear_simulate(const AgeSpaceField& psi0, double horizon,
                                  const LinearizedModel& lin, bool include_nonlocal,
                                  const ModelSpec& spec, long snapshot_stride = 0,
                                  StepOptions opts = {}) {
  const double da = spec.age.delta_a();
  const double steps_real = horizon / da;
  const long n_steps = std::lround(steps_real);
  if (std::abs(steps_real - n_steps) > 1e-9 * std::max(1.0, steps_real) || horizon < 0.0)
    throw std::invalid_argument("linear_simulate: horizon must be a nonnegative multiple of delta_a");
  if (psi0.rows != spec.age.n_nodes() || psi0.cols != spec.spatial.n_x)
    throw std::invalid_argument("linear_simulate: state shape does not match the grids");

  const auto w_age = age_weights(spec.age);
  const double w0 = w_age[0];
  const int n_x = spec.spatial.n_x;
  const int n_nodes = spec.age.n_nodes();
  const bool with_source = include_nonlocal && !lin.kernel_is_zero;

  FrozenDeathFactors death;
  if (lin.gen_phi.absorb_m)
    death = FrozenDeathFactors(lin.gen_phi.absorb_m->m, lin.gen_phi.absorb_m->ubar, spec);
  GeneratorSpec diffusion_only{lin.gen_phi.d, std::nullopt};

  // Boundary solve denominator (independent of the state).
  SpatialField den(n_x);
  for (int i = 0; i < n_x; ++i) {
    den[i] = 1.0 - w0 * lin.birth_base(0, i) - lin.birth_correction[i] * w0 * lin.rho_grid(0, i);
    if (!(den[i] > 1e-8))
      throw NumericalError("age grid too coarse for the linearized birth rate");
  }

  Trajectory traj;
  traj.dt = da;
  AgeSpaceField w = psi0;

  auto record = [&](long k) {
    SpatialField ubar = weighted_total(w, lin.rho_grid, w_age);
    detail::record_step(traj, k * da, w, w.row_copy(0), ubar, spec);
    if (snapshot_stride > 0 && (k % snapshot_stride == 0 || k == n_steps)) {
      traj.snapshot_steps.push_back(k);
      traj.snapshots.push_back(w);
    }
  };
  record(0);

  for (long k = 1; k <= n_steps; ++k) {
    SpatialField wbar_old = weighted_total(w, lin.rho_grid, w_age);
    AgeSpaceField w_new(n_nodes, n_x);
    for (int j = 0; j + 1 < n_nodes; ++j) {
      SpatialField carried = w.row_copy(j);
      if (with_source) {
        for (int i = 0; i < n_x; ++i)
          carried[i] += 0.5 * da * lin.kernel_factor(j, i) * wbar_old[i];
      }
      carried = evolve(diffusion_only, carried, spec.age.node(j), spec.age.node(j + 1),
                       opts.n_substeps, spec);
      if (death.factor.rows > 0)
        for (int i = 0; i < n_x; ++i) carried[i] *= death.factor(j, i);
      if (with_source) {
        for (int i = 0; i < n_x; ++i)
          carried[i] += 0.5 * da * lin.kernel_factor(j + 1, i) * wbar_old[i];
      }
      w_new.set_row(j + 1, carried);
    }

    // Exact boundary closure: beta appears in the quadrature (weight w0) and
    // in the weighted total feeding the correction term.
    for (int i = 0; i < n_x; ++i) {
      double num = 0.0;
      for (int j = 1; j < n_nodes; ++j) num += w_age[j] * lin.birth_base(j, i) * w_new(j, i);
      if (!lin.correction_is_zero) {
        double wbar_int = 0.0;
        for (int j = 1; j < n_nodes; ++j) wbar_int += w_age[j] * lin.rho_grid(j, i) * w_new(j, i);
        num += lin.birth_correction[i] * wbar_int;
      }
      w_new(0, i) = num / den[i];
    }

    if (!w_new.all_finite())
      throw NumericalError("non-finite state after linear step at step " + std::to_string(k), k);
    w = std::move(w_new);
    record(k);
    if (sup_norm(w) > opts.sup_cap) {
      traj.blew_up = true;
      traj.blowup_step = k;
      break;
    }
  }
  return traj;
}

/// Least-squares slope of log(norm) over the trailing window fraction.
inline double fit_exponential_rate(const std::vector<double>& times,
                                   const std::vector<double>& norms, double window) {
  if (times.size() != norms.size())
    throw std::invalid_argument("fit_exponential_rate: length mismatch");
  const long n = static_cast<long>(times.size());
  long m = static_cast<long>(std::ceil(window * n));
  if (m > n) m = n;
  if (m < 10) throw std::invalid_argument("fit_exponential_rate: fewer than 10 points in window");
  const long k0 = n - m;
  double st = 0.0, sy = 0.0;
  for (long k = k0; k < n; ++k) {
    if (!(norms[k] > 0.0))
      throw std::invalid_argument("fit_exponential_rate: nonpositive norm in window");
    st += times[k];
    sy += std::log(norms[k]);
  }
  const double mt = st / m, my = sy / m;
  double sxx = 0.0, sxy = 0.0;
  for (long k = k0; k < n; ++k) {
    const double dt = times[k] - mt;
    sxx += dt * dt;
    sxy += dt * (std::log(norms[k]) - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_exponential_rate: degenerate time window");
  return sxy / sxx;
}

}  // namespace agediff
