#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "agediff/equilibrium.hpp"
#include "agediff/linearization.hpp"
#include "agediff/model.hpp"
#include "agediff/spectral.hpp"
#include "agediff/transport.hpp"

namespace agediff {

enum class Verdict { stable, unstable, inconclusive };
enum class VerdictBasis { r_Q0_trivial, closed_form_r0, dominant_eigenvalue, P50_test };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::stable: return "stable";
    case Verdict::unstable: return "unstable";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "?";
}

inline const char* to_string(VerdictBasis b) {
  switch (b) {
    case VerdictBasis::r_Q0_trivial: return "r_Q0_trivial";
    case VerdictBasis::closed_form_r0: return "closed_form_r0";
    case VerdictBasis::dominant_eigenvalue: return "dominant_eigenvalue";
    case VerdictBasis::P50_test: return "P50_test";
  }
  return "?";
}

/// Stability/instability decision with the spectral quantities backing it.
struct StabilityReport {
  Verdict verdict = Verdict::inconclusive;
  VerdictBasis basis = VerdictBasis::r_Q0_trivial;
  double r_Q0 = 0.0;
  std::optional<double> lambda0;
  std::optional<double> lambda_star;
  std::optional<double> simulated_rate;
  NormKind norm_kind = NormKind::l1_age_sup_space;
  std::string notes;
};

inline constexpr double default_verdict_band = 1e-3;

namespace detail {

inline void append_note(std::string& notes, const std::string& msg) {
  if (!notes.empty()) notes += "; ";
  notes += msg;
}

}  // namespace detail

/// Trivial-equilibrium dichotomy: stable when r(Q0(0)) < 1 - band, unstable
/// when r(Q0(0)) > 1 + band, inconclusive inside the band.
inline StabilityReport verdict_trivial(const ModelSpec& spec, double band = default_verdict_band,
                                       int n_substeps = 1) {
  LinearizedModel lin = build_linearization(trivial_equilibrium(spec), spec);
  LinearizedAssembler as(lin, spec, n_substeps);
  StabilityReport rep;
  rep.basis = VerdictBasis::r_Q0_trivial;
  rep.r_Q0 = as.r_of_lambda(0.0);
  if (rep.r_Q0 < 1.0 - band)
    rep.verdict = Verdict::stable;
  else if (rep.r_Q0 > 1.0 + band)
    rep.verdict = Verdict::unstable;
  else {
    rep.verdict = Verdict::inconclusive;
    rep.notes = "r(Q0) within the critical band around 1";
  }
  try {
    rep.lambda0 = find_lambda0(as);
  } catch (const NumericalError&) {
    // bracket failure leaves lambda0 unset; the verdict stands on r alone
  }
  return rep;
}

/// Closed-form net reproduction r0 for Neumann and x-independent rates, with
/// the matrix spectral radius cross-checked against it to 1e-3.
inline double closed_form_r0(const ModelSpec& spec, int n_substeps = 1) {
  const double r0 = net_reproduction_scalar(0.0, spec);
  LinearizedModel lin = build_linearization(trivial_equilibrium(spec), spec);
  const double r_matrix = LinearizedAssembler(lin, spec, n_substeps).r_of_lambda(0.0);
  if (std::abs(r_matrix - r0) > 1e-3)
    throw NumericalError("closed_form_r0: matrix spectral radius disagrees with the scalar form (" +
                         std::to_string(r_matrix) + " vs " + std::to_string(r0) + ")");
  return r0;
}

/// Linearized verdict at an arbitrary accepted equilibrium from the dominant
/// real eigenvalue of the eigen-system scan. When the positivity hypotheses
/// (b_phi > 0, nonlocal kernel >= 0) fail, the real-line scan cannot exclude
/// complex eigenvalues and the verdict is flagged conditional.
inline StabilityReport verdict_equilibrium(const Equilibrium& eq, const ModelSpec& spec,
                                           double band = default_verdict_band,
                                           ScanWindow window = {}, int n_substeps = 1) {
  LinearizedModel lin = build_linearization(eq, spec);
  LinearizedAssembler as(lin, spec, n_substeps);
  SpectralReport sr = spectral_report(as, window);

  StabilityReport rep;
  rep.basis = VerdictBasis::dominant_eigenvalue;
  rep.r_Q0 = sr.r_Q0;
  rep.lambda0 = sr.lambda0;
  rep.lambda_star = sr.dominant_real_eigenvalue;

  bool positive = true;
  for (int j = 0; j < lin.birth_base.rows && positive; ++j)
    for (int i = 0; i < lin.birth_base.cols; ++i)
      if (!(lin.birth_multiplier(j, i) > 0.0) || lin.kernel_factor(j, i) < 0.0) {
        positive = false;
        break;
      }

  if (!rep.lambda_star) {
    rep.verdict = Verdict::inconclusive;
    rep.notes = "no real eigenvalue in scan window";
    return rep;
  }
  const double ls = *rep.lambda_star;
  if (ls < -band)
    rep.verdict = Verdict::stable;
  else if (ls > band)
    rep.verdict = Verdict::unstable;
  else {
    rep.verdict = Verdict::inconclusive;
    rep.notes = "dominant real eigenvalue within the critical band around 0";
  }
  if (!positive)
    detail::append_note(rep.notes,
                        "real-scan only, verdict conditional (positivity hypotheses not satisfied)");
  return rep;
}

/// Instability test for a positive equilibrium under the sign conditions
/// d1b(ubar_phi,a,x) >= 0 and d1m(ubar_phi,a,x) <= 0 on the grid: unstable
/// when r(Q0(phi)) > 1 (shortcut) or when the dominant real eigenvalue is
/// nonzero beyond the band.
inline StabilityReport instability_test_P50(const Equilibrium& eq, const ModelSpec& spec,
                                            double band = default_verdict_band,
                                            ScanWindow window = {}, int n_substeps = 1) {
  StabilityReport rep;
  rep.basis = VerdictBasis::P50_test;

  if (eq.kind == EquilibriumKind::trivial || sup_norm(eq.phi) == 0.0) {
    rep.verdict = Verdict::inconclusive;
    rep.notes = "requires positive equilibrium";
    return rep;
  }
  if (!eq.accepted) {
    rep.verdict = Verdict::inconclusive;
    rep.notes = "equilibrium not accepted (residual too large)";
    return rep;
  }
  for (double v : eq.phi.data)
    if (v < -1e-12) {
      rep.verdict = Verdict::inconclusive;
      rep.notes = "equilibrium not nonnegative";
      return rep;
    }

  for (int j = 0; j < spec.age.n_nodes(); ++j) {
    const double a = spec.age.node(j);
    for (int i = 0; i < spec.spatial.n_x; ++i) {
      const double x = spec.spatial.node(i);
      if (spec.eval_rate(spec.rates.db_dz, eq.ubar[i], a, x) < 0.0) {
        rep.verdict = Verdict::inconclusive;
        rep.notes = "d1b >= 0 violated";
        return rep;
      }
      if (spec.eval_rate(spec.rates.dm_dz, eq.ubar[i], a, x) > 0.0) {
        rep.verdict = Verdict::inconclusive;
        rep.notes = "d1m <= 0 violated";
        return rep;
      }
    }
  }

  LinearizedModel lin = build_linearization(eq, spec);
  LinearizedAssembler as(lin, spec, n_substeps);
  rep.r_Q0 = as.r_of_lambda(0.0);
  if (rep.r_Q0 > 1.0 + band) {
    rep.verdict = Verdict::unstable;
    rep.notes = "r(Q0(phi)) > 1";
    try {
      rep.lambda0 = find_lambda0(as);
    } catch (const NumericalError&) {
    }
    return rep;
  }

  SpectralReport sr = spectral_report(as, window);
  rep.lambda0 = sr.lambda0;
  rep.lambda_star = sr.dominant_real_eigenvalue;
  if (rep.lambda_star && *rep.lambda_star > band) {
    rep.verdict = Verdict::unstable;
    rep.notes = "dominant real eigenvalue positive";
  } else if (rep.lambda_star && *rep.lambda_star < -band) {
    rep.verdict = Verdict::inconclusive;
    rep.notes = "computed spectral bound negative under the sign conditions (numerical inconsistency)";
  } else {
    rep.verdict = Verdict::inconclusive;
    rep.notes = "spectral bound within the critical band around 0";
  }
  return rep;
}

/// Result of the simulation cross-check: fitted exponential rate of the
/// distance to the equilibrium, plus the measured distance series.
struct SimulationVerification {
  std::optional<double> rate;
  bool blew_up = false;
  std::string note;
  std::vector<double> times;
  std::vector<double> distances;
};

/// Simulates from a relatively inflated and positively bumped perturbation of
/// phi and fits the exponential rate of ||u(t) - phi|| in the chosen norm.
/// Blow-up before enough samples yields rate = +infinity with the flag set.
inline SimulationVerification verify_by_simulation(const Equilibrium& eq, const ModelSpec& spec,
                                                   double epsilon, double horizon,
                                                   NormKind norm_kind = NormKind::l1_age_sup_space,
                                                   StepOptions opts = {},
                                                   double fit_window = 0.5) {
  const int n_nodes = spec.age.n_nodes();
  const int n_x = spec.spatial.n_x;
  const double scale = sup_norm(eq.phi);

  AgeSpaceField u0(n_nodes, n_x);
  const double bump = epsilon * (scale > 0.0 ? scale : 1.0);
  for (int j = 0; j < n_nodes; ++j)
    for (int i = 0; i < n_x; ++i) u0(j, i) = (1.0 + epsilon) * eq.phi(j, i) + bump;

  const double da = spec.age.delta_a();
  const long n_steps = std::lround(horizon / da);
  if (std::abs(horizon / da - n_steps) > 1e-9 * std::max(1.0, horizon / da))
    throw std::invalid_argument("verify_by_simulation: horizon must be a multiple of delta_a");

  detail::StepperCache cache(spec);
  AgeSpaceField u = u0;
  AgeSpaceField diff = u;
  auto distance = [&](const AgeSpaceField& state) {
    for (std::size_t c = 0; c < state.data.size(); ++c)
      diff.data[c] = state.data[c] - eq.phi.data[c];
    return trajectory_norm(diff, spec, norm_kind);
  };

  SimulationVerification out;
  out.times = {0.0};
  out.distances = {distance(u)};
  for (long k = 1; k <= n_steps; ++k) {
    u = detail::nonlinear_step_impl(u, spec, cache, opts.n_substeps).first;
    out.times.push_back(k * da);
    out.distances.push_back(distance(u));
    if (sup_norm(u) > opts.sup_cap) {
      out.blew_up = true;
      break;
    }
  }

  if (out.blew_up && out.times.size() < 20) {
    out.rate = std::numeric_limits<double>::infinity();
    out.note = "blow-up before enough samples";
    return out;
  }
  try {
    out.rate = fit_exponential_rate(out.times, out.distances, fit_window);
  } catch (const std::invalid_argument& err) {
    out.note = std::string("rate fit failed: ") + err.what();
  }
  return out;
}

/// Hypotheses and outcome of the global-decay envelope check.
struct GlobalDecayReport {
  bool k12_ok = false;       // b <= b_*, m >= m_* on grid x sampled z
  bool k2_ok = false;        // envelope net reproduction < 1
  bool k3_ok = false;        // |d1b| + |m| + |d1m| bounded by the cap
  double r_envelope = 0.0;
  std::optional<double> omega0;
  bool simulated = false;
  bool decayed = false;                // norm fell below 1e-3 of initial
  std::optional<double> t_decay;
  double envelope_factor = 0.0;        // max_t ||u(t)|| / (e^{omega0 t} ||u0||)
  std::string notes;
};

/// Verifies the dominated-rates hypotheses against envelope rates b_*(a),
/// m_*(a); when they hold, simulates and checks decay below 1e-3 of the
/// initial norm inside the e^{omega0 t} envelope of the envelope model.
inline GlobalDecayReport global_decay_check(const ModelSpec& spec, const AgeSpaceField& u0,
                                            const Expr& b_star, const Expr& m_star,
                                            double derivative_cap = 1e3, StepOptions opts = {},
                                            double horizon = 0.0,
                                            NormKind norm_kind = NormKind::l1_age_sup_space) {
  GlobalDecayReport rep;
  if (spec.spatial.boundary != Boundary::neumann)
    throw ModelError("global_decay_check requires Neumann boundary conditions");

  const int n_z = 9;
  rep.k12_ok = true;
  rep.k3_ok = true;
  for (int j = 0; j < spec.age.n_nodes(); ++j) {
    const double a = spec.age.node(j);
    const double bs = spec.eval_rate(b_star, 0.0, a, spec.spatial.node(0));
    const double ms = spec.eval_rate(m_star, 0.0, a, spec.spatial.node(0));
    for (int i = 0; i < spec.spatial.n_x; ++i) {
      const double x = spec.spatial.node(i);
      for (int k = 0; k < n_z; ++k) {
        const double z = spec.z_max * k / (n_z - 1);
        const double b = spec.eval_rate(spec.rates.b, z, a, x);
        const double m = spec.eval_rate(spec.rates.m, z, a, x);
        if (b > bs + 1e-12 || m < ms - 1e-12) rep.k12_ok = false;
        const double total = std::abs(spec.eval_rate(spec.rates.db_dz, z, a, x)) + std::abs(m) +
                             std::abs(spec.eval_rate(spec.rates.dm_dz, z, a, x));
        if (total > derivative_cap) rep.k3_ok = false;
      }
    }
  }

  // Envelope model: z-independent rates b_*, m_* on the same grids.
  ModelSpec envelope = spec;
  envelope.rates.b = b_star;
  envelope.rates.m = m_star;
  envelope.rates.db_dz = make_constant(0.0);
  envelope.rates.dm_dz = make_constant(0.0);
  rep.r_envelope = net_reproduction_scalar(0.0, envelope);
  rep.k2_ok = rep.r_envelope < 1.0;

  if (!(rep.k12_ok && rep.k2_ok && rep.k3_ok)) {
    rep.notes = "hypotheses failed; no simulation claim made";
    return rep;
  }

  LinearizedModel lin = build_linearization(trivial_equilibrium(envelope), envelope);
  rep.omega0 = find_lambda0(lin, envelope, opts.n_substeps);

  const double initial = trajectory_norm(u0, spec, norm_kind);
  if (initial == 0.0) {
    rep.simulated = false;
    rep.decayed = true;
    rep.envelope_factor = 0.0;
    rep.notes = "initial state identically zero";
    return rep;
  }

  if (horizon <= 0.0) {
    // Enough time for the envelope to cross 1e-3, plus slack.
    const double t_needed = std::log(1e3) / std::max(1e-6, -*rep.omega0);
    horizon = std::ceil(1.5 * t_needed / spec.age.delta_a()) * spec.age.delta_a();
  }

  detail::StepperCache cache(spec);
  AgeSpaceField u = u0;
  const long n_steps = std::lround(horizon / spec.age.delta_a());
  rep.simulated = true;
  rep.envelope_factor = 1.0;
  for (long k = 1; k <= n_steps; ++k) {
    u = detail::nonlinear_step_impl(u, spec, cache, opts.n_substeps).first;
    const double t = k * spec.age.delta_a();
    const double norm = trajectory_norm(u, spec, norm_kind);
    rep.envelope_factor =
        std::max(rep.envelope_factor, norm / (std::exp(*rep.omega0 * t) * initial));
    if (!rep.decayed && norm <= 1e-3 * initial) {
      rep.decayed = true;
      rep.t_decay = t;
    }
  }
  return rep;
}

}  // namespace agediff
