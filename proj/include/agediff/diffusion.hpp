#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "agediff/model.hpp"

namespace agediff {

/// Linear-solve or stepping failure; carries the step index when known.
struct NumericalError : std::runtime_error {
  long step = -1;
  explicit NumericalError(const std::string& what, long step_ = -1)
      : std::runtime_error(what), step(step_) {}
};

/// Tridiagonal matrix, rows 0..n-1; lower[0] and upper[n-1] are unused.
struct Tridiag {
  std::vector<double> lower, diag, upper;

  explicit Tridiag(int n = 0) : lower(n, 0.0), diag(n, 0.0), upper(n, 0.0) {}
  int n() const { return static_cast<int>(diag.size()); }

  void apply(const double* v, double* out) const {
    const int m = n();
    for (int i = 0; i < m; ++i) {
      double s = diag[i] * v[i];
      if (i > 0) s += lower[i] * v[i - 1];
      if (i + 1 < m) s += upper[i] * v[i + 1];
      out[i] = s;
    }
  }
};

/// Thomas factorization of a tridiagonal system, reusable across many
/// right-hand sides (column sweeps solve the same matrix repeatedly).
struct TridiagSolver {
  std::vector<double> c_prime;   // eliminated upper diagonal
  std::vector<double> inv_denom;
  std::vector<double> lower;

  explicit TridiagSolver(const Tridiag& t) {
    const int m = t.n();
    c_prime.resize(m);
    inv_denom.resize(m);
    lower = t.lower;
    double denom = t.diag[0];
    if (std::abs(denom) < 1e-300) throw NumericalError("singular tridiagonal system");
    inv_denom[0] = 1.0 / denom;
    c_prime[0] = t.upper[0] * inv_denom[0];
    for (int i = 1; i < m; ++i) {
      denom = t.diag[i] - t.lower[i] * c_prime[i - 1];
      if (std::abs(denom) < 1e-300) throw NumericalError("singular tridiagonal system");
      inv_denom[i] = 1.0 / denom;
      c_prime[i] = t.upper[i] * inv_denom[i];
    }
  }

  /// Solves in place (x enters as the right-hand side).
  void solve(double* x) const {
    const int m = static_cast<int>(c_prime.size());
    x[0] *= inv_denom[0];
    for (int i = 1; i < m; ++i) x[i] = (x[i] - lower[i] * x[i - 1]) * inv_denom[i];
    for (int i = m - 2; i >= 0; --i) x[i] -= c_prime[i] * x[i + 1];
  }
};

/// Optional absorbed death term: the generator becomes A(a) - m(ubar, a, x).
struct AbsorbM {
  Expr m;
  SpatialField ubar;  // frozen weighted total, one value per spatial node
};

/// Data of the nonautonomous generator A(a)w = div(d(a,x) grad w) (- m w).
struct GeneratorSpec {
  Expr d;
  std::optional<AbsorbM> absorb_m;
};

/// Second-order flux-form discretization of div(d grad .) at age a, with d at
/// midpoints by arithmetic mean. Neumann rows use mirrored ghost nodes (the
/// constant vector is in the kernel exactly); Dirichlet boundary rows are kept
/// zero, with the value pinned to 0 by the steppers.
inline Tridiag assemble_generator(const GeneratorSpec& gen, double a, const ModelSpec& spec) {
  const int n = spec.spatial.n_x;
  const double h = spec.spatial.spacing();
  const double inv_h2 = 1.0 / (h * h);
  if (gen.absorb_m && static_cast<int>(gen.absorb_m->ubar.size()) != n)
    throw std::invalid_argument("assemble_generator: absorbed-m total has wrong length");

  std::vector<double> d_node(n);
  for (int i = 0; i < n; ++i) d_node[i] = spec.eval_rate(gen.d, 0.0, a, spec.spatial.node(i));
  std::vector<double> d_mid(n - 1);
  for (int i = 0; i + 1 < n; ++i) {
    d_mid[i] = 0.5 * (d_node[i] + d_node[i + 1]);
    if (!(d_mid[i] > 0.0)) throw NumericalError("diffusion coefficient <= 0 at a midpoint");
  }

  Tridiag t(n);
  for (int i = 1; i + 1 < n; ++i) {
    t.lower[i] = d_mid[i - 1] * inv_h2;
    t.upper[i] = d_mid[i] * inv_h2;
    t.diag[i] = -(d_mid[i - 1] + d_mid[i]) * inv_h2;
  }
  if (spec.spatial.boundary == Boundary::neumann) {
    t.diag[0] = -2.0 * d_mid[0] * inv_h2;
    t.upper[0] = 2.0 * d_mid[0] * inv_h2;
    t.diag[n - 1] = -2.0 * d_mid[n - 2] * inv_h2;
    t.lower[n - 1] = 2.0 * d_mid[n - 2] * inv_h2;
  }
  // Dirichlet: rows 0 and n-1 stay zero.

  if (gen.absorb_m) {
    const int lo = spec.spatial.boundary == Boundary::dirichlet ? 1 : 0;
    const int hi = spec.spatial.boundary == Boundary::dirichlet ? n - 1 : n;
    for (int i = lo; i < hi; ++i)
      t.diag[i] -= spec.eval_rate(gen.absorb_m->m, gen.absorb_m->ubar[i], a, spec.spatial.node(i));
  }
  return t;
}

/// One Crank-Nicolson substep at age a with substep ds: the implicit part
/// (I - ds/2 A_h(a)) and the explicit part (I + ds/2 A_h(a)). Dirichlet rows
/// are identity rows with zero right-hand side.
struct StepOperator {
  Tridiag implicit_part;
  Tridiag explicit_part;
  TridiagSolver solver;
  bool pin_boundaries;

  StepOperator(const GeneratorSpec& gen, double a, double ds, const ModelSpec& spec)
      : implicit_part(spec.spatial.n_x),
        explicit_part(spec.spatial.n_x),
        solver(build(gen, a, ds, spec, implicit_part, explicit_part)),
        pin_boundaries(spec.spatial.boundary == Boundary::dirichlet) {}

  /// v := step(v); scratch must hold n doubles. Safe to call concurrently on
  /// distinct (v, scratch) pairs.
  void advance(double* v, double* scratch) const {
    const int n = implicit_part.n();
    if (pin_boundaries) {
      v[0] = 0.0;
      v[n - 1] = 0.0;
    }
    explicit_part.apply(v, scratch);
    if (pin_boundaries) {
      scratch[0] = 0.0;
      scratch[n - 1] = 0.0;
    }
    solver.solve(scratch);
    for (int i = 0; i < n; ++i) v[i] = scratch[i];
  }

 private:
  static TridiagSolver build(const GeneratorSpec& gen, double a, double ds, const ModelSpec& spec,
                             Tridiag& implicit_out, Tridiag& explicit_out) {
    Tridiag A = assemble_generator(gen, a, spec);
    const int n = A.n();
    const double half = 0.5 * ds;
    for (int i = 0; i < n; ++i) {
      implicit_out.lower[i] = -half * A.lower[i];
      implicit_out.diag[i] = 1.0 - half * A.diag[i];
      implicit_out.upper[i] = -half * A.upper[i];
      explicit_out.lower[i] = half * A.lower[i];
      explicit_out.diag[i] = 1.0 + half * A.diag[i];
      explicit_out.upper[i] = half * A.upper[i];
    }
    if (spec.spatial.boundary == Boundary::dirichlet) {
      implicit_out.lower[0] = implicit_out.upper[0] = 0.0;
      implicit_out.diag[0] = 1.0;
      implicit_out.lower[n - 1] = implicit_out.upper[n - 1] = 0.0;
      implicit_out.diag[n - 1] = 1.0;
    }
    return TridiagSolver(implicit_out);
  }
};

/// Propagates v from age sigma to age a with the evolution operator of the
/// generator, by n_substeps Crank-Nicolson substeps with coefficients frozen
/// at substep midpoints. evolve(., s, s, .) returns the input unchanged.
inline SpatialField evolve(const GeneratorSpec& gen, const SpatialField& v, double sigma, double a,
                           int n_substeps, const ModelSpec& spec) {
  if (sigma > a) throw std::invalid_argument("evolve: sigma > a");
  if (n_substeps < 1) throw std::invalid_argument("evolve: n_substeps must be >= 1");
  if (static_cast<int>(v.size()) != spec.spatial.n_x)
    throw std::invalid_argument("evolve: field length does not match the grid");
  if (sigma == a) return v;

  SpatialField w = v;
  std::vector<double> scratch(v.size());
  const double ds = (a - sigma) / n_substeps;
  for (int k = 0; k < n_substeps; ++k) {
    const double a_mid = sigma + (k + 0.5) * ds;
    StepOperator op(gen, a_mid, ds, spec);
    op.advance(w.data(), scratch.data());
  }
  return w;
}

/// Largest substep count needed so the explicit CN part stays entrywise
/// nonnegative across [0, a_max] (positivity-safe regime): ds <= h^2 / max d.
inline int positivity_safe_substeps(const GeneratorSpec& gen, double interval,
                                    const ModelSpec& spec) {
  double dmax = 0.0;
  for (int j = 0; j <= 8; ++j) {
    double a = spec.age.a_max * j / 8.0;
    for (int i = 0; i < spec.spatial.n_x; ++i)
      dmax = std::max(dmax, spec.eval_rate(gen.d, 0.0, a, spec.spatial.node(i)));
  }
  const double h = spec.spatial.spacing();
  double ds_max = h * h / std::max(dmax, 1e-300);
  return std::max(1, static_cast<int>(std::ceil(interval / ds_max)));
}

/// Mild solution v(a) = Pi(a,0) x0 + int_0^a Pi(a,s) f(s) ds on the age nodes,
/// one evolve per age cell with trapezoid Duhamel accumulation.
inline AgeSpaceField mild_solve(const GeneratorSpec& gen, const SpatialField& x0,
                                const AgeSpaceField& f, int n_substeps, const ModelSpec& spec) {
  const int n_nodes = spec.age.n_nodes();
  if (f.rows != n_nodes || f.cols != spec.spatial.n_x)
    throw std::invalid_argument("mild_solve: source shape does not match the grids");
  if (static_cast<int>(x0.size()) != spec.spatial.n_x)
    throw std::invalid_argument("mild_solve: initial value length does not match the grid");

  const double da = spec.age.delta_a();
  AgeSpaceField v(n_nodes, spec.spatial.n_x);
  v.set_row(0, x0);
  for (int j = 0; j + 1 < n_nodes; ++j) {
    const double a_lo = spec.age.node(j), a_hi = spec.age.node(j + 1);
    SpatialField carried = v.row_copy(j);
    SpatialField src_lo = f.row_copy(j);
    for (int i = 0; i < v.cols; ++i) carried[i] += 0.5 * da * src_lo[i];
    carried = evolve(gen, carried, a_lo, a_hi, n_substeps, spec);
    const double* src_hi = f.row(j + 1);
    for (int i = 0; i < v.cols; ++i) carried[i] += 0.5 * da * src_hi[i];
    v.set_row(j + 1, carried);
  }
  return v;
}

/// Shared characteristic-cell propagation: implicit CN diffusion across
/// [a_lo, a_hi], then the exact pointwise death factor exp(-(a_hi-a_lo) *
/// m(zfield, a_lo, x)) frozen at the cell start. All steppers, the residual
/// defect and the spectral sweeps use this one primitive, so their discrete
/// evolution operators coincide.
inline SpatialField evolve_cell_split(const Expr& d, const Expr* m, const SpatialField& zfield,
                                      const SpatialField& v, double a_lo, double a_hi,
                                      int n_substeps, const ModelSpec& spec) {
  GeneratorSpec diffusion_only{d, std::nullopt};
  SpatialField w = evolve(diffusion_only, v, a_lo, a_hi, n_substeps, spec);
  if (m != nullptr) {
    const double da = a_hi - a_lo;
    for (int i = 0; i < spec.spatial.n_x; ++i)
      w[i] *= std::exp(-da * spec.eval_rate(*m, zfield[i], a_lo, spec.spatial.node(i)));
  }
  return w;
}

/// Precomputed death factors exp(-da * m(ubar, a_j, x)) for every age cell;
/// avoids re-evaluating the frozen rate inside spectral sweeps.
struct FrozenDeathFactors {
  AgeSpaceField factor;  // rows = n_a (one per cell), cols = n_x

  FrozenDeathFactors() = default;
  FrozenDeathFactors(const Expr& m, const SpatialField& ubar, const ModelSpec& spec)
      : factor(spec.age.n_a, spec.spatial.n_x) {
    const double da = spec.age.delta_a();
    for (int j = 0; j < spec.age.n_a; ++j) {
      double a = spec.age.node(j);
      for (int i = 0; i < spec.spatial.n_x; ++i)
        factor(j, i) = std::exp(-da * eval(m, ubar[i], a, spec.spatial.node(i), spec.params));
    }
  }
};

}  // namespace agediff
