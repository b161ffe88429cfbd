#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "agediff/expression.hpp"

namespace agediff {

enum class Boundary { dirichlet, neumann };

/// Uniform node-centered grid on Omega = (0, L), nodes x_i = i*h, h = L/(n_x-1).
struct SpatialGrid {
  double length = 1.0;
  int n_x = 3;
  Boundary boundary = Boundary::neumann;

  SpatialGrid() = default;
  SpatialGrid(double length_, int n_x_, Boundary b) : length(length_), n_x(n_x_), boundary(b) {
    if (!(length > 0.0)) throw std::invalid_argument("spatial grid: length must be positive");
    if (n_x < 3) throw std::invalid_argument("spatial grid: n_x must be >= 3");
  }

  double spacing() const { return length / (n_x - 1); }
  double node(int i) const { return i * spacing(); }
};

/// Uniform age grid on J = [0, a_max] with n_a cells and n_a+1 nodes a_j = j*da.
struct AgeGrid {
  double a_max = 1.0;
  int n_a = 2;

  AgeGrid() = default;
  AgeGrid(double a_max_, int n_a_) : a_max(a_max_), n_a(n_a_) {
    if (!(a_max > 0.0)) throw std::invalid_argument("age grid: a_max must be positive");
    if (n_a < 2) throw std::invalid_argument("age grid: n_a must be >= 2");
  }

  double delta_a() const { return a_max / n_a; }
  double node(int j) const { return j * delta_a(); }
  int n_nodes() const { return n_a + 1; }
};

/// Composite-trapezoid weights on n uniform nodes with spacing h.
inline std::vector<double> trapezoid_weights(int n, double h) {
  std::vector<double> w(n, h);
  w.front() = 0.5 * h;
  w.back() = 0.5 * h;
  return w;
}

inline std::vector<double> age_weights(const AgeGrid& g) {
  return trapezoid_weights(g.n_nodes(), g.delta_a());
}

inline std::vector<double> spatial_weights(const SpatialGrid& g) {
  return trapezoid_weights(g.n_x, g.spacing());
}

using SpatialField = std::vector<double>;

/// Density samples u(a_j, x_i) on the tensor grid, row-major with rows = age nodes.
struct AgeSpaceField {
  int rows = 0;  // n_a + 1
  int cols = 0;  // n_x
  std::vector<double> data;

  AgeSpaceField() = default;
  AgeSpaceField(int rows_, int cols_, double fill = 0.0)
      : rows(rows_), cols(cols_), data(static_cast<std::size_t>(rows_) * cols_, fill) {}

  double& operator()(int j, int i) { return data[static_cast<std::size_t>(j) * cols + i]; }
  double operator()(int j, int i) const { return data[static_cast<std::size_t>(j) * cols + i]; }
  double* row(int j) { return data.data() + static_cast<std::size_t>(j) * cols; }
  const double* row(int j) const { return data.data() + static_cast<std::size_t>(j) * cols; }

  SpatialField row_copy(int j) const {
    return SpatialField(row(j), row(j) + cols);
  }
  void set_row(int j, const SpatialField& v) {
    std::copy(v.begin(), v.end(), row(j));
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline double sup_norm(const SpatialField& v) {
  double m = 0.0;
  for (double c : v) m = std::max(m, std::abs(c));
  return m;
}

inline double sup_norm(const AgeSpaceField& u) {
  double m = 0.0;
  for (double c : u.data) m = std::max(m, std::abs(c));
  return m;
}

/// Vital rates; dm_dz and db_dz are d/dz of m and b (user-supplied or symbolic).
struct VitalRates {
  Expr m, b, d, rho;
  Expr dm_dz, db_dz;
};

/// Builds the rate bundle, differentiating m and b in z when no explicit
/// derivative expression is given.
inline VitalRates make_vital_rates(const std::string& m_src, const std::string& b_src,
                                   const std::string& d_src, const std::string& rho_src,
                                   const std::optional<std::string>& dm_dz_src = std::nullopt,
                                   const std::optional<std::string>& db_dz_src = std::nullopt) {
  VitalRates r;
  r.m = parse_rate_expression(m_src);
  r.b = parse_rate_expression(b_src);
  r.d = parse_rate_expression(d_src);
  r.rho = parse_rate_expression(rho_src);
  r.dm_dz = dm_dz_src ? parse_rate_expression(*dm_dz_src) : differentiate_in_z(r.m);
  r.db_dz = db_dz_src ? parse_rate_expression(*db_dz_src) : differentiate_in_z(r.b);
  return r;
}

/// Full problem data: grids, boundary kind and vital rates.
struct ModelSpec {
  SpatialGrid spatial;
  AgeGrid age;
  VitalRates rates;
  ParamSet params;
  double z_max = 10.0;  // declared z bracket for validation and sampling

  double eval_rate(const Expr& e, double z, double a, double x) const {
    return eval(e, z, a, x, params);
  }
};

// ---------------------------------------------------------------------------
// Weighted total population
// ---------------------------------------------------------------------------

/// rho(a_j, x_i) samples; d and rho carry no z-dependence (evaluated at z = 0).
inline AgeSpaceField rho_grid(const ModelSpec& spec) {
  AgeSpaceField g(spec.age.n_nodes(), spec.spatial.n_x);
  for (int j = 0; j < g.rows; ++j) {
    double a = spec.age.node(j);
    for (int i = 0; i < g.cols; ++i)
      g(j, i) = spec.eval_rate(spec.rates.rho, 0.0, a, spec.spatial.node(i));
  }
  return g;
}

/// ubar(x_i) = trapezoid over age of rho * u, given precomputed rho samples.
inline SpatialField weighted_total(const AgeSpaceField& u, const AgeSpaceField& rho,
                                   const std::vector<double>& w_age) {
  if (u.rows != rho.rows || u.cols != rho.cols || static_cast<int>(w_age.size()) != u.rows)
    throw std::invalid_argument("weighted_total: shape mismatch");
  SpatialField out(u.cols, 0.0);
  for (int j = 0; j < u.rows; ++j) {
    const double w = w_age[j];
    const double* ur = u.row(j);
    const double* rr = rho.row(j);
    for (int i = 0; i < u.cols; ++i) out[i] += w * rr[i] * ur[i];
  }
  return out;
}

inline SpatialField weighted_total(const AgeSpaceField& u, const ModelSpec& spec) {
  if (u.rows != spec.age.n_nodes() || u.cols != spec.spatial.n_x)
    throw std::invalid_argument("weighted_total: field shape does not match the grids");
  return weighted_total(u, rho_grid(spec), age_weights(spec.age));
}

// ---------------------------------------------------------------------------
// Trajectory norms (discrete stand-ins for the phase-space norm)
// ---------------------------------------------------------------------------

enum class NormKind { l1_age_sup_space, l1_age_l2_space };

/// L1 in age of the spatial sup norm.
inline double norm_l1_age_sup_x(const AgeSpaceField& u, const AgeGrid& age) {
  auto w = age_weights(age);
  double s = 0.0;
  for (int j = 0; j < u.rows; ++j) {
    double m = 0.0;
    const double* r = u.row(j);
    for (int i = 0; i < u.cols; ++i) m = std::max(m, std::abs(r[i]));
    s += w[j] * m;
  }
  return s;
}

/// L1 in age of the spatial L2 norm (trapezoid quadrature in x).
inline double norm_l1_age_l2_x(const AgeSpaceField& u, const AgeGrid& age,
                               const SpatialGrid& spatial) {
  auto wa = age_weights(age);
  auto wx = spatial_weights(spatial);
  double s = 0.0;
  for (int j = 0; j < u.rows; ++j) {
    double q = 0.0;
    const double* r = u.row(j);
    for (int i = 0; i < u.cols; ++i) q += wx[i] * r[i] * r[i];
    s += wa[j] * std::sqrt(q);
  }
  return s;
}

inline double trajectory_norm(const AgeSpaceField& u, const ModelSpec& spec, NormKind kind) {
  return kind == NormKind::l1_age_sup_space ? norm_l1_age_sup_x(u, spec.age)
                                            : norm_l1_age_l2_x(u, spec.age, spec.spatial);
}

// ---------------------------------------------------------------------------
// Spec validation
// ---------------------------------------------------------------------------

struct ValidationReport {
  struct Violation {
    std::string rate;
    double z, a, x;
    double value;
    std::string what;
  };
  bool passed = true;
  std::size_t total_violations = 0;
  std::vector<Violation> violations;  // first few offenders, capped

  static constexpr std::size_t record_cap = 64;

  void add(std::string rate, double z, double a, double x, double value, std::string what) {
    passed = false;
    ++total_violations;
    if (violations.size() < record_cap)
      violations.push_back({std::move(rate), z, a, x, value, std::move(what)});
  }
};

/// Samples the positivity/evaluability hypotheses on the grid times a z grid
/// in [0, z_max]: d > 0, m >= 0, b > 0, rho >= 0, derivatives evaluable.
inline ValidationReport validate_spec(const ModelSpec& spec, double z_max, int n_z_samples = 11) {
  ValidationReport rep;
  std::vector<double> zs(n_z_samples);
  for (int k = 0; k < n_z_samples; ++k)
    zs[k] = n_z_samples == 1 ? 0.0 : z_max * k / (n_z_samples - 1);

  auto check = [&](const Expr& e, const char* name, double z, double a, double x, int sign_req) {
    // sign_req: +1 strictly positive, 0 nonnegative, -1 no sign requirement
    double v;
    try {
      v = spec.eval_rate(e, z, a, x);
    } catch (const EvalError& err) {
      rep.add(name, z, a, x, std::nan(""), err.what());
      return;
    }
    if (sign_req == 1 && !(v > 0.0)) rep.add(name, z, a, x, v, "must be > 0");
    if (sign_req == 0 && !(v >= 0.0)) rep.add(name, z, a, x, v, "must be >= 0");
  };

  for (int j = 0; j < spec.age.n_nodes(); ++j) {
    double a = spec.age.node(j);
    for (int i = 0; i < spec.spatial.n_x; ++i) {
      double x = spec.spatial.node(i);
      check(spec.rates.d, "d", 0.0, a, x, 1);
      check(spec.rates.rho, "rho", 0.0, a, x, 0);
      for (double z : zs) {
        check(spec.rates.m, "m", z, a, x, 0);
        check(spec.rates.b, "b", z, a, x, 1);
        check(spec.rates.dm_dz, "dm_dz", z, a, x, -1);
        check(spec.rates.db_dz, "db_dz", z, a, x, -1);
      }
    }
  }
  return rep;
}

/// True when expr takes (numerically) the same value across all spatial nodes
/// for sampled (z, a); used to gate the scalar net-reproduction reduction.
inline bool rate_is_x_independent(const ModelSpec& spec, const Expr& e, double z_max) {
  const double zs[] = {0.0, 0.5 * z_max, z_max};
  for (double z : zs) {
    for (int j = 0; j < spec.age.n_nodes(); j += std::max(1, spec.age.n_a / 8)) {
      double a = spec.age.node(j);
      double ref = spec.eval_rate(e, z, a, spec.spatial.node(0));
      for (int i = 1; i < spec.spatial.n_x; i += std::max(1, (spec.spatial.n_x - 1) / 8)) {
        double v = spec.eval_rate(e, z, a, spec.spatial.node(i));
        if (std::abs(v - ref) > 1e-12 * std::max(1.0, std::abs(ref))) return false;
      }
    }
  }
  return true;
}

}  // namespace agediff
