#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <thread>
#include <vector>

#include "agediff/diffusion.hpp"
#include "agediff/linearization.hpp"
#include "agediff/model.hpp"

namespace agediff {

enum class MatrixLabel { Q_lambda, K_block, eigen_system };

/// Dense realization of Q_lambda(phi), a K block, or the eigen-system M(lambda).
struct OperatorMatrix {
  Eigen::MatrixXd mat;
  MatrixLabel label = MatrixLabel::Q_lambda;
};

struct PowerIterationResult {
  double radius = 0.0;
  Eigen::VectorXd vec;
  long iterations = 0;
  double last_gap = 0.0;
};

/// Power iteration with max-norm normalization for entrywise-nonnegative
/// matrices. Converges when successive norm ratios differ by <= tol and the
/// eigen-residual is small enough for the vector to be usable downstream.
inline PowerIterationResult perron_power_iteration(const Eigen::MatrixXd& M, double tol = 1e-10,
                                                   long max_iter = 100000) {
  const int n = static_cast<int>(M.rows());
  PowerIterationResult res;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd w(n);
  double rho_prev = -1.0;
  for (long it = 1; it <= max_iter; ++it) {
    w.noalias() = M * v;
    const double rho = w.lpNorm<Eigen::Infinity>();
    res.iterations = it;
    if (rho == 0.0) {  // nilpotent direction hit; radius 0 for nonnegative M
      res.radius = 0.0;
      res.vec = Eigen::VectorXd::Ones(n) / n;
      return res;
    }
    const double gap = std::abs(rho - rho_prev);
    res.last_gap = gap;
    const double resid = (w - rho * v).lpNorm<Eigen::Infinity>();
    v = w / rho;
    if (gap <= tol * std::max(1.0, rho) && resid <= 1e-9 * std::max(1.0, rho) * std::max(1.0, v.lpNorm<Eigen::Infinity>())) {
      res.radius = rho;
      res.vec = v;
      return res;
    }
    rho_prev = rho;
  }
  throw NumericalError("power iteration did not converge within 1e5 iterations (last gap " +
                       std::to_string(res.last_gap) + ")");
}

/// Spectral radius: Perron power iteration for entrywise-nonnegative matrices
/// (up to -1e-12), dense Hessenberg-QR eigenvalues otherwise.
inline double spectral_radius(const Eigen::MatrixXd& M) {
  if (M.rows() != M.cols()) throw std::invalid_argument("spectral_radius: matrix not square");
  if (M.size() == 0) return 0.0;
  if (M.minCoeff() >= -1e-12) return perron_power_iteration(M).radius;
  Eigen::EigenSolver<Eigen::MatrixXd> es(M, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline double spectral_radius(const OperatorMatrix& M) { return spectral_radius(M.mat); }

/// Smallest singular value by dense SVD; deterministic.
inline double smallest_singular_value(const Eigen::MatrixXd& M) {
  if (M.size() == 0) return 0.0;
  if (M.rows() <= 32) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    return svd.singularValues().minCoeff();
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(M);
  return svd.singularValues().minCoeff();
}

inline double smallest_singular_value(const OperatorMatrix& M) {
  return smallest_singular_value(M.mat);
}

/// Smallest singular value together with its right singular vector.
inline std::pair<double, Eigen::VectorXd> smallest_singular_pair(const Eigen::MatrixXd& M) {
  Eigen::BDCSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeFullV);
  Eigen::Index idx;
  const double smin = svd.singularValues().minCoeff(&idx);
  return {smin, svd.matrixV().col(idx)};
}

namespace detail {

inline void parallel_columns(int n_cols, int threads, const std::function<void(int, int)>& body) {
  if (threads <= 1 || n_cols < 2 * threads) {
    body(0, n_cols);
    return;
  }
  std::vector<std::thread> pool;
  const int chunk = (n_cols + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const int lo = t * chunk, hi = std::min(n_cols, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(body, lo, hi);
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Shared assembly engine for one linearization: caches the column sweep
/// P_j = Pi_phi(a_j, 0) e_i once and reuses it for every lambda. The cell
/// propagation is the same split step the time steppers use.
class LinearizedAssembler {
 public:
  LinearizedAssembler(const LinearizedModel& lin, const ModelSpec& spec, int n_substeps = 1,
                      int threads = 1)
      : lin_(lin), spec_(spec), n_substeps_(std::max(1, n_substeps)), threads_(std::max(1, threads)) {
    const int n = spec.spatial.n_x;
    const int n_nodes = spec.age.n_nodes();
    if (lin.gen_phi.absorb_m)
      death_ = FrozenDeathFactors(lin.gen_phi.absorb_m->m, lin.gen_phi.absorb_m->ubar, spec);
    w_age_ = age_weights(spec.age);

    bphi_.resize(n_nodes);
    rho_.resize(n_nodes);
    dsrc_.resize(n_nodes);
    for (int j = 0; j < n_nodes; ++j) {
      bphi_[j] = Eigen::ArrayXd(n);
      rho_[j] = Eigen::ArrayXd(n);
      dsrc_[j] = Eigen::ArrayXd(n);
      for (int i = 0; i < n; ++i) {
        bphi_[j][i] = lin.birth_multiplier(j, i);
        rho_[j][i] = lin.rho_grid(j, i);
        dsrc_[j][i] = -lin.kernel_factor(j, i);  // d1m(ubar_phi,a)[.] phi(a)
      }
    }

    P_.resize(n_nodes);
    P_[0] = Eigen::MatrixXd::Identity(n, n);
    for (int j = 0; j + 1 < n_nodes; ++j) {
      P_[j + 1] = P_[j];
      cell_apply(j, P_[j + 1]);
    }
  }

  int n() const { return spec_.spatial.n_x; }
  int n_substeps() const { return n_substeps_; }
  const ModelSpec& spec() const { return spec_; }
  const LinearizedModel& linearization() const { return lin_; }
  const Eigen::MatrixXd& propagator(int j) const { return P_[j]; }

  /// Q_lambda(phi) = int e^{-lambda a} b_phi(a) Pi_phi(a,0) da (trapezoid).
  Eigen::MatrixXd Q(double lambda) const {
    const int nn = spec_.age.n_nodes();
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n(), n());
    for (int j = 0; j < nn; ++j) {
      const double w = w_age_[j] * std::exp(-lambda * spec_.age.node(j));
      q.noalias() += w * (bphi_[j].matrix().asDiagonal() * P_[j]);
    }
    return q;
  }

  double r_of_lambda(double lambda) const { return spectral_radius(Q(lambda)); }

  /// K_{phi,lambda}(a_index) as a matrix acting on psibar, by the Duhamel
  /// trapezoid recursion along age. Zero when the nonlocal kernel vanishes.
  Eigen::MatrixXd K(double lambda, int a_index) const {
    if (a_index < 0 || a_index > spec_.age.n_a)
      throw std::invalid_argument("assemble_K: a_index out of range");
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n(), n());
    if (lin_.kernel_is_zero || a_index == 0) return W;
    const double da = spec_.age.delta_a();
    const double decay = std::exp(-lambda * da);
    for (int j = 0; j < a_index; ++j) {
      W.diagonal() += (0.5 * da) * dsrc_[j].matrix();
      cell_apply(j, W);
      W *= decay;
      W.diagonal() += (0.5 * da) * dsrc_[j + 1].matrix();
    }
    return W;
  }

  /// The 2 n_x by 2 n_x system M(lambda) acting on (psi(0), psibar):
  ///   [ I - Q_lambda                int b_phi K da ]
  ///   [ -int e^{-la} rho Pi da      I + int rho K da ]
  Eigen::MatrixXd eigen_system(double lambda) const {
    const int nx = n();
    const int nn = spec_.age.n_nodes();
    const double da = spec_.age.delta_a();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(2 * nx, 2 * nx);

    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(nx, nx);
    Eigen::MatrixXd p21 = Eigen::MatrixXd::Zero(nx, nx);
    for (int j = 0; j < nn; ++j) {
      const double w = w_age_[j] * std::exp(-lambda * spec_.age.node(j));
      q.noalias() += w * (bphi_[j].matrix().asDiagonal() * P_[j]);
      p21.noalias() += w * (rho_[j].matrix().asDiagonal() * P_[j]);
    }

    Eigen::MatrixXd sum_bK = Eigen::MatrixXd::Zero(nx, nx);
    Eigen::MatrixXd sum_rhoK = Eigen::MatrixXd::Zero(nx, nx);
    if (!lin_.kernel_is_zero) {
      const double decay = std::exp(-lambda * da);
      Eigen::MatrixXd W = Eigen::MatrixXd::Zero(nx, nx);
      for (int j = 0; j + 1 < nn; ++j) {
        W.diagonal() += (0.5 * da) * dsrc_[j].matrix();
        cell_apply(j, W);
        W *= decay;
        W.diagonal() += (0.5 * da) * dsrc_[j + 1].matrix();
        sum_bK.noalias() += w_age_[j + 1] * (bphi_[j + 1].matrix().asDiagonal() * W);
        sum_rhoK.noalias() += w_age_[j + 1] * (rho_[j + 1].matrix().asDiagonal() * W);
      }
    }

    M.topLeftCorner(nx, nx) = Eigen::MatrixXd::Identity(nx, nx) - q;
    M.topRightCorner(nx, nx) = sum_bK;
    M.bottomLeftCorner(nx, nx) = -p21;
    M.bottomRightCorner(nx, nx) = Eigen::MatrixXd::Identity(nx, nx) + sum_rhoK;
    return M;
  }

  /// Reconstructs psi(a_j) = e^{-lambda a_j} Pi_phi(a_j,0) psi0 - K(a_j) psibar
  /// on all age nodes from an eigen-system kernel vector (psi0, psibar).
  AgeSpaceField reconstruct_eigenfunction(double lambda, const Eigen::VectorXd& psi0,
                                          const Eigen::VectorXd& psibar) const {
    const int nx = n();
    const int nn = spec_.age.n_nodes();
    const double da = spec_.age.delta_a();
    AgeSpaceField psi(nn, nx);
    Eigen::VectorXd carried = psi0;
    Eigen::VectorXd kterm = Eigen::VectorXd::Zero(nx);
    for (int i = 0; i < nx; ++i) psi(0, i) = psi0[i];
    const double decay = std::exp(-lambda * da);
    std::vector<double> scratch(nx);
    for (int j = 0; j + 1 < nn; ++j) {
      // e^{-lambda a} Pi(a,0) psi0 part
      cell_apply_vector(j, carried, scratch);
      carried *= decay;
      if (!lin_.kernel_is_zero) {
        // K(a) psibar part, same recursion as the matrix-valued sweep
        kterm += (0.5 * da) * (dsrc_[j] * psibar.array()).matrix();
        cell_apply_vector(j, kterm, scratch);
        kterm *= decay;
        kterm += (0.5 * da) * (dsrc_[j + 1] * psibar.array()).matrix();
      }
      for (int i = 0; i < nx; ++i) psi(j + 1, i) = carried[i] - kterm[i];
    }
    return psi;
  }

  /// Applies the split-cell propagation of cell j to every column in place.
  void cell_apply(int j, Eigen::MatrixXd& cols) const {
    const double a_lo = spec_.age.node(j);
    const double ds = spec_.age.delta_a() / n_substeps_;
    GeneratorSpec diffusion_only{lin_.gen_phi.d, std::nullopt};
    for (int k = 0; k < n_substeps_; ++k) {
      StepOperator op(diffusion_only, a_lo + (k + 0.5) * ds, ds, spec_);
      const int nc = static_cast<int>(cols.cols());
      detail::parallel_columns(nc, threads_, [&](int lo, int hi) {
        std::vector<double> scratch(cols.rows());
        for (int c = lo; c < hi; ++c) op.advance(cols.col(c).data(), scratch.data());
      });
    }
    if (death_.factor.rows > 0) {
      Eigen::Map<const Eigen::ArrayXd> f(death_.factor.row(j), cols.rows());
      cols.array().colwise() *= f;
    }
  }

  void cell_apply_vector(int j, Eigen::VectorXd& v, std::vector<double>& scratch) const {
    const double a_lo = spec_.age.node(j);
    const double ds = spec_.age.delta_a() / n_substeps_;
    GeneratorSpec diffusion_only{lin_.gen_phi.d, std::nullopt};
    for (int k = 0; k < n_substeps_; ++k) {
      StepOperator op(diffusion_only, a_lo + (k + 0.5) * ds, ds, spec_);
      op.advance(v.data(), scratch.data());
    }
    if (death_.factor.rows > 0) {
      Eigen::Map<const Eigen::ArrayXd> f(death_.factor.row(j), v.size());
      v.array() *= f;
    }
  }

 private:
  LinearizedModel lin_;
  const ModelSpec& spec_;
  int n_substeps_;
  int threads_;
  std::vector<Eigen::MatrixXd> P_;
  FrozenDeathFactors death_;
  std::vector<double> w_age_;
  std::vector<Eigen::ArrayXd> bphi_, rho_, dsrc_;
};

// ---------------------------------------------------------------------------
// Operation-level wrappers
// ---------------------------------------------------------------------------

inline OperatorMatrix assemble_Q(double lambda, const LinearizedModel& lin, const ModelSpec& spec,
                                 int n_substeps = 1) {
  LinearizedAssembler as(lin, spec, n_substeps);
  return {as.Q(lambda), MatrixLabel::Q_lambda};
}

inline OperatorMatrix assemble_K(double lambda, int a_index, const LinearizedModel& lin,
                                 const ModelSpec& spec, int n_substeps = 1) {
  LinearizedAssembler as(lin, spec, n_substeps);
  return {as.K(lambda, a_index), MatrixLabel::K_block};
}

inline OperatorMatrix assemble_eigen_system(double lambda, const LinearizedModel& lin,
                                            const ModelSpec& spec, int n_substeps = 1) {
  LinearizedAssembler as(lin, spec, n_substeps);
  return {as.eigen_system(lambda), MatrixLabel::eigen_system};
}

/// The unique real lambda0 with r(Q_{lambda0}) = 1: brackets by doubling
/// outward from 0, then bisects to |r - 1| <= tol. r is strictly decreasing.
inline double find_lambda0(const LinearizedAssembler& as, double tol = 1e-8,
                           double lambda_cap = 100.0) {
  double r0 = as.r_of_lambda(0.0);
  if (std::abs(r0 - 1.0) <= tol) return 0.0;

  double lo = 0.0, hi = 0.0, r_lo = r0, r_hi = r0;
  if (r0 > 1.0) {  // lambda0 > 0
    double step = 1.0;
    hi = step;
    while ((r_hi = as.r_of_lambda(hi)) > 1.0) {
      lo = hi;
      step *= 2.0;
      hi = step;
      if (hi > lambda_cap)
        throw NumericalError("find_lambda0: no bracket below the lambda cap");
    }
  } else {  // lambda0 < 0
    double step = 1.0;
    lo = -step;
    while ((r_lo = as.r_of_lambda(lo)) < 1.0) {
      hi = lo;
      step *= 2.0;
      lo = -step;
      if (lo < -lambda_cap)
        throw NumericalError("find_lambda0: no bracket above the negative lambda cap");
    }
  }

  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    mid = 0.5 * (lo + hi);
    const double rm = as.r_of_lambda(mid);
    if (std::abs(rm - 1.0) <= tol) return mid;
    if (rm > 1.0)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 1e-14 * std::max(1.0, std::abs(mid))) break;
  }
  return mid;
}

inline double find_lambda0(const LinearizedModel& lin, const ModelSpec& spec, int n_substeps = 1,
                           double tol = 1e-8, double lambda_cap = 100.0) {
  LinearizedAssembler as(lin, spec, n_substeps);
  return find_lambda0(as, tol, lambda_cap);
}

struct ScanPoint {
  double lambda;
  double sigma_min;
  double r_q;
};

struct ScanWindow {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  int n_scan = 41;
  bool use_default = true;  // when set, the window is lambda0 +- 5
};

/// Spectral summary: the scan curve, lambda0, and the refined dominant real
/// eigenvalue when a singular dip was confirmed.
struct SpectralReport {
  double r_Q0 = 0.0;
  double lambda0 = 0.0;
  std::optional<double> dominant_real_eigenvalue;
  std::vector<ScanPoint> sigma_min_curve;
  long iterations = 0;
  std::string note;
};

namespace detail {

/// Golden-section minimization of f on [a, b]; returns (arg, value).
template <typename F>
std::pair<double, double> golden_minimize(F&& f, double a, double b, int depth = 60) {
  const double inv_phi = 0.6180339887498949;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int it = 0; it < depth; ++it) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    }
  }
  return f1 <= f2 ? std::make_pair(x1, f1) : std::make_pair(x2, f2);
}

}  // namespace detail

/// Scans lambda -> sigma_min(M(lambda)) over the window, refines local minima
/// by golden-section, and accepts a refined dip as an eigenvalue when
/// sigma_min <= 1e-6 * ||M||_inf. Returns the full report; the dominant value
/// is the LARGEST accepted lambda.
inline SpectralReport spectral_report(const LinearizedAssembler& as, ScanWindow window = {}) {
  SpectralReport rep;
  rep.lambda0 = find_lambda0(as);
  rep.r_Q0 = as.r_of_lambda(0.0);

  double lo = window.lambda_min, hi = window.lambda_max;
  int n_scan = window.n_scan;
  if (window.use_default) {
    lo = rep.lambda0 - 5.0;
    hi = rep.lambda0 + 5.0;
  }
  if (n_scan < 5) n_scan = 5;
  if (!(hi > lo)) throw std::invalid_argument("spectral scan: empty lambda window");

  std::vector<double> svals(n_scan);
  rep.sigma_min_curve.resize(n_scan);
  for (int k = 0; k < n_scan; ++k) {
    const double lam = lo + (hi - lo) * k / (n_scan - 1);
    const double s = smallest_singular_value(as.eigen_system(lam));
    svals[k] = s;
    rep.sigma_min_curve[k] = {lam, s, as.r_of_lambda(lam)};
    ++rep.iterations;
  }

  std::vector<double> sorted = svals;
  std::nth_element(sorted.begin(), sorted.begin() + n_scan / 2, sorted.end());
  const double median = sorted[n_scan / 2];

  std::optional<double> best;
  for (int k = 1; k + 1 < n_scan; ++k) {
    if (!(svals[k] <= svals[k - 1] && svals[k] <= svals[k + 1])) continue;
    if (!(svals[k] < 0.9 * median)) continue;  // shallow-dip pre-filter
    const double a = rep.sigma_min_curve[k - 1].lambda;
    const double b = rep.sigma_min_curve[k + 1].lambda;
    auto [lam_star, s_star] = detail::golden_minimize(
        [&](double lam) {
          ++rep.iterations;
          return smallest_singular_value(as.eigen_system(lam));
        },
        a, b);
    const double scale = as.eigen_system(lam_star).lpNorm<Eigen::Infinity>();
    if (s_star <= 1e-6 * scale) {
      if (!best || lam_star > *best) best = lam_star;
    }
  }
  rep.dominant_real_eigenvalue = best;
  if (!best) rep.note = "no real eigenvalue in scan window";
  return rep;
}

inline std::optional<double> dominant_real_eigenvalue(const LinearizedModel& lin,
                                                      const ModelSpec& spec,
                                                      ScanWindow window = {}, int n_substeps = 1) {
  LinearizedAssembler as(lin, spec, n_substeps);
  return spectral_report(as, window).dominant_real_eigenvalue;
}

}  // namespace agediff
