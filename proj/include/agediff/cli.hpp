#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "agediff/config.hpp"
#include "agediff/csv.hpp"
#include "agediff/equilibrium_shooting.hpp"
#include "agediff/stability.hpp"

namespace agediff {

struct CliOptions {
  bool strict = false;
  std::optional<std::string> output_dir;
  int threads = 1;
};

/// norms.csv (t, norm_L1sup, norm_L1L2, birth_sup; one row per step) plus
/// state_<k>.csv snapshot matrices (rows = age nodes).
inline void export_trajectory(const Trajectory& traj, const std::string& dir) {
  std::filesystem::create_directories(dir);
  CsvWriter norms(dir + "/norms.csv");
  norms.header("t,norm_L1sup,norm_L1L2,birth_sup");
  for (std::size_t k = 0; k < traj.times.size(); ++k)
    norms.row({traj.times[k], traj.norm_l1sup[k], traj.norm_l1l2[k], traj.birth_sup[k]});
  for (std::size_t s = 0; s < traj.snapshots.size(); ++s) {
    CsvWriter state(dir + "/state_" + std::to_string(s) + ".csv");
    state.matrix(traj.snapshots[s]);
  }
}

namespace detail {

struct ReportWriter {
  std::ofstream out;
  explicit ReportWriter(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
  }
  void kv(const std::string& key, const std::string& value) { out << key << "=" << value << "\n"; }
  void kv(const std::string& key, double value) { kv(key, format_csv_double(value)); }
};

inline Equilibrium select_equilibrium(const RunConfig& cfg) {
  if (cfg.equilibrium_kind == "trivial") return trivial_equilibrium(cfg.model);
  if (cfg.equilibrium_kind == "homogeneous")
    return homogeneous_equilibrium(cfg.model, cfg.n_substeps);
  if (cfg.equilibrium_kind == "shooting") {
    ShootingOptions opts;
    opts.n_substeps = cfg.n_substeps;
    return solve_equilibrium(cfg.model, cfg.shooting_s_lo, cfg.shooting_s_hi, opts);
  }
  throw std::invalid_argument("equilibrium must be 'trivial', 'homogeneous' or 'shooting', got '" +
                              cfg.equilibrium_kind + "'");
}

inline AgeSpaceField initial_state(const RunConfig& cfg) {
  Expr u0 = parse_rate_expression(cfg.u0_source);
  const ModelSpec& spec = cfg.model;
  AgeSpaceField u(spec.age.n_nodes(), spec.spatial.n_x);
  for (int j = 0; j < u.rows; ++j)
    for (int i = 0; i < u.cols; ++i)
      u(j, i) = eval(u0, 0.0, spec.age.node(j), spec.spatial.node(i), spec.params);
  return u;
}

inline ScanWindow scan_window(const RunConfig& cfg) {
  ScanWindow w;
  w.n_scan = cfg.n_scan;
  if (cfg.lambda_min && cfg.lambda_max) {
    w.lambda_min = *cfg.lambda_min;
    w.lambda_max = *cfg.lambda_max;
    w.use_default = false;
  }
  return w;
}

inline void write_verdict_report(ReportWriter& rep, const StabilityReport& sr) {
  rep.kv("verdict", to_string(sr.verdict));
  rep.kv("basis", to_string(sr.basis));
  rep.kv("r_Q0", sr.r_Q0);
  if (sr.lambda0) rep.kv("lambda0", *sr.lambda0);
  if (sr.lambda_star) rep.kv("lambda_star", *sr.lambda_star);
  if (sr.simulated_rate) rep.kv("simulated_rate", *sr.simulated_rate);
  rep.kv("norm", sr.norm_kind == NormKind::l1_age_sup_space ? "l1sup" : "l1l2");
  rep.kv("notes", sr.notes);
}

inline StabilityReport compute_verdict(const RunConfig& cfg, const Equilibrium& eq) {
  if (eq.kind == EquilibriumKind::trivial) return verdict_trivial(cfg.model, cfg.band, cfg.n_substeps);
  return verdict_equilibrium(eq, cfg.model, cfg.band, scan_window(cfg), cfg.n_substeps);
}

inline int run_simulate(const RunConfig& cfg, const std::string& dir) {
  AgeSpaceField u0 = initial_state(cfg);
  StepOptions opts;
  opts.n_substeps = cfg.n_substeps;
  opts.sup_cap = cfg.blowup_cap;
  long stride = cfg.snapshot_stride > 0 ? cfg.snapshot_stride : 0;
  Trajectory traj;
  bool numerical_failure = false;
  std::string failure;
  try {
    traj = simulate(u0, cfg.horizon, cfg.model, stride, opts);
  } catch (const NumericalError& err) {
    numerical_failure = true;
    failure = err.what();
  }
  export_trajectory(traj, dir);
  ReportWriter rep(dir + "/report.txt");
  rep.kv("command", "simulate");
  rep.kv("steps", static_cast<double>(traj.times.empty() ? 0 : traj.times.size() - 1));
  rep.kv("blew_up", traj.blew_up ? "yes" : "no");
  if (numerical_failure) rep.kv("error", failure);
  if (numerical_failure || traj.blew_up) {
    std::cerr << "simulate: " << (numerical_failure ? failure : "blow-up cap exceeded")
              << " (partial trajectory written)\n";
    return 2;
  }
  return 0;
}

inline int run_equilibrium(const RunConfig& cfg, const std::string& dir) {
  Equilibrium eq = select_equilibrium(cfg);
  std::filesystem::create_directories(dir);
  ReportWriter rep(dir + "/equilibrium.txt");
  rep.kv("kind", to_string(eq.kind));
  rep.kv("residual", eq.residual);
  rep.kv("accepted", eq.accepted ? "yes" : "no");
  rep.kv("ubar_sup", sup_norm(eq.ubar));
  rep.kv("phi_sup", sup_norm(eq.phi));
  if (!eq.note.empty()) rep.kv("notes", eq.note);
  CsvWriter phi(dir + "/phi.csv");
  phi.matrix(eq.phi);
  return eq.accepted ? 0 : 2;
}

inline int run_spectrum(const RunConfig& cfg, const std::string& dir, int threads) {
  Equilibrium eq = select_equilibrium(cfg);
  LinearizedModel lin = build_linearization(eq, cfg.model);
  LinearizedAssembler as(lin, cfg.model, cfg.n_substeps, threads);
  SpectralReport sr = spectral_report(as, scan_window(cfg));
  std::filesystem::create_directories(dir);
  CsvWriter scan(dir + "/scan.csv");
  scan.header("lambda,sigma_min,r_Q");
  for (const ScanPoint& p : sr.sigma_min_curve) scan.row({p.lambda, p.sigma_min, p.r_q});
  ReportWriter rep(dir + "/spectrum.txt");
  rep.kv("r_Q0", sr.r_Q0);
  rep.kv("lambda0", sr.lambda0);
  if (sr.dominant_real_eigenvalue) rep.kv("dominant_real_eigenvalue", *sr.dominant_real_eigenvalue);
  rep.kv("scan_points", static_cast<double>(sr.sigma_min_curve.size()));
  rep.kv("notes", sr.note);
  return 0;
}

inline int run_verdict(const RunConfig& cfg, const std::string& dir, bool strict) {
  Equilibrium eq = select_equilibrium(cfg);
  StabilityReport sr = compute_verdict(cfg, eq);
  std::filesystem::create_directories(dir);
  ReportWriter rep(dir + "/report.txt");
  write_verdict_report(rep, sr);
  if (strict && sr.verdict == Verdict::inconclusive) return 3;
  return 0;
}

inline int run_verify(const RunConfig& cfg, const std::string& dir, bool strict) {
  Equilibrium eq = select_equilibrium(cfg);
  StabilityReport sr = compute_verdict(cfg, eq);
  StepOptions opts;
  opts.n_substeps = cfg.n_substeps;
  opts.sup_cap = cfg.blowup_cap;
  SimulationVerification sim =
      verify_by_simulation(eq, cfg.model, cfg.epsilon, cfg.horizon, cfg.norm_kind, opts);
  sr.simulated_rate = sim.rate;
  sr.norm_kind = cfg.norm_kind;
  if (!sim.note.empty()) detail::append_note(sr.notes, sim.note);

  std::string agreement = "na";
  if (sr.verdict != Verdict::inconclusive && sim.rate) {
    const bool growing = *sim.rate > 0.0;
    agreement = (growing == (sr.verdict == Verdict::unstable)) ? "yes" : "no";
  }

  std::filesystem::create_directories(dir);
  ReportWriter rep(dir + "/report.txt");
  write_verdict_report(rep, sr);
  rep.kv("sign_agreement", agreement);
  if (sim.blew_up) rep.kv("blew_up", "yes");
  CsvWriter dist(dir + "/distance.csv");
  dist.header("t,distance");
  for (std::size_t k = 0; k < sim.times.size(); ++k) dist.row({sim.times[k], sim.distances[k]});
  if (strict && sr.verdict == Verdict::inconclusive) return 3;
  return 0;
}

inline int run_sweep(const RunConfig& cfg, const std::string& dir) {
  if (cfg.sweep_param.empty())
    throw std::invalid_argument("sweep: missing sweep_param");
  std::vector<std::string> names;
  for (const Expr* e : {&cfg.model.rates.m, &cfg.model.rates.b, &cfg.model.rates.d,
                        &cfg.model.rates.rho, &cfg.model.rates.dm_dz, &cfg.model.rates.db_dz})
    collect_params(*e, names);
  if (std::find(names.begin(), names.end(), cfg.sweep_param) == names.end())
    throw std::invalid_argument("sweep: parameter '" + cfg.sweep_param +
                                "' does not appear in any rate expression");
  if (cfg.sweep_steps < 1) throw std::invalid_argument("sweep: sweep_steps must be >= 1");

  std::filesystem::create_directories(dir);
  CsvWriter out(dir + "/sweep.csv");
  out.header("value,r_Q0,lambda0,verdict");
  for (int k = 0; k < cfg.sweep_steps; ++k) {
    const double v = cfg.sweep_steps == 1
                         ? cfg.sweep_from
                         : cfg.sweep_from + (cfg.sweep_to - cfg.sweep_from) * k / (cfg.sweep_steps - 1);
    ModelSpec spec = cfg.model;
    spec.params[cfg.sweep_param] = v;
    StabilityReport sr = verdict_trivial(spec, cfg.band, cfg.n_substeps);
    out.row_with_text({v, sr.r_Q0, sr.lambda0 ? *sr.lambda0 : std::nan("")},
                      to_string(sr.verdict));
  }
  return 0;
}

}  // namespace detail

/// Executes the configured command. Exit status: 0 success, 1 usage/config
/// error, 2 numerical failure, 3 inconclusive verdict under strict mode.
inline int run(const std::string& config_path, const CliOptions& options = {}) {
  try {
    RunConfig cfg = load_config(config_path);
    const std::string dir = options.output_dir.value_or(cfg.output_dir);

    ValidationReport val = validate_spec(cfg.model, cfg.model.z_max);
    if (!val.passed) {
      std::cerr << config_path << ": model validation failed (" << val.total_violations
                << " violation(s)):\n";
      for (const auto& v : val.violations)
        std::cerr << "  " << v.rate << " at (z=" << v.z << ", a=" << v.a << ", x=" << v.x
                  << "): " << v.what << "\n";
      return 1;
    }

    switch (cfg.command) {
      case Command::simulate: return detail::run_simulate(cfg, dir);
      case Command::equilibrium: return detail::run_equilibrium(cfg, dir);
      case Command::spectrum: return detail::run_spectrum(cfg, dir, options.threads);
      case Command::verdict: return detail::run_verdict(cfg, dir, options.strict);
      case Command::verify: return detail::run_verify(cfg, dir, options.strict);
      case Command::sweep: return detail::run_sweep(cfg, dir);
    }
    return 1;
  } catch (const ConfigError& err) {
    std::cerr << err.what() << "\n";
    return 1;
  } catch (const ParseError& err) {
    std::cerr << config_path << ": " << err.what() << "\n";
    return 1;
  } catch (const ModelError& err) {
    std::cerr << config_path << ": " << err.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& err) {
    std::cerr << config_path << ": " << err.what() << "\n";
    return 1;
  } catch (const NumericalError& err) {
    std::cerr << config_path << ": numerical failure: " << err.what() << "\n";
    return 2;
  } catch (const EvalError& err) {
    std::cerr << config_path << ": evaluation failure: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << config_path << ": " << err.what() << "\n";
    return 1;
  }
}

}  // namespace agediff
