#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "agediff/model.hpp"
#include "agediff/stability.hpp"

namespace agediff {

/// Configuration problem with a file:line position for diagnostics.
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& path, int line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what) {}
};

enum class Command { simulate, equilibrium, spectrum, verdict, verify, sweep };

inline std::optional<Command> command_from_string(const std::string& s) {
  if (s == "simulate") return Command::simulate;
  if (s == "equilibrium") return Command::equilibrium;
  if (s == "spectrum") return Command::spectrum;
  if (s == "verdict") return Command::verdict;
  if (s == "verify") return Command::verify;
  if (s == "sweep") return Command::sweep;
  return std::nullopt;
}

/// Parsed run configuration: the model plus command parameters.
struct RunConfig {
  ModelSpec model;
  Command command = Command::verdict;
  std::string output_dir = ".";
  long seed = 0;  // reserved for randomized harnesses; outputs do not use it

  // command parameters
  double horizon = 1.0;
  double epsilon = 0.05;
  long snapshot_stride = 0;
  int n_substeps = 1;
  std::string u0_source = "1";
  std::string equilibrium_kind = "trivial";  // trivial | homogeneous | shooting
  double shooting_s_lo = 0.0, shooting_s_hi = 1.0;
  std::optional<double> lambda_min, lambda_max;
  int n_scan = 41;
  NormKind norm_kind = NormKind::l1_age_sup_space;
  double band = default_verdict_band;
  std::string sweep_param;
  double sweep_from = 0.0, sweep_to = 1.0;
  int sweep_steps = 1;
  double blowup_cap = 1e12;
};

namespace detail {

struct IniEntry {
  std::string value;
  int line;
};
using IniSection = std::map<std::string, IniEntry>;
using IniFile = std::map<std::string, IniSection>;

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline IniFile parse_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  IniFile file;
  std::string section;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(path, lineno, "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(path, lineno, "empty section name");
      file[section];
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(path, lineno, "expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(path, lineno, "empty key");
    if (section.empty()) throw ConfigError(path, lineno, "key outside of any [section]");
    file[section][key] = {value, lineno};
  }
  return file;
}

struct SectionReader {
  const std::string& path;
  const std::string name;
  const IniSection* section;

  const IniEntry* find(const std::string& key) const {
    if (section == nullptr) return nullptr;
    auto it = section->find(key);
    return it == section->end() ? nullptr : &it->second;
  }

  std::string require(const std::string& key) const {
    const IniEntry* e = find(key);
    if (e == nullptr)
      throw ConfigError(path, 0, "missing key '" + key + "' in section [" + name + "]");
    return e->value;
  }

  double require_double(const std::string& key) const { return to_double(key, require(key)); }

  double get_double(const std::string& key, double fallback) const {
    const IniEntry* e = find(key);
    return e == nullptr ? fallback : to_double(key, e->value);
  }

  long get_long(const std::string& key, long fallback) const {
    const IniEntry* e = find(key);
    if (e == nullptr) return fallback;
    try {
      std::size_t used = 0;
      long v = std::stol(e->value, &used);
      if (used != e->value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(path, e->line, "key '" + key + "' is not an integer: " + e->value);
    }
  }

  long require_long(const std::string& key) const {
    require(key);
    return get_long(key, 0);
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const IniEntry* e = find(key);
    return e == nullptr ? fallback : e->value;
  }

 private:
  double to_double(const std::string& key, const std::string& value) const {
    try {
      std::size_t used = 0;
      double v = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      const IniEntry* e = find(key);
      throw ConfigError(path, e ? e->line : 0, "key '" + key + "' is not a number: " + value);
    }
  }
};

}  // namespace detail

/// Loads the structured text config. Sections: [grid] length, n_x, boundary;
/// [age] a_max, n_a; [rates] m, b, d, rho, optional dm_dz, db_dz; [run]
/// command-specific keys plus param.<name> defaults for expression parameters.
inline RunConfig load_config(const std::string& path) {
  detail::IniFile ini = detail::parse_ini(path);

  auto section = [&](const char* name, bool required) -> detail::SectionReader {
    auto it = ini.find(name);
    if (it == ini.end()) {
      if (required)
        throw ConfigError(path, 0, std::string("missing required section [") + name + "]");
      return {path, name, nullptr};
    }
    return {path, name, &it->second};
  };

  detail::SectionReader grid = section("grid", true);
  detail::SectionReader age = section("age", true);
  detail::SectionReader rates = section("rates", true);
  detail::SectionReader run = section("run", false);

  RunConfig cfg;

  const std::string boundary = grid.require("boundary");
  Boundary b;
  if (boundary == "dirichlet")
    b = Boundary::dirichlet;
  else if (boundary == "neumann")
    b = Boundary::neumann;
  else
    throw ConfigError(path, grid.find("boundary")->line,
                      "boundary must be 'dirichlet' or 'neumann', got '" + boundary + "'");

  try {
    cfg.model.spatial = SpatialGrid(grid.require_double("length"),
                                    static_cast<int>(grid.require_long("n_x")), b);
    cfg.model.age =
        AgeGrid(age.require_double("a_max"), static_cast<int>(age.require_long("n_a")));
  } catch (const std::invalid_argument& err) {
    throw ConfigError(path, 0, err.what());
  }

  auto parse_rate = [&](const char* key) -> Expr {
    const detail::IniEntry* e = rates.find(key);
    if (e == nullptr)
      throw ConfigError(path, 0, std::string("missing key '") + key + "' in section [rates]");
    try {
      return parse_rate_expression(e->value);
    } catch (const ParseError& pe) {
      throw ConfigError(path, e->line, std::string("in rate '") + key + "': " + pe.what());
    }
  };

  cfg.model.rates.m = parse_rate("m");
  cfg.model.rates.b = parse_rate("b");
  cfg.model.rates.d = parse_rate("d");
  cfg.model.rates.rho = parse_rate("rho");
  try {
    cfg.model.rates.dm_dz =
        rates.find("dm_dz") ? parse_rate("dm_dz") : differentiate_in_z(cfg.model.rates.m);
    cfg.model.rates.db_dz =
        rates.find("db_dz") ? parse_rate("db_dz") : differentiate_in_z(cfg.model.rates.b);
  } catch (const DerivativeError& de) {
    throw ConfigError(path, 0, de.what());
  }

  if (run.section != nullptr) {
    const std::string cmd = run.get_string("command", "verdict");
    auto c = command_from_string(cmd);
    if (!c)
      throw ConfigError(path, run.find("command") ? run.find("command")->line : 0,
                        "unknown command '" + cmd + "'");
    cfg.command = *c;

    cfg.model.z_max = run.get_double("z_max", cfg.model.z_max);
    cfg.horizon = run.get_double("horizon", cfg.horizon);
    cfg.epsilon = run.get_double("epsilon", cfg.epsilon);
    cfg.snapshot_stride = run.get_long("snapshot_stride", cfg.snapshot_stride);
    cfg.n_substeps = static_cast<int>(run.get_long("n_substeps", cfg.n_substeps));
    cfg.u0_source = run.get_string("u0", cfg.u0_source);
    cfg.equilibrium_kind = run.get_string("equilibrium", cfg.equilibrium_kind);
    cfg.shooting_s_lo = run.get_double("s_lo", cfg.shooting_s_lo);
    cfg.shooting_s_hi = run.get_double("s_hi", cfg.shooting_s_hi);
    if (run.find("lambda_min")) cfg.lambda_min = run.require_double("lambda_min");
    if (run.find("lambda_max")) cfg.lambda_max = run.require_double("lambda_max");
    cfg.n_scan = static_cast<int>(run.get_long("n_scan", cfg.n_scan));
    cfg.band = run.get_double("band", cfg.band);
    cfg.seed = run.get_long("seed", cfg.seed);
    cfg.output_dir = run.get_string("output_dir", cfg.output_dir);
    cfg.sweep_param = run.get_string("sweep_param", cfg.sweep_param);
    cfg.sweep_from = run.get_double("sweep_from", cfg.sweep_from);
    cfg.sweep_to = run.get_double("sweep_to", cfg.sweep_to);
    cfg.sweep_steps = static_cast<int>(run.get_long("sweep_steps", cfg.sweep_steps));
    cfg.blowup_cap = run.get_double("blowup_cap", cfg.blowup_cap);

    const std::string norm = run.get_string("norm", "l1sup");
    if (norm == "l1sup")
      cfg.norm_kind = NormKind::l1_age_sup_space;
    else if (norm == "l1l2")
      cfg.norm_kind = NormKind::l1_age_l2_space;
    else
      throw ConfigError(path, run.find("norm")->line, "norm must be 'l1sup' or 'l1l2'");

    // Expression parameter defaults: param.<name> = value
    for (const auto& [key, entry] : *run.section) {
      if (key.rfind("param.", 0) == 0) {
        const std::string name = key.substr(6);
        if (name.empty()) throw ConfigError(path, entry.line, "empty parameter name");
        cfg.model.params[name] = run.require_double(key);
      }
    }
  }
  return cfg;
}

}  // namespace agediff
