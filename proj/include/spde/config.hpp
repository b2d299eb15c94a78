#pragma once

// Flat key=value run configuration.
//
// One entry per line, `key = value`, '#' starts a comment. Keys are dotted
// (model.drift.kind, scheme.tau, study.samples, ...); the full grammar with
// defaults is `kKeys` below and is printed by `spde run --dry-run`. Unknown
// keys, malformed values and constraint violations raise ConfigError naming
// the key.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spde/coefficients.hpp"
#include "spde/errors.hpp"
#include "spde/experiments.hpp"
#include "spde/schemes.hpp"

namespace spde {

struct RunConfig {
  std::string drift_kind = "allen_cahn";
  std::vector<double> drift_coeffs;
  double drift_c = -1.0;
  std::string diffusion_kind = "linear";
  double sigma = 0.5;
  std::string initial = "sin_pi";

  int noise_modes = 0;
  double noise_decay = 4.0;

  std::string scheme = "euler";
  std::string basis = "spectral";
  int modes = 64;
  int cells = 64;
  double tau = 0x1.0p-10;
  double horizon = 0.5;

  double newton_tol = 1e-12;
  int newton_max_iter = 50;
  double newton_damping = 1.0;

  std::string axis = "temporal";
  std::vector<int> resolutions;  // empty: axis default
  int reference = 0;             // 0: axis default
  int samples = 0;               // 0: axis default
  std::uint64_t seed = 1;
  int threads = 0;

  std::string out_dir = "out";
  bool write_csv = true;

  bool operator==(const RunConfig&) const = default;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// Shortest text that parses back to the same double.
inline std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

[[noreturn]] inline void bad(const std::string& key, const std::string& value, const std::string& why) {
  throw ConfigError(key + " = '" + value + "': " + why);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) bad(key, v, "expected a finite real number");
    return d;
  } catch (const std::logic_error&) {
    bad(key, v, "expected a real number");
  }
}

template <class Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "expected an integer");
  return out;
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string one_of(const std::string& key, const std::string& v, std::initializer_list<const char*> options) {
  for (const char* o : options) if (v == o) return v;
  std::string all;
  for (const char* o : options) all += std::string(all.empty() ? "" : "|") + o;
  bad(key, v, "expected one of " + all);
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) out += fmt_double(v[i]);
    else out += std::to_string(v[i]);
  }
  return out;
}

struct KeySpec {
  const char* name;
  const char* doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<KeySpec>& keys() {
  static const std::vector<KeySpec> table = {
      {"model.drift.kind", "allen_cahn | odd_polynomial | polynomial | linear | zero",
       [](RunConfig& c, const std::string& v) {
         c.drift_kind = one_of("model.drift.kind", v, {"allen_cahn", "odd_polynomial", "polynomial", "linear", "zero"});
       },
       [](const RunConfig& c) { return c.drift_kind; }},
      {"model.drift.coeffs", "ascending coefficients a0,a1,... for (odd_)polynomial drifts",
       [](RunConfig& c, const std::string& v) {
         c.drift_coeffs.clear();
         for (const auto& s : split_list(v)) c.drift_coeffs.push_back(to_double("model.drift.coeffs", s));
       },
       [](const RunConfig& c) { return join(c.drift_coeffs); }},
      {"model.drift.c", "slope c of the linear drift f(u) = c u",
       [](RunConfig& c, const std::string& v) { c.drift_c = to_double("model.drift.c", v); },
       [](const RunConfig& c) { return fmt_double(c.drift_c); }},
      {"model.diffusion.kind", "linear (g = sigma u) | sine (g = sigma sin u) | additive (G = sigma)",
       [](RunConfig& c, const std::string& v) {
         c.diffusion_kind = one_of("model.diffusion.kind", v, {"linear", "sine", "additive"});
       },
       [](const RunConfig& c) { return c.diffusion_kind; }},
      {"model.diffusion.sigma", "noise intensity sigma",
       [](RunConfig& c, const std::string& v) { c.sigma = to_double("model.diffusion.sigma", v); },
       [](const RunConfig& c) { return fmt_double(c.sigma); }},
      {"model.initial", "sin_pi (u0 = sin(pi x)) | parabola (u0 = x(1-x))",
       [](RunConfig& c, const std::string& v) { c.initial = one_of("model.initial", v, {"sin_pi", "parabola"}); },
       [](const RunConfig& c) { return c.initial; }},
      {"noise.K", "noise truncation level; 0 = number of spectral modes",
       [](RunConfig& c, const std::string& v) { c.noise_modes = to_int<int>("noise.K", v); },
       [](const RunConfig& c) { return std::to_string(c.noise_modes); }},
      {"noise.decay", "exponent beta of lambda_k = k^-beta (must exceed 3)",
       [](RunConfig& c, const std::string& v) { c.noise_decay = to_double("noise.decay", v); },
       [](const RunConfig& c) { return fmt_double(c.noise_decay); }},
      {"scheme.kind", "euler | milstein",
       [](RunConfig& c, const std::string& v) { c.scheme = one_of("scheme.kind", v, {"euler", "milstein"}); },
       [](const RunConfig& c) { return c.scheme; }},
      {"scheme.basis", "spectral | fem",
       [](RunConfig& c, const std::string& v) { c.basis = one_of("scheme.basis", v, {"spectral", "fem"}); },
       [](const RunConfig& c) { return c.basis; }},
      {"scheme.N", "spectral mode count",
       [](RunConfig& c, const std::string& v) { c.modes = to_int<int>("scheme.N", v); },
       [](const RunConfig& c) { return std::to_string(c.modes); }},
      {"scheme.cells", "FEM cell count (h = 1/cells)",
       [](RunConfig& c, const std::string& v) { c.cells = to_int<int>("scheme.cells", v); },
       [](const RunConfig& c) { return std::to_string(c.cells); }},
      {"scheme.tau", "time step for spatial and truncation studies",
       [](RunConfig& c, const std::string& v) { c.tau = to_double("scheme.tau", v); },
       [](const RunConfig& c) { return fmt_double(c.tau); }},
      {"scheme.T", "time horizon",
       [](RunConfig& c, const std::string& v) { c.horizon = to_double("scheme.T", v); },
       [](const RunConfig& c) { return fmt_double(c.horizon); }},
      {"newton.tol", "absolute L2 residual tolerance",
       [](RunConfig& c, const std::string& v) { c.newton_tol = to_double("newton.tol", v); },
       [](const RunConfig& c) { return fmt_double(c.newton_tol); }},
      {"newton.max_iter", "Newton iteration cap",
       [](RunConfig& c, const std::string& v) { c.newton_max_iter = to_int<int>("newton.max_iter", v); },
       [](const RunConfig& c) { return std::to_string(c.newton_max_iter); }},
      {"newton.damping", "Newton damping in (0,1]",
       [](RunConfig& c, const std::string& v) { c.newton_damping = to_double("newton.damping", v); },
       [](const RunConfig& c) { return fmt_double(c.newton_damping); }},
      {"study.axis", "temporal | spatial | truncation",
       [](RunConfig& c, const std::string& v) {
         c.axis = one_of("study.axis", v, {"temporal", "spatial", "truncation"});
       },
       [](const RunConfig& c) { return c.axis; }},
      {"study.resolutions", "temporal: step counts; spatial: N or cells; truncation: K",
       [](RunConfig& c, const std::string& v) {
         c.resolutions.clear();
         for (const auto& s : split_list(v)) c.resolutions.push_back(to_int<int>("study.resolutions", s));
       },
       [](const RunConfig& c) { return join(c.resolutions); }},
      {"study.reference", "reference resolution, same unit (spatial: spectral modes)",
       [](RunConfig& c, const std::string& v) { c.reference = to_int<int>("study.reference", v); },
       [](const RunConfig& c) { return std::to_string(c.reference); }},
      {"study.samples", "Monte Carlo samples",
       [](RunConfig& c, const std::string& v) { c.samples = to_int<int>("study.samples", v); },
       [](const RunConfig& c) { return std::to_string(c.samples); }},
      {"study.seed", "master seed",
       [](RunConfig& c, const std::string& v) { c.seed = to_int<std::uint64_t>("study.seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"study.threads", "worker threads; 0 = hardware concurrency",
       [](RunConfig& c, const std::string& v) { c.threads = to_int<int>("study.threads", v); },
       [](const RunConfig& c) { return std::to_string(c.threads); }},
      {"output.dir", "directory for report.json, CSVs, summary and config echo",
       [](RunConfig& c, const std::string& v) {
         if (v.empty()) bad("output.dir", v, "expected a path");
         c.out_dir = v;
       },
       [](const RunConfig& c) { return c.out_dir; }},
      {"output.csv", "true | false: also write report.csv and raw_errors.csv",
       [](RunConfig& c, const std::string& v) { c.write_csv = one_of("output.csv", v, {"true", "false"}) == "true"; },
       [](const RunConfig& c) { return std::string(c.write_csv ? "true" : "false"); }},
  };
  return table;
}

inline std::string canonical_key(const std::string& key) {
  static const std::vector<std::pair<std::string, std::string>> aliases = {
      {"scheme", "scheme.kind"}, {"tau", "scheme.tau"},       {"T", "scheme.T"},
      {"N", "scheme.N"},         {"samples", "study.samples"}, {"seed", "study.seed"},
      {"drift.kind", "model.drift.kind"}, {"drift.coeffs", "model.drift.coeffs"},
      {"diffusion.kind", "model.diffusion.kind"}, {"diffusion.sigma", "model.diffusion.sigma"},
  };
  for (const auto& [a, k] : aliases) if (key == a) return k;
  return key;
}

}  // namespace config_detail

/// Applies one `key=value` assignment.
inline void apply_setting(RunConfig& cfg, const std::string& key_in, const std::string& value) {
  const std::string key = config_detail::canonical_key(config_detail::trim(key_in));
  for (const auto& k : config_detail::keys()) {
    if (key == k.name) {
      k.set(cfg, config_detail::trim(value));
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

inline void apply_assignment(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected KEY=VALUE, got '" + assignment + "'");
  apply_setting(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

inline void apply_text(RunConfig& cfg, std::istream& in) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    try {
      apply_assignment(cfg, line);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

/// Fills axis-dependent defaults.
inline void resolve_defaults(RunConfig& cfg) {
  if (cfg.axis == "temporal") {
    if (cfg.resolutions.empty()) cfg.resolutions = {8, 16, 32, 64, 128};
    if (cfg.reference == 0) cfg.reference = 1024;
    if (cfg.samples == 0) cfg.samples = 200;
  } else if (cfg.axis == "spatial") {
    if (cfg.resolutions.empty()) cfg.resolutions = {4, 8, 16, 32};
    if (cfg.reference == 0) cfg.reference = 128;
    if (cfg.samples == 0) cfg.samples = 100;
  } else {
    if (cfg.resolutions.empty()) cfg.resolutions = {4, 8, 16, 32};
    if (cfg.reference == 0) cfg.reference = 64;
    if (cfg.samples == 0) cfg.samples = 100;
  }
}

inline Model build_model(const RunConfig& cfg) {
  Model m;
  if (cfg.drift_kind == "allen_cahn") m.drift = DriftSpec::allen_cahn();
  else if (cfg.drift_kind == "linear") m.drift = DriftSpec::linear(cfg.drift_c);
  else if (cfg.drift_kind == "zero") m.drift = DriftSpec::zero();
  else {
    try {
      m.drift = cfg.drift_kind == "odd_polynomial" ? DriftSpec::odd_polynomial(cfg.drift_coeffs)
                                                   : DriftSpec::polynomial(cfg.drift_coeffs);
    } catch (const ArgumentError& e) {
      throw ConfigError(std::string("model.drift.coeffs: ") + e.what());
    }
  }
  if (cfg.diffusion_kind == "linear") m.diffusion = DiffusionSpec::linear(cfg.sigma);
  else if (cfg.diffusion_kind == "sine") m.diffusion = DiffusionSpec::sine(cfg.sigma);
  else m.diffusion = DiffusionSpec::additive(cfg.sigma);
  return m;
}

inline std::function<double(double)> build_initial(const RunConfig& cfg) {
  if (cfg.initial == "parabola") return [](double x) { return x * (1.0 - x); };
  return default_initial;
}

/// Canonical text form: every key, sorted as in the grammar, one per line.
inline std::string echo(const RunConfig& cfg) {
  std::ostringstream os;
  for (const auto& k : config_detail::keys()) os << k.name << " = " << k.get(cfg) << '\n';
  return os.str();
}

inline std::string grammar() {
  std::ostringstream os;
  for (const auto& k : config_detail::keys()) os << std::left << std::setw(24) << k.name << k.doc << '\n';
  return os.str();
}

inline StudyPlan build_plan(const RunConfig& cfg) {
  StudyPlan p;
  p.axis = cfg.axis == "temporal" ? StudyAxis::temporal
           : cfg.axis == "spatial" ? StudyAxis::spatial
                                   : StudyAxis::truncation;
  p.resolutions = cfg.resolutions;
  p.reference = cfg.reference;
  p.samples = cfg.samples;
  p.model = build_model(cfg);
  p.scheme = cfg.scheme == "euler" ? SchemeKind::euler : SchemeKind::milstein;
  p.basis = cfg.basis == "spectral" ? BasisKind::spectral : BasisKind::fem;
  p.modes = cfg.modes;
  p.cells = cfg.cells;
  p.noise_modes = cfg.noise_modes;
  p.noise_decay = cfg.noise_decay;
  p.horizon = cfg.horizon;
  p.tau = cfg.tau;
  p.newton = {cfg.newton_tol, cfg.newton_max_iter, cfg.newton_damping};
  p.initial = build_initial(cfg);
  p.seed = cfg.seed;
  p.threads = cfg.threads;
  // Output location does not affect numerics, so it stays out of the hash.
  std::istringstream lines(echo(cfg));
  for (std::string line; std::getline(lines, line);) {
    if (line.rfind("output.", 0) != 0) p.fingerprint += line + '\n';
  }
  return p;
}

/// Checks every constraint that does not require running anything. With
/// `model_only`, drift-dependent step restrictions are skipped so that
/// check-model can diagnose a non-monotone drift.
inline void validate(const RunConfig& cfg, bool model_only = false) {
  if (cfg.modes < 1) throw ConfigError("scheme.N must be >= 1");
  if (cfg.cells < 2) throw ConfigError("scheme.cells must be >= 2");
  if (cfg.noise_modes < 0) throw ConfigError("noise.K must be >= 0");
  if (!(cfg.noise_decay > QWienerSpec::kMinDecay)) {
    throw ConfigError("noise.decay = " + config_detail::fmt_double(cfg.noise_decay) +
                      " must exceed 3 (trace condition into H^1)");
  }
  if (cfg.threads < 0) throw ConfigError("study.threads must be >= 0");
  const Model model = build_model(cfg);
  if (model_only) return;
  SchemeConfig{SchemeKind::euler, cfg.tau, 1, {cfg.newton_tol, cfg.newton_max_iter, cfg.newton_damping}}.validate(
      model.drift.one_sided_lipschitz());
  const StudyPlan plan = build_plan(cfg);
  if (plan.axis != StudyAxis::truncation && plan.reference_noise_modes() < 1) {
    throw ConfigError("noise.K must be positive");
  }
  plan.validate();
}

/// Reads an optional file, applies overrides in order, fills defaults and validates.
inline RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides = {},
                              bool model_only = false) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    apply_text(cfg, in);
  }
  for (const auto& o : overrides) apply_assignment(cfg, o);
  resolve_defaults(cfg);
  validate(cfg, model_only);
  return cfg;
}

inline RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides = {}) {
  RunConfig cfg;
  std::istringstream in(text);
  apply_text(cfg, in);
  for (const auto& o : overrides) apply_assignment(cfg, o);
  resolve_defaults(cfg);
  validate(cfg);
  return cfg;
}

}  // namespace spde
