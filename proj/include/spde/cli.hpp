#pragma once

// Orchestration behind the `spde` command line tool: runs a configured study,
// writes the artifacts and maps failures to exit codes.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include "spde/coefficients.hpp"
#include "spde/config.hpp"
#include "spde/errors.hpp"
#include "spde/experiments.hpp"
#include "spde/noise.hpp"

namespace spde {

enum ExitCode : int {
  kExitOk = 0,
  kExitIo = 1,
  kExitConfig = 2,
  kExitSolver = 3,
  kExitAssertion = 4,
};

struct OrderAssertion {
  double expected = 0.0;
  double tolerance = 0.0;
  bool holds(double slope) const { return std::abs(slope - expected) <= tolerance; }
};

/// Parses "0.5±0.15", "0.5+-0.15" or "0.5:0.15".
inline OrderAssertion parse_order_assertion(const std::string& text) {
  static const char* seps[] = {"\xC2\xB1", "+-", ":"};
  for (const char* sep : seps) {
    const auto at = text.find(sep);
    if (at == std::string::npos) continue;
    const std::string a = text.substr(0, at), b = text.substr(at + std::string(sep).size());
    try {
      std::size_t pa = 0, pb = 0;
      OrderAssertion out{std::stod(a, &pa), std::stod(b, &pb)};
      if (pa == a.size() && pb == b.size() && out.tolerance >= 0.0 && std::isfinite(out.expected)) return out;
    } catch (const std::logic_error&) {
    }
    break;
  }
  throw ConfigError("--assert-order: expected EXPECTED\xC2\xB1TOL (or EXPECTED+-TOL), got '" + text + "'");
}

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace cli_detail {

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << content;
  f.flush();
  if (!f) throw IoError("write to '" + path.string() + "' failed");
}

inline void prepare_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory '" + dir.string() + "': " +
                  (ec ? ec.message() : std::string("not a directory")));
  }
}

inline std::string describe_plan(const RunConfig& cfg) {
  std::ostringstream os;
  const StudyPlan plan = build_plan(cfg);
  os << "study   " << cfg.axis << ' ' << cfg.scheme << ' ' << cfg.basis << '\n';
  os << "model   drift " << cfg.drift_kind << ", diffusion " << cfg.diffusion_kind << " sigma " << cfg.sigma
     << ", noise K " << plan.reference_noise_modes() << " decay " << cfg.noise_decay << '\n';
  os << "grid    resolutions " << config_detail::join(cfg.resolutions) << ", reference " << cfg.reference;
  if (cfg.axis != "temporal") os << ", tau " << cfg.tau;
  os << ", T " << cfg.horizon << '\n';
  os << "mc      " << cfg.samples << " samples, seed " << cfg.seed << '\n';
  os << "output  " << cfg.out_dir << '\n';
  return os.str();
}

}  // namespace cli_detail

/// Human-readable table plus fitted slope against the expected exponent.
inline std::string summary(const ErrorReport& r, const std::optional<OrderAssertion>& assertion = std::nullopt) {
  std::ostringstream os;
  os << to_string(r.axis) << " study, " << r.scheme << " / " << r.basis << ", " << r.completed << " of " << r.samples
     << " samples\n";
  os << std::setw(8) << "size" << std::setw(16) << "resolution" << std::setw(16) << "rms error" << std::setw(14)
     << "std error" << '\n';
  os << std::scientific << std::setprecision(5);
  for (std::size_t i = 0; i < r.errors.size(); ++i) {
    os << std::setw(8) << r.sizes[i] << std::setw(16) << r.resolutions[i] << std::setw(16) << r.errors[i]
       << std::setw(14) << r.std_errors[i] << '\n';
  }
  os << std::fixed << std::setprecision(4);
  if (r.fit) {
    os << "fitted slope " << r.fit->slope << " (R^2 " << r.fit->r2 << ")";
    if (!std::isnan(r.expected_slope)) os << ", expected " << r.expected_slope;
    os << '\n';
  } else {
    os << "fitted slope unavailable\n";
  }
  if (assertion) {
    os << "assert-order " << assertion->expected << " +- " << assertion->tolerance << ": "
       << (r.fit && assertion->holds(r.fit->slope) ? "ok" : "violated") << '\n';
  }
  os << "max Newton iterations " << r.max_newton_iterations << '\n';
  return os.str();
}

/// Runs the configured study and writes the artifacts; returns the exit status.
inline int run_study(const RunConfig& cfg, const std::optional<OrderAssertion>& assertion, bool dry_run,
                     std::ostream& out, std::ostream& err) {
  if (dry_run) {
    out << cli_detail::describe_plan(cfg) << "\neffective configuration:\n" << echo(cfg);
    return kExitOk;
  }
  try {
    const std::filesystem::path dir(cfg.out_dir);
    cli_detail::prepare_dir(dir);
    cli_detail::write_file(dir / "effective.cfg", echo(cfg));
    const ErrorReport rep = strong_error_study(build_plan(cfg));
    cli_detail::write_file(dir / "report.json", to_json(rep).dump(2) + "\n");
    if (cfg.write_csv) {
      cli_detail::write_file(dir / "report.csv", to_csv(rep));
      cli_detail::write_file(dir / "raw_errors.csv", raw_errors_csv(rep));
    }
    const std::string text = summary(rep, assertion);
    cli_detail::write_file(dir / "summary.txt", text);
    out << text;
    if (assertion && !(rep.fit && assertion->holds(rep.fit->slope))) {
      err << "error: fitted slope " << (rep.fit ? std::to_string(rep.fit->slope) : std::string("n/a"))
          << " outside " << assertion->expected << " +- " << assertion->tolerance << '\n';
      return kExitAssertion;
    }
    return kExitOk;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const SolverError& e) {
    err << "solver error: " << e.what() << '\n';
    return kExitSolver;
  } catch (const StudyError& e) {
    err << "study failed: " << e.what() << '\n';
    return kExitSolver;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitSolver;
  }
}

inline int check_model(const RunConfig& cfg, std::ostream& out) {
  const Model model = build_model(cfg);
  const StudyPlan plan = build_plan(cfg);
  const QWienerSpec noise = QWienerSpec::power_law(std::max(plan.reference_noise_modes(), 1), cfg.noise_decay);
  print(check_assumptions(model.drift, model.diffusion, &noise), out);
  return kExitOk;
}

/// Writes the coupled increment tree of one sample as used by the configured temporal study.
inline int dump_noise(const RunConfig& cfg, std::uint64_t sample_id, std::ostream& out, std::ostream& err) {
  try {
    const StudyPlan plan = build_plan(cfg);
    const QWienerSpec noise = QWienerSpec::power_law(std::max(plan.reference_noise_modes(), 1), cfg.noise_decay);
    std::size_t finest = 0;
    int levels = 1;
    if (plan.axis == StudyAxis::temporal) {
      finest = static_cast<std::size_t>(plan.reference);
      while ((plan.reference >> (levels - 1)) > plan.resolutions.front()) ++levels;
    } else {
      finest = plan.steps_for(plan.tau);
    }
    const NoiseTree tree = sample_tree(noise, finest, levels, plan.horizon, plan.seed, sample_id);
    const std::filesystem::path dir(cfg.out_dir);
    cli_detail::prepare_dir(dir);
    std::ostringstream bin(std::ios::binary);
    write_tree(bin, tree);
    const auto path = dir / ("noise_" + std::to_string(sample_id) + ".bin");
    cli_detail::write_file(path, bin.str());
    out << "wrote " << path.string() << ": " << tree.levels() << " levels, " << tree.steps(tree.finest_level())
        << " finest steps, K " << tree.modes() << '\n';
    return kExitOk;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace spde
