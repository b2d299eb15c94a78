#pragma once

// Coupled-path Monte Carlo estimation of strong errors
//
//   E_r = ( E sup_m || u_ref(t_m) - u_r^m ||^2 )^{1/2}
//
// where the supremum runs over the coarse time grid of resolution r, all
// resolutions of one sample share the same Brownian path (coarse increments
// are sums of the reference increments), and norms are taken in the reference
// basis. Fitted slopes of log E_r against log(resolution) estimate the
// empirical convergence orders.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spde/basis.hpp"
#include "spde/coefficients.hpp"
#include "spde/errors.hpp"
#include "spde/noise.hpp"
#include "spde/schemes.hpp"

namespace spde {

// ---------------------------------------------------------------------------
// Regression
// ---------------------------------------------------------------------------

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least squares fit of log(error) = intercept + slope * log(resolution).
inline RateFit fit_rate(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) throw ArgumentError("fit_rate: need at least 3 points");
  const double n = static_cast<double>(points.size());
  double sx = 0.0, sy = 0.0;
  for (const auto& [h, e] : points) {
    if (!(h > 0.0) || !(e > 0.0) || !std::isfinite(h) || !std::isfinite(e)) {
      throw ArgumentError("fit_rate: resolutions and errors must be positive and finite");
    }
    sx += std::log(h);
    sy += std::log(e);
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [h, e] : points) {
    const double dx = std::log(h) - mx, dy = std::log(e) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw ArgumentError("fit_rate: resolutions must not all coincide");
  RateFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0.0;
  for (const auto& [h, e] : points) {
    const double d = std::log(e) - (f.intercept + f.slope * std::log(h));
    ss_res += d * d;
  }
  f.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return f;
}

/// Neumaier compensated sum; order-fixed accumulation keeps parallel reductions reproducible.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) comp_ += (sum_ - t) + v;
    else comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// 64-bit FNV-1a, used for config fingerprints.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Plans and reports
// ---------------------------------------------------------------------------

enum class StudyAxis { temporal, spatial, truncation };
enum class BasisKind { spectral, fem };

inline std::string to_string(StudyAxis a) {
  switch (a) {
    case StudyAxis::temporal: return "temporal";
    case StudyAxis::spatial: return "spatial";
    case StudyAxis::truncation: return "truncation";
  }
  return "?";
}
inline std::string to_string(BasisKind b) { return b == BasisKind::spectral ? "spectral" : "fem"; }

struct StudyPlan {
  StudyAxis axis = StudyAxis::temporal;
  /// temporal: step counts M; spatial: modes N or cells; truncation: noise modes K.
  std::vector<int> resolutions{8, 16, 32, 64, 128};
  /// Same unit as `resolutions`; for the spatial axis always spectral modes.
  int reference = 1024;
  int samples = 200;

  Model model;
  SchemeKind scheme = SchemeKind::euler;
  BasisKind basis = BasisKind::spectral;
  int modes = 64;       // spectral N
  int cells = 64;       // FEM cells
  int noise_modes = 0;  // K; 0 means "equal to the spectral mode count of the run"
  double noise_decay = 4.0;
  double horizon = 0.5;
  double tau = 0x1.0p-10;  // step for the spatial and truncation axes
  NewtonSettings newton;
  std::function<double(double)> initial = default_initial;

  std::uint64_t seed = 1;
  int threads = 0;  // 0: hardware concurrency
  std::string fingerprint;  // canonical config text for provenance

  std::size_t steps_for(double step) const {
    const double m = horizon / step;
    const auto r = static_cast<std::size_t>(std::llround(m));
    if (r == 0 || std::abs(m - static_cast<double>(r)) > 1e-9 * m) {
      throw ConfigError("horizon " + std::to_string(horizon) + " is not an integer multiple of tau " +
                        std::to_string(step));
    }
    return r;
  }

  /// Noise truncation used by the reference run.
  int reference_noise_modes() const {
    if (axis == StudyAxis::truncation) return reference;
    if (noise_modes > 0) return noise_modes;
    return axis == StudyAxis::spatial ? reference : modes;
  }

  void validate() const {
    if (resolutions.size() < 3) throw ConfigError("study.resolutions: need at least 3 resolutions");
    for (std::size_t i = 0; i < resolutions.size(); ++i) {
      if (resolutions[i] < 1) throw ConfigError("study.resolutions: entries must be positive");
      if (i > 0 && resolutions[i] <= resolutions[i - 1]) {
        throw ConfigError("study.resolutions: must be strictly increasing");
      }
    }
    if (samples < 1) throw ConfigError("study.samples must be >= 1");
    if (!(horizon > 0.0)) throw ConfigError("scheme.T must be positive");
    const int finest = resolutions.back();
    switch (axis) {
      case StudyAxis::temporal:
        if (reference < 4 * finest) throw ConfigError("study.reference must be at least 4x the finest step count");
        for (int m : resolutions) {
          const int ratio = reference / m;
          if (reference % m != 0 || (ratio & (ratio - 1)) != 0) {
            throw ConfigError("study.resolutions: step count " + std::to_string(m) +
                              " is not a power-of-two divisor of study.reference");
          }
          SchemeConfig{scheme, horizon / m, static_cast<std::size_t>(m), newton}.validate(
              model.drift.one_sided_lipschitz());
        }
        break;
      case StudyAxis::spatial:
        if (basis == BasisKind::spectral && reference < 4 * finest) {
          throw ConfigError("study.reference must have at least 4x the modes of the finest resolution");
        }
        if (basis == BasisKind::fem && reference < finest) {
          throw ConfigError("study.reference must have at least as many modes as the finest mesh has cells");
        }
        if (basis == BasisKind::fem && resolutions.front() < 2) throw ConfigError("FEM meshes need >= 2 cells");
        SchemeConfig{scheme, tau, steps_for(tau), newton}.validate(model.drift.one_sided_lipschitz());
        break;
      case StudyAxis::truncation:
        if (reference <= finest) throw ConfigError("study.reference K must exceed every tested K");
        SchemeConfig{scheme, tau, steps_for(tau), newton}.validate(model.drift.one_sided_lipschitz());
        break;
    }
  }

  /// Expected convergence exponent for the tested configuration; NaN when none applies.
  double expected_slope() const {
    switch (axis) {
      case StudyAxis::temporal:
        return (scheme == SchemeKind::euler && !model.diffusion.is_additive()) ? 0.5 : 1.0;
      case StudyAxis::spatial: return 2.0;
      case StudyAxis::truncation: return std::numeric_limits<double>::quiet_NaN();
    }
    return std::numeric_limits<double>::quiet_NaN();
  }
};

struct SampleFailure {
  std::uint64_t sample_id = 0;
  std::string message;
};

struct ErrorReport {
  StudyAxis axis = StudyAxis::temporal;
  std::string scheme;
  std::string basis;
  std::vector<int> sizes;           // M, N, cells or K as configured
  std::vector<double> resolutions;  // tau, h = 1/N, h = 1/cells, or 1/K
  std::vector<double> errors;       // RMS of sup_m L2 error
  std::vector<double> std_errors;
  std::vector<std::vector<double>> raw;  // raw[i][s]: sup error of sample s at resolution i
  std::optional<RateFit> fit;
  double expected_slope = std::numeric_limits<double>::quiet_NaN();
  int samples = 0;
  int completed = 0;
  std::vector<SampleFailure> failures;
  int max_newton_iterations = 0;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::string timestamp;
};

// ---------------------------------------------------------------------------
// Coupled sample evaluation
// ---------------------------------------------------------------------------

/// sup over the tested time grid of ||tested - reference||^2, reference in its own basis.
template <GalerkinBasis R, GalerkinBasis T>
double sup_squared_error(const Trajectory<R>& reference, const Trajectory<T>& tested) {
  const std::size_t m_test = tested.states.size() - 1;
  const std::size_t m_ref = reference.states.size() - 1;
  if (m_test == 0 || m_ref % m_test != 0) {
    if (m_test == 0 && m_ref == 0) {
      const double d = l2_distance(tested.states[0], reference.states[0]);
      return d * d;
    }
    throw ArgumentError("sup_squared_error: time grids are not nested");
  }
  const std::size_t stride = m_ref / m_test;
  double sup = 0.0;
  for (std::size_t m = 0; m <= m_test; ++m) {
    const double d = l2_distance(tested.states[m], reference.states[m * stride]);
    sup = std::max(sup, d * d);
  }
  return sup;
}

namespace detail {

template <class Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, std::max(count, 1));
  if (threads <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) fn(i);
    });
  }
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

struct SampleOutcome {
  bool ok = false;
  std::string message;
  std::vector<double> sup_sq;
  int max_newton = 0;
};

// Runs every sample and reduces them into a report.
template <class SampleFn>
ErrorReport reduce_samples(const StudyPlan& plan, std::size_t n_res, SampleFn&& sample) {
  std::vector<SampleOutcome> outcomes(static_cast<std::size_t>(plan.samples));
  parallel_for(plan.samples, plan.threads, [&](int s) {
    auto& out = outcomes[static_cast<std::size_t>(s)];
    try {
      out.sup_sq = sample(static_cast<std::uint64_t>(s), out.max_newton);
      out.ok = true;
    } catch (const std::exception& e) {
      out.message = e.what();
    }
  });

  ErrorReport rep;
  rep.axis = plan.axis;
  rep.samples = plan.samples;
  rep.seed = plan.seed;
  rep.config_hash = fnv1a(plan.fingerprint);
  rep.expected_slope = plan.expected_slope();
  rep.raw.assign(n_res, {});
  for (std::size_t s = 0; s < outcomes.size(); ++s) {
    if (!outcomes[s].ok) rep.failures.push_back({s, outcomes[s].message});
  }
  if (static_cast<double>(rep.failures.size()) > 0.01 * plan.samples) {
    throw StudyError("strong_error_study: " + std::to_string(rep.failures.size()) + " of " +
                     std::to_string(plan.samples) + " samples failed; first: sample " +
                     std::to_string(rep.failures.front().sample_id) + ": " + rep.failures.front().message);
  }
  rep.completed = plan.samples - static_cast<int>(rep.failures.size());
  for (std::size_t i = 0; i < n_res; ++i) {
    CompensatedSum sum, sum_sq;
    for (const auto& o : outcomes) {
      if (!o.ok) continue;
      sum.add(o.sup_sq[i]);
      sum_sq.add(o.sup_sq[i] * o.sup_sq[i]);
      rep.raw[i].push_back(std::sqrt(o.sup_sq[i]));
    }
    const double n = rep.completed;
    const double mean = sum.value() / n;
    const double var = n > 1 ? std::max(0.0, (sum_sq.value() - n * mean * mean) / (n - 1)) : 0.0;
    const double rms = std::sqrt(mean);
    rep.errors.push_back(rms);
    // Delta method: se(sqrt(mean)) = se(mean) / (2 sqrt(mean)).
    rep.std_errors.push_back(rms > 0.0 ? std::sqrt(var / n) / (2.0 * rms) : 0.0);
  }
  for (const auto& o : outcomes) rep.max_newton_iterations = std::max(rep.max_newton_iterations, o.max_newton);
  return rep;
}

inline void attach_fit(ErrorReport& rep) {
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < rep.errors.size(); ++i) {
    if (!(rep.errors[i] > 0.0)) return;
    pts.emplace_back(rep.resolutions[i], rep.errors[i]);
  }
  if (pts.size() >= 3) rep.fit = fit_rate(pts);
}

template <GalerkinBasis B>
int max_iterations(const Trajectory<B>& t) {
  return t.max_iterations();
}

inline SchemeConfig scheme_config(const StudyPlan& plan, SchemeKind kind, double tau, std::size_t steps) {
  return SchemeConfig{kind, tau, steps, plan.newton};
}

template <GalerkinBasis T>
std::shared_ptr<const T> make_basis(int size, int growth) {
  if constexpr (std::is_same_v<T, SpectralBasis>) {
    return std::make_shared<const SpectralBasis>(size, growth);
  } else {
    return std::make_shared<const FemMesh>(size);
  }
}

template <GalerkinBasis T>
ErrorReport temporal_study(const StudyPlan& plan) {
  const int growth = plan.model.drift.growth_exponent();
  const auto ref_basis = std::make_shared<const SpectralBasis>(plan.modes, growth);
  const auto test_basis = make_basis<T>(std::is_same_v<T, SpectralBasis> ? plan.modes : plan.cells, growth);
  const QWienerSpec noise = QWienerSpec::power_law(plan.reference_noise_modes(), plan.noise_decay);
  const auto m_ref = static_cast<std::size_t>(plan.reference);
  const double tau_ref = plan.horizon / plan.reference;
  const Stepper<SpectralBasis> ref(ref_basis, plan.model, noise, scheme_config(plan, SchemeKind::milstein, tau_ref, m_ref));
  std::vector<Stepper<T>> tested;
  for (int m : plan.resolutions) {
    tested.emplace_back(test_basis, plan.model, noise,
                        scheme_config(plan, plan.scheme, plan.horizon / m, static_cast<std::size_t>(m)));
  }
  int levels = 1;
  while ((plan.reference >> (levels - 1)) > plan.resolutions.front()) ++levels;

  ErrorReport rep = reduce_samples(plan, tested.size(), [&](std::uint64_t s, int& newton) {
    const NoiseTree tree = sample_tree(noise, m_ref, levels, plan.horizon, plan.seed, s);
    const auto ref_traj = ref.run(tree, tree.finest_level(), plan.initial);
    newton = ref_traj.max_iterations();
    std::vector<double> out;
    for (std::size_t i = 0; i < tested.size(); ++i) {
      const auto traj = tested[i].run(tree, tree.level_for_steps(static_cast<std::size_t>(plan.resolutions[i])),
                                      plan.initial);
      newton = std::max(newton, traj.max_iterations());
      out.push_back(sup_squared_error(ref_traj, traj));
    }
    return out;
  });
  for (int m : plan.resolutions) {
    rep.sizes.push_back(m);
    rep.resolutions.push_back(plan.horizon / m);
  }
  return rep;
}

template <GalerkinBasis T>
ErrorReport spatial_study(const StudyPlan& plan) {
  const int growth = plan.model.drift.growth_exponent();
  const auto ref_basis = std::make_shared<const SpectralBasis>(plan.reference, growth);
  const QWienerSpec noise = QWienerSpec::power_law(plan.reference_noise_modes(), plan.noise_decay);
  const std::size_t steps = plan.steps_for(plan.tau);
  const SchemeConfig cfg = scheme_config(plan, plan.scheme, plan.tau, steps);
  const Stepper<SpectralBasis> ref(ref_basis, plan.model, noise, cfg);
  std::vector<Stepper<T>> tested;
  for (int n : plan.resolutions) tested.emplace_back(make_basis<T>(n, growth), plan.model, noise, cfg);

  ErrorReport rep = reduce_samples(plan, tested.size(), [&](std::uint64_t s, int& newton) {
    const NoiseTree tree = sample_tree(noise, steps, 1, plan.horizon, plan.seed, s);
    const auto ref_traj = ref.run(tree, 0, plan.initial);
    newton = ref_traj.max_iterations();
    std::vector<double> out;
    for (const auto& st : tested) {
      const auto traj = st.run(tree, 0, plan.initial);
      newton = std::max(newton, traj.max_iterations());
      out.push_back(sup_squared_error(ref_traj, traj));
    }
    return out;
  });
  for (int n : plan.resolutions) {
    rep.sizes.push_back(n);
    rep.resolutions.push_back(1.0 / n);
  }
  return rep;
}

template <GalerkinBasis T>
ErrorReport truncation_study(const StudyPlan& plan) {
  const int growth = plan.model.drift.growth_exponent();
  const auto basis = make_basis<T>(std::is_same_v<T, SpectralBasis> ? plan.modes : plan.cells, growth);
  const QWienerSpec full = QWienerSpec::power_law(plan.reference, plan.noise_decay);
  const std::size_t steps = plan.steps_for(plan.tau);
  const SchemeConfig cfg = scheme_config(plan, plan.scheme, plan.tau, steps);
  const Stepper<T> ref(basis, plan.model, full, cfg);
  std::vector<Stepper<T>> tested;
  for (int k : plan.resolutions) tested.emplace_back(basis, plan.model, full.truncated(k), cfg);

  ErrorReport rep = reduce_samples(plan, tested.size(), [&](std::uint64_t s, int& newton) {
    const NoiseTree tree = sample_tree(full, steps, 1, plan.horizon, plan.seed, s);
    const auto ref_traj = ref.run(tree, 0, plan.initial);
    newton = ref_traj.max_iterations();
    std::vector<double> out;
    for (const auto& st : tested) {
      const auto traj = st.run(tree, 0, plan.initial);
      newton = std::max(newton, traj.max_iterations());
      out.push_back(sup_squared_error(ref_traj, traj));
    }
    return out;
  });
  for (int k : plan.resolutions) {
    rep.sizes.push_back(k);
    rep.resolutions.push_back(1.0 / k);
  }
  return rep;
}

}  // namespace detail

/// Runs the plan's temporal or spatial study.
inline ErrorReport strong_error_study(const StudyPlan& plan) {
  plan.validate();
  ErrorReport rep;
  const bool spectral = plan.basis == BasisKind::spectral;
  switch (plan.axis) {
    case StudyAxis::temporal:
      rep = spectral ? detail::temporal_study<SpectralBasis>(plan) : detail::temporal_study<FemMesh>(plan);
      break;
    case StudyAxis::spatial:
      rep = spectral ? detail::spatial_study<SpectralBasis>(plan) : detail::spatial_study<FemMesh>(plan);
      break;
    case StudyAxis::truncation:
      rep = spectral ? detail::truncation_study<SpectralBasis>(plan) : detail::truncation_study<FemMesh>(plan);
      break;
  }
  rep.scheme = to_string(plan.scheme);
  rep.basis = to_string(plan.basis);
  rep.timestamp = detail::utc_timestamp();
  detail::attach_fit(rep);
  return rep;
}

/// Error of K-truncated noise against the reference truncation on coupled paths.
inline ErrorReport truncation_study(StudyPlan plan) {
  plan.axis = StudyAxis::truncation;
  return strong_error_study(plan);
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ErrorReport& r) {
  nlohmann::json j;
  j["axis"] = to_string(r.axis);
  j["scheme"] = r.scheme;
  j["basis"] = r.basis;
  j["sizes"] = r.sizes;
  j["resolutions"] = r.resolutions;
  j["errors"] = r.errors;
  j["std_errors"] = r.std_errors;
  if (r.fit) {
    j["fit"] = {{"slope", r.fit->slope}, {"intercept", r.fit->intercept}, {"r2", r.fit->r2}};
  } else {
    j["fit"] = nullptr;
  }
  j["expected_slope"] = std::isnan(r.expected_slope) ? nlohmann::json(nullptr) : nlohmann::json(r.expected_slope);
  j["samples"] = r.samples;
  j["completed"] = r.completed;
  j["max_newton_iterations"] = r.max_newton_iterations;
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : r.failures) failures.push_back({{"sample_id", f.sample_id}, {"message", f.message}});
  j["failures"] = failures;
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << r.config_hash;
  j["provenance"] = {{"master_seed", r.seed},
                     {"sample_ids", {{"first", 0}, {"count", r.samples}}},
                     {"config_hash", hash.str()},
                     {"timestamp", r.timestamp}};
  return j;
}

inline std::string to_csv(const ErrorReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "size,resolution,error,std_error,samples\n";
  for (std::size_t i = 0; i < r.errors.size(); ++i) {
    os << r.sizes[i] << ',' << r.resolutions[i] << ',' << r.errors[i] << ',' << r.std_errors[i] << ','
       << r.completed << '\n';
  }
  return os.str();
}

/// One row per (sample, resolution) with the sample's sup error.
inline std::string raw_errors_csv(const ErrorReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "resolution_index,size,resolution,sample,sup_error\n";
  for (std::size_t i = 0; i < r.raw.size(); ++i) {
    for (std::size_t s = 0; s < r.raw[i].size(); ++s) {
      os << i << ',' << r.sizes[i] << ',' << r.resolutions[i] << ',' << s << ',' << r.raw[i][s] << '\n';
    }
  }
  return os.str();
}

}  // namespace spde
