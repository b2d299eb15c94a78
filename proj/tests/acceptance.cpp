// End-to-end acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "spde/spde.hpp"

using namespace spde;

namespace {

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << id << "  " << name << "  " << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Allen-Cahn, g(u) = 0.5 u, lambda_k = k^-4, u0 = sin(pi x), N = K = 64, T = 0.5,
// tau = 2^-4 .. 2^-8 against a Milstein reference with tau = 2^-11, 200 samples.
StudyPlan temporal_plan(SchemeKind scheme) {
  StudyPlan p;
  p.axis = StudyAxis::temporal;
  p.scheme = scheme;
  p.resolutions = {8, 16, 32, 64, 128};
  p.reference = 1024;
  p.samples = 200;
  p.modes = 64;
  p.noise_modes = 64;
  p.horizon = 0.5;
  p.seed = 20240611;
  p.fingerprint = "acceptance temporal " + to_string(scheme);
  return p;
}

StudyPlan spatial_plan(BasisKind basis) {
  StudyPlan p;
  p.axis = StudyAxis::spatial;
  p.basis = basis;
  p.resolutions = basis == BasisKind::spectral ? std::vector<int>{4, 8, 16, 32} : std::vector<int>{8, 16, 32, 64};
  p.reference = 128;
  p.samples = 100;
  p.tau = 0x1.0p-10;
  p.seed = 20240612;
  p.fingerprint = "acceptance spatial " + to_string(basis);
  return p;
}

std::string numerics(const ErrorReport& r) {
  auto j = to_json(r);
  j["provenance"].erase("timestamp");
  return j.dump();
}

std::string slope_detail(const ErrorReport& r) {
  std::string s = "slope " + (r.fit ? fmt(r.fit->slope) : std::string("n/a")) + ", R^2 " +
                  (r.fit ? fmt(r.fit->r2) : std::string("n/a")) + ", errors [";
  for (std::size_t i = 0; i < r.errors.size(); ++i) s += (i ? " " : "") + fmt(r.errors[i], 3);
  return s + "]";
}

bool slope_in(const ErrorReport& r, double lo, double hi) { return r.fit && r.fit->slope >= lo && r.fit->slope <= hi; }

}  // namespace

int main() {
  std::cout << "acceptance suite (" << std::thread::hardware_concurrency() << " hardware threads)" << std::endl;

  // 1. Temporal Euler order.
  auto t0 = std::chrono::steady_clock::now();
  const ErrorReport euler = strong_error_study(temporal_plan(SchemeKind::euler));
  const double euler_secs = seconds_since(t0);
  report(1, "temporal Euler order", slope_in(euler, 0.40, 0.60) && euler.fit->r2 >= 0.97,
         slope_detail(euler) + "; want slope in [0.40, 0.60], R^2 >= 0.97; " + fmt(euler_secs, 3) + " s");

  // 2. Temporal Milstein order and dominance over Euler on the same paths.
  const ErrorReport milstein = strong_error_study(temporal_plan(SchemeKind::milstein));
  bool dominates = true;
  std::string margins;
  for (std::size_t i = 0; i < milstein.errors.size(); ++i) {
    const double se = std::hypot(milstein.std_errors[i], euler.std_errors[i]);
    dominates = dominates && milstein.errors[i] <= euler.errors[i] + 2.0 * se;
    margins += (i ? " " : "") + fmt(milstein.errors[i] / euler.errors[i], 3);
  }
  report(2, "temporal Milstein order", slope_in(milstein, 0.85, 1.15) && milstein.fit->r2 >= 0.97 && dominates,
         slope_detail(milstein) + "; Milstein/Euler [" + margins + "]; want slope in [0.85, 1.15], R^2 >= 0.97, " +
             "Milstein <= Euler + 2 s.e.");

  // 3. Spatial spectral order.
  const ErrorReport spec = strong_error_study(spatial_plan(BasisKind::spectral));
  report(3, "spatial spectral order", slope_in(spec, 1.7, 2.3), slope_detail(spec) + "; want slope in [1.7, 2.3]");

  // 4. Spatial FEM order.
  const ErrorReport fem = strong_error_study(spatial_plan(BasisKind::fem));
  report(4, "spatial FEM order", slope_in(fem, 1.7, 2.3), slope_detail(fem) + "; want slope in [1.7, 2.3]");

  // 5. Additive noise: Milstein and Euler trajectories are bit-identical.
  {
    const auto basis = std::make_shared<const SpectralBasis>(64);
    const auto noise = QWienerSpec::power_law(64);
    const Model model{DriftSpec::allen_cahn(), DiffusionSpec::additive(0.5)};
    const Stepper<SpectralBasis> e(basis, model, noise, {SchemeKind::euler, 0.5 / 128, 128, {}});
    const Stepper<SpectralBasis> m(basis, model, noise, {SchemeKind::milstein, 0.5 / 128, 128, {}});
    std::size_t mismatches = 0;
    for (std::uint64_t s = 0; s < 50; ++s) {
      const auto tree = sample_tree(noise, 128, 1, 0.5, 5, s);
      const auto a = e.run(tree, 0, default_initial);
      const auto b = m.run(tree, 0, default_initial);
      for (std::size_t i = 0; i < a.states.size(); ++i) {
        if (a.states[i].coeffs != b.states[i].coeffs) ++mismatches;
      }
    }
    report(5, "additive degeneracy", mismatches == 0,
           std::to_string(mismatches) + " differing states over 50 samples x 129 times; want 0");
  }

  // 6. Linear drift, zero noise: discrete resolvent and first-order convergence to the semigroup.
  {
    const auto basis = std::make_shared<const SpectralBasis>(64);
    const auto noise = QWienerSpec::power_law(64);
    const Model model{DriftSpec::linear(0.0), DiffusionSpec::additive(0.0)};
    const auto u0 = [](double x) { return x * (1.0 - x); };
    double worst_mode = 0.0;
    std::vector<std::pair<double, double>> pts;
    for (int steps : {8, 16, 32, 64, 128}) {
      const double tau = 0.5 / steps;
      const Stepper<SpectralBasis> st(basis, model, noise, {SchemeKind::euler, tau, std::size_t(steps), {}});
      const auto traj = st.run(sample_tree(noise, std::size_t(steps), 1, 0.5, 1, 0), 0, u0);
      const Vector& c0 = traj.states[0].coeffs;
      double sup = 0.0;
      for (int m = 0; m <= steps; ++m) {
        const Vector& c = traj.states[std::size_t(m)].coeffs;
        double sq = 0.0;
        for (int k = 0; k < 64; ++k) {
          const double lam = basis->eigenvalues()[k];
          worst_mode = std::max(worst_mode, std::abs(c[k] - c0[k] * std::pow(1.0 + tau * lam, -m)));
          const double exact = c0[k] * std::exp(-lam * tau * m);
          sq += (c[k] - exact) * (c[k] - exact);
        }
        sup = std::max(sup, std::sqrt(sq));
      }
      pts.emplace_back(tau, sup);
    }
    const auto fit = fit_rate(pts);
    report(6, "deterministic oracle", worst_mode <= 1e-12 && std::abs(fit.slope - 1.0) <= 0.1,
           "max per-mode resolvent deviation " + fmt(worst_mode, 3) + " (want <= 1e-12), semigroup order " +
               fmt(fit.slope) + " (want 1.0 +- 0.1)");
  }

  // 7. Iterated-integral identity by sub-stepping a coarse step into 2^12 micro steps.
  {
    t0 = std::chrono::steady_clock::now();
    const auto q = QWienerSpec::power_law(2);
    const int levels = 12;
    const std::size_t micro = std::size_t{1} << levels;
    const double tau = 0x1.0p-4;
    const int paths = 1000;
    double err_sq[2][2] = {{0, 0}, {0, 0}};
    for (int p = 0; p < paths; ++p) {
      const auto tree = sample_tree(q, micro, levels + 1, tau, 7, static_cast<std::uint64_t>(p));
      const auto coarse = tree.increment(0, 0);
      double iter[2][2] = {{0, 0}, {0, 0}};
      double run[2] = {0, 0};
      for (std::size_t j = 0; j < micro; ++j) {
        const auto d = tree.increment(levels, j);
        for (int k = 0; k < 2; ++k) {
          for (int l = 0; l < 2; ++l) iter[k][l] += run[k] * d[l];
        }
        run[0] += d[0];
        run[1] += d[1];
      }
      for (int k = 0; k < 2; ++k) {
        for (int l = 0; l < 2; ++l) {
          const double e = iter[k][l] + iter[l][k] - (coarse[k] * coarse[l] - (k == l ? tau : 0.0));
          err_sq[k][l] += e * e;
        }
      }
    }
    double worst = 0.0;
    for (auto& row : err_sq) {
      for (double v : row) worst = std::max(worst, std::sqrt(v / paths));
    }
    const double bound = 3.0 * 0x1.0p-6 * tau;
    const double secs = seconds_since(t0);
    report(7, "iterated-integral identity", worst < bound && secs <= 60.0,
           "worst RMS " + fmt(worst, 3) + " (bound " + fmt(bound, 3) + "), " + fmt(secs, 3) + " s (limit 60 s)");
  }

  // 8. Long-run stability at T = 4.
  {
    const auto basis = std::make_shared<const SpectralBasis>(64);
    const auto noise = QWienerSpec::power_law(64);
    const std::size_t steps = 512;
    const Stepper<SpectralBasis> st(basis, Model{}, noise, {SchemeKind::euler, 4.0 / steps, steps, {}});
    int bad = 0, max_newton = 0;
    double max_norm = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      try {
        const auto traj = st.run(sample_tree(noise, steps, 1, 4.0, 8, s), 0, default_initial);
        bool ok = traj.max_iterations() <= 10;
        for (const auto& state : traj.states) {
          const double n = state.l2_norm();
          ok = ok && state.finite() && n < 10.0;
          max_norm = std::max(max_norm, n);
        }
        max_newton = std::max(max_newton, traj.max_iterations());
        if (!ok) ++bad;
      } catch (const std::exception&) {
        ++bad;
      }
    }
    report(8, "stability", bad == 0,
           std::to_string(bad) + " bad samples of 100; max ||u|| " + fmt(max_norm) + ", max Newton iterations " +
               std::to_string(max_newton) + " (tau = 2^-7)");
  }

  // 9. Reproducibility of criterion 1.
  {
    const ErrorReport again = strong_error_study(temporal_plan(SchemeKind::euler));
    report(9, "reproducibility", numerics(again) == numerics(euler),
           "report.json numerics of two criterion-1 runs " +
               std::string(numerics(again) == numerics(euler) ? "identical" : "differ"));
  }

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
