#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "oracle_values.hpp"
#include "spde/experiments.hpp"

using namespace spde;

namespace {

StudyPlan small_temporal() {
  StudyPlan p;
  p.axis = StudyAxis::temporal;
  p.resolutions = {8, 16, 32};
  p.reference = 128;
  p.samples = 12;
  p.modes = 16;
  p.seed = 5;
  p.threads = 1;
  return p;
}

nlohmann::json numerics(const ErrorReport& r) {
  auto j = to_json(r);
  j["provenance"].erase("timestamp");
  return j;
}

}  // namespace

TEST(FitRate, ExactGeometricData) {
  const auto f = fit_rate({{0.1, 0.1}, {0.05, 0.1 * std::sqrt(0.5)}, {0.025, 0.05}});
  EXPECT_NEAR(f.slope, 0.5, 1e-12);
  EXPECT_NEAR(f.r2, 1.0, 1e-12);
  EXPECT_NEAR(f.intercept, std::log(0.1) - 0.5 * std::log(0.1), 1e-12);
}

TEST(FitRate, ConstantErrors) {
  const auto f = fit_rate({{0.1, 0.3}, {0.05, 0.3}, {0.025, 0.3}, {0.0125, 0.3}});
  EXPECT_NEAR(f.slope, 0.0, 1e-12);
  EXPECT_EQ(f.r2, 1.0);
}

TEST(FitRate, NoisyFirstOrderData) {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  std::vector<std::pair<double, double>> pts;
  for (int i = 4; i <= 9; ++i) {
    const double tau = std::ldexp(1.0, -i);
    pts.emplace_back(tau, 3.0 * tau * (1.0 + jitter(gen)));
  }
  const auto f = fit_rate(pts);
  EXPECT_GE(f.slope, 0.9);
  EXPECT_LE(f.slope, 1.1);
}

TEST(FitRate, RejectsBadInput) {
  EXPECT_THROW(fit_rate({{0.1, 0.1}, {0.05, 0.05}}), ArgumentError);
  EXPECT_THROW(fit_rate({{0.1, 0.1}, {0.05, 0.0}, {0.02, 0.01}}), ArgumentError);
  EXPECT_THROW(fit_rate({{0.1, 0.1}, {-0.05, 0.1}, {0.02, 0.01}}), ArgumentError);
}

TEST(CompensatedSum, RecoversCancelledMass) {
  CompensatedSum s;
  s.add(1.0);
  for (int i = 0; i < 10000; ++i) s.add(1e-16);
  s.add(-1.0);
  EXPECT_NEAR(s.value(), 1e-12, 1e-20);
}

TEST(StudyPlan, Validation) {
  auto p = small_temporal();
  EXPECT_NO_THROW(p.validate());
  p.reference = 64;
  EXPECT_THROW(p.validate(), ConfigError);
  p = small_temporal();
  p.resolutions = {8, 24, 32};
  EXPECT_THROW(p.validate(), ConfigError);
  p = small_temporal();
  p.resolutions = {16, 8, 32};
  EXPECT_THROW(p.validate(), ConfigError);
  p = small_temporal();
  p.resolutions = {8, 16};
  EXPECT_THROW(p.validate(), ConfigError);
  p = small_temporal();
  p.resolutions = {2, 4, 8};  // tau = 0.25 violates the step restriction for L_f = 1
  EXPECT_THROW(p.validate(), ConfigError);
  p = small_temporal();
  p.axis = StudyAxis::spatial;
  p.resolutions = {4, 8, 16};
  p.reference = 32;
  EXPECT_THROW(p.validate(), ConfigError);
  p.reference = 64;
  EXPECT_NO_THROW(p.validate());
}

// A tested run at the reference resolution reproduces the reference path.
TEST(Coupling, TemporalReferenceResolutionIsExact) {
  auto p = small_temporal();
  p.scheme = SchemeKind::milstein;
  p.resolutions = {32, 64, 128};
  const auto rep = detail::temporal_study<SpectralBasis>(p);
  for (double e : rep.raw[2]) EXPECT_EQ(e, 0.0);
  EXPECT_GT(rep.errors[0], 0.0);
}

TEST(Coupling, SpatialReferenceResolutionIsExact) {
  for (auto scheme : {SchemeKind::euler, SchemeKind::milstein}) {
    StudyPlan p = small_temporal();
    p.axis = StudyAxis::spatial;
    p.scheme = scheme;
    p.tau = 1.0 / 32;
    p.resolutions = {4, 8, 32};
    p.reference = 32;
    const auto rep = detail::spatial_study<SpectralBasis>(p);
    for (double e : rep.raw[2]) EXPECT_EQ(e, 0.0);
  }
}

TEST(Coupling, CoarseLevelsAtFinestReproduceTrajectoryForBothBasesAndSchemes) {
  const auto q = QWienerSpec::power_law(8);
  const auto tree = sample_tree(q, 32, 3, 0.5, 3, 1);
  const Model m;
  for (auto scheme : {SchemeKind::euler, SchemeKind::milstein}) {
    const SchemeConfig c{scheme, 0.5 / 32, 32, {}};
    const Stepper<SpectralBasis> s(std::make_shared<const SpectralBasis>(8), m, q, c);
    const Stepper<FemMesh> f(std::make_shared<const FemMesh>(16), m, q, c);
    const auto single = sample_tree(q, 32, 1, 0.5, 3, 1);
    const auto a = s.run(tree, 2, default_initial), b = s.run(single, 0, default_initial);
    const auto fa = f.run(tree, 2, default_initial), fb = f.run(single, 0, default_initial);
    for (std::size_t i = 0; i <= 32; ++i) {
      EXPECT_EQ(a.states[i].coeffs, b.states[i].coeffs);
      EXPECT_EQ(fa.states[i].coeffs, fb.states[i].coeffs);
    }
  }
}

TEST(TemporalStudy, LinearDriftZeroNoiseFirstOrder) {
  StudyPlan p;
  p.model = {DriftSpec::linear(-1.0), DiffusionSpec::additive(0.0)};
  p.resolutions = {64, 128, 256, 512};
  p.reference = 4096;
  p.samples = 2;
  p.modes = 8;
  p.threads = 1;
  const auto rep = strong_error_study(p);
  ASSERT_TRUE(rep.fit.has_value());
  EXPECT_NEAR(rep.fit->slope, 1.0, 0.05);
  EXPECT_EQ(rep.std_errors[0], 0.0);

  // Same study against the closed-form solution exp(-(pi^2 + 1) t) sin(pi x).
  std::vector<std::pair<double, double>> pts;
  const auto b = std::make_shared<const SpectralBasis>(8);
  const auto q = QWienerSpec::power_law(8);
  for (int steps : p.resolutions) {
    const double tau = 0.5 / steps;
    const auto tree = sample_tree(q, static_cast<std::size_t>(steps), 1, 0.5, 1, 0);
    const auto traj = run<SpectralBasis>(b, p.model, q, SchemeConfig{SchemeKind::euler, tau, std::size_t(steps), {}},
                                         tree, 0, default_initial);
    double sup = 0.0;
    for (int m = 0; m <= steps; ++m) {
      const double exact = std::exp(-(kPi * kPi + 1.0) * tau * m) / std::sqrt(2.0);
      sup = std::max(sup, std::abs(traj.states[std::size_t(m)].coeffs[0] - exact));
    }
    pts.emplace_back(tau, sup);
  }
  EXPECT_NEAR(fit_rate(pts).slope, 1.0, 0.05);
}

// Scaled-down run of the multiplicative Allen-Cahn Euler rate.
TEST(TemporalStudy, AllenCahnEulerHalfOrder) {
  StudyPlan p;
  p.samples = 40;
  p.threads = 1;
  const auto rep = strong_error_study(p);
  ASSERT_TRUE(rep.fit.has_value());
  EXPECT_GE(rep.fit->slope, 0.4);
  EXPECT_LE(rep.fit->slope, 0.6);
}

TEST(TruncationStudy, FullTruncationIsExact) {
  StudyPlan p = small_temporal();
  p.axis = StudyAxis::truncation;
  p.tau = 1.0 / 32;
  p.resolutions = {4, 8, 16};
  p.reference = 16;
  const auto rep = detail::truncation_study<SpectralBasis>(p);
  for (double e : rep.raw[2]) EXPECT_EQ(e, 0.0);
}

TEST(TruncationStudy, TailDecay) {
  StudyPlan p;
  p.axis = StudyAxis::truncation;
  p.modes = 64;
  p.tau = 1.0 / 64;
  p.resolutions = {8, 16, 32};
  p.reference = 64;
  p.samples = 40;
  p.threads = 1;
  const auto rep = truncation_study(p);
  EXPECT_LT(rep.errors[2] / rep.errors[1], 0.5);
  // The K^-3 tail of k^-4 halves per K -> 2^(1/3) K.
  EXPECT_NEAR(oracle::kTail16 / oracle::kTail32, 8.0, 0.5);
}

TEST(TruncationStudy, ZeroAdditiveNoiseHasNoError) {
  StudyPlan p;
  p.axis = StudyAxis::truncation;
  p.model = {DriftSpec::allen_cahn(), DiffusionSpec::additive(0.0)};
  p.modes = 16;
  p.tau = 1.0 / 16;
  p.resolutions = {2, 4, 8};
  p.reference = 16;
  p.samples = 4;
  p.threads = 1;
  const auto rep = truncation_study(p);
  for (double e : rep.errors) EXPECT_EQ(e, 0.0);
  EXPECT_FALSE(rep.fit.has_value());
}

TEST(StrongErrorStudy, ReproducibleAcrossRunsAndThreadCounts) {
  auto p = small_temporal();
  const auto a = strong_error_study(p);
  const auto b = strong_error_study(p);
  p.threads = 3;
  const auto c = strong_error_study(p);
  EXPECT_EQ(numerics(a).dump(), numerics(b).dump());
  EXPECT_EQ(numerics(a).dump(), numerics(c).dump());
  p.seed = 6;
  EXPECT_NE(numerics(a).dump(), numerics(strong_error_study(p)).dump());
}

TEST(StrongErrorStudy, ReportShape) {
  const auto rep = strong_error_study(small_temporal());
  EXPECT_EQ(rep.sizes, (std::vector<int>{8, 16, 32}));
  EXPECT_DOUBLE_EQ(rep.resolutions[0], 0.5 / 8);
  EXPECT_EQ(rep.completed, 12);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(std::isfinite(rep.errors[i]) && rep.errors[i] > 0.0);
    EXPECT_GT(rep.std_errors[i], 0.0);
    EXPECT_EQ(rep.raw[i].size(), 12u);
  }
  EXPECT_GE(rep.errors[0], rep.errors[2]);
  const auto j = to_json(rep);
  EXPECT_TRUE(j["fit"].contains("slope"));
  EXPECT_EQ(j["expected_slope"], 0.5);
  EXPECT_EQ(j["provenance"]["master_seed"], 5);
  EXPECT_EQ(j["provenance"]["config_hash"].get<std::string>().size(), 16u);
  const std::string csv = to_csv(rep);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  const std::string raw = raw_errors_csv(rep);
  EXPECT_EQ(std::count(raw.begin(), raw.end(), '\n'), 1 + 3 * 12);
}

TEST(StrongErrorStudy, FailingSamplesAbortStudy) {
  auto p = small_temporal();
  p.newton.max_iter = 2;
  p.newton.tol_residual = 1e-300;
  EXPECT_THROW(strong_error_study(p), StudyError);
}

TEST(StrongErrorStudy, FemTemporal) {
  auto p = small_temporal();
  p.basis = BasisKind::fem;
  p.cells = 32;
  const auto rep = strong_error_study(p);
  EXPECT_EQ(rep.basis, "fem");
  for (double e : rep.errors) EXPECT_TRUE(std::isfinite(e) && e > 0.0);
}
