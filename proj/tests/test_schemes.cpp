#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "spde/experiments.hpp"
#include "spde/schemes.hpp"

using namespace spde;

namespace {

std::shared_ptr<const SpectralBasis> spectral(int n) { return std::make_shared<const SpectralBasis>(n); }

Model heat(double c = 0.0) {
  return {c == 0.0 ? DriftSpec::zero() : DriftSpec::linear(c), DiffusionSpec::additive(0.0)};
}

SchemeConfig cfg(double tau, std::size_t steps = 1, SchemeKind s = SchemeKind::euler) {
  return SchemeConfig{s, tau, steps, NewtonSettings{}};
}

Vector unit(int n, int k) {
  Vector v = Vector::Zero(n);
  v[k] = 1.0;
  return v;
}

const std::vector<double> kNoNoise(64, 0.0);

}  // namespace

TEST(SchemeConfig, StepRestriction) {
  EXPECT_THROW(cfg(0.5).validate(1.0), ConfigError);
  EXPECT_THROW(cfg(0.25).validate(1.0), ConfigError);
  EXPECT_NO_THROW(cfg(0.2).validate(1.0));
  EXPECT_NO_THROW(cfg(0.9).validate(-2.0));
  EXPECT_THROW(cfg(1.0).validate(0.0), ConfigError);
  EXPECT_THROW(cfg(0.0).validate(0.0), ConfigError);
  try {
    cfg(0.5).validate(1.0);
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("1/(4 L_f)"), std::string::npos);
  }
}

TEST(EulerStep, HeatResolventOnFirstMode) {
  const double tau = 0.1;
  const auto b = spectral(8);
  const Stepper<SpectralBasis> st(b, heat(), QWienerSpec::power_law(8), cfg(tau));
  const auto next = st.euler_step(SpectralField(b, unit(8, 0)), kNoNoise);
  EXPECT_NEAR(next.coeffs[0], 1.0 / (1.0 + tau * kPi * kPi), 1e-14);
  EXPECT_NEAR(next.coeffs.tail(7).norm(), 0.0, 1e-15);
}

TEST(EulerStep, LinearDriftScalesEachMode) {
  const double tau = 0.05, c = -1.5;
  const auto b = spectral(8);
  const Stepper<SpectralBasis> st(b, heat(c), QWienerSpec::power_law(8), cfg(tau));
  for (int k = 0; k < 8; ++k) {
    const auto next = st.euler_step(SpectralField(b, unit(8, k)), kNoNoise);
    const double lam = std::pow((k + 1) * kPi, 2);
    EXPECT_NEAR(next.coeffs[k], 1.0 / (1.0 + tau * lam - tau * c), 1e-12) << k;
  }
}

TEST(EulerStep, CubicFixedPointAtOrigin) {
  const auto b = spectral(16);
  const Model m{DriftSpec::allen_cahn(), DiffusionSpec::additive(0.0)};
  const Stepper<SpectralBasis> st(b, m, QWienerSpec::power_law(16), cfg(0.1));
  StepStats stats;
  const auto next = st.euler_step(SpectralField::zero(b), kNoNoise, &stats);
  EXPECT_EQ(next.coeffs, Vector::Zero(16));
  EXPECT_LE(stats.iterations, 1);
}

TEST(MilsteinStep, AdditiveEqualsEuler) {
  const auto b = spectral(16);
  const Model m{DriftSpec::allen_cahn(), DiffusionSpec::additive(0.8)};
  const auto q = QWienerSpec::power_law(16);
  const Stepper<SpectralBasis> st(b, m, q, cfg(0x1.0p-5));
  const auto tree = sample_tree(q, 4, 1, 0.125, 3, 9);
  const auto u = st.initial_state(default_initial);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(st.milstein_step(u, tree.increment(0, j)).coeffs, st.euler_step(u, tree.increment(0, j)).coeffs);
  }
}

TEST(MilsteinStep, CompensatorForConstantStateSingleMode) {
  const double sigma = 0.5, c = 1.3, tau = 0x1.0p-4, lambda = 0.7;
  const auto mesh = std::make_shared<const FemMesh>(16);
  const Model m{DriftSpec::zero(), DiffusionSpec::linear(sigma)};
  const Stepper<FemMesh> st(mesh, m, QWienerSpec(std::vector<double>{lambda}), cfg(tau));
  const FemField u(mesh, Vector::Constant(15, c));
  const std::vector<double> zero{0.0};
  const auto rhs = st.explicit_part(u, zero, true);
  const Vector ug = u.on_grid();
  Vector hand(ug.size());
  for (Eigen::Index j = 0; j < ug.size(); ++j) {
    const double s = std::sin(kPi * mesh->nodes()[j]);
    hand[j] = -0.5 * sigma * sigma * ug[j] * tau * 2.0 * lambda * s * s;
  }
  const Vector expected = u.coeffs + mesh->solve_mass(mesh->load(hand));
  EXPECT_LT((rhs.coeffs - expected).cwiseAbs().maxCoeff(), 1e-12);
  // Euler leaves the state untouched when every increment vanishes.
  EXPECT_EQ(st.explicit_part(u, zero, false).coeffs, u.coeffs);
}

// One step from sin(pi x) at tau = 2^-4. Both schemes share the implicit drift
// solve, so the reference applies that same solve to the exact pointwise noise
// flow v = u0 exp(sigma dW - sigma^2 tau q / 2), accumulated over 2^10 micro steps.
TEST(MilsteinStep, BeatsEulerAgainstNoiseFlowReference) {
  const int n = 64;
  const double sigma = 0.5, tau = 0x1.0p-4;
  const auto b = spectral(n);
  const auto q = QWienerSpec::power_law(n);
  const Model m{DriftSpec::allen_cahn(), DiffusionSpec::linear(sigma)};
  const Stepper<SpectralBasis> st(b, m, q, cfg(tau));
  const auto u0 = st.initial_state(default_initial);
  const Vector ug = u0.on_grid();
  const Vector& qx = st.grid_noise().covariance();
  const int micro_levels = 10;
  int wins = 0;
  const int paths = 200;
  for (int p = 0; p < paths; ++p) {
    const auto tree = sample_tree(q, std::size_t{1} << micro_levels, micro_levels + 1, tau, 2718,
                                  static_cast<std::uint64_t>(p));
    Vector log_flow = Vector::Zero(ug.size());
    for (std::size_t j = 0; j < tree.steps(micro_levels); ++j) {
      const Vector dw = st.grid_noise().increment(tree.increment(micro_levels, j));
      log_flow += sigma * dw - 0.5 * sigma * sigma * tree.tau(micro_levels) * qx;
    }
    const Vector flow = ug.cwiseProduct(log_flow.array().exp().matrix());
    const auto reference = st.newton_solve(project_grid<SpectralBasis>(flow, b));
    const double e_euler = l2_distance(st.euler_step(u0, tree.increment(0, 0)), reference);
    const double e_milstein = l2_distance(st.milstein_step(u0, tree.increment(0, 0)), reference);
    if (e_milstein < e_euler) ++wins;
  }
  EXPECT_GE(wins, 190) << wins << " of " << paths;
}

TEST(Run, HeatSemigroupOracle) {
  const auto b = spectral(4);
  const auto q = QWienerSpec::power_law(4);
  std::vector<std::pair<double, double>> pts;
  for (int steps : {8, 16, 32, 64, 128}) {
    const double tau = 0.5 / steps;
    const auto tree = sample_tree(q, static_cast<std::size_t>(steps), 1, 0.5, 1, 0);
    const auto traj = run<SpectralBasis>(b, heat(), q, cfg(tau, static_cast<std::size_t>(steps)), tree, 0,
                                         [](double x) { return std::sqrt(2.0) * std::sin(kPi * x); });
    double sup = 0.0;
    for (int mstep = 0; mstep <= steps; ++mstep) {
      const double c1 = traj.states[static_cast<std::size_t>(mstep)].coeffs[0];
      EXPECT_NEAR(c1, std::pow(1.0 + tau * kPi * kPi, -mstep), 1e-12);
      sup = std::max(sup, std::abs(c1 - std::exp(-kPi * kPi * tau * mstep)));
    }
    pts.emplace_back(tau, sup);
  }
  EXPECT_NEAR(fit_rate(pts).slope, 1.0, 0.1);
}

TEST(Run, ZeroStepsReturnsProjection) {
  const auto b = spectral(8);
  const auto q = QWienerSpec::power_law(8);
  const Stepper<SpectralBasis> st(b, Model{}, q, cfg(0.1, 0));
  const auto tree = sample_tree(q, 1, 1, 0.1, 1, 0);
  const auto traj = st.run(tree, 0, default_initial);
  ASSERT_EQ(traj.states.size(), 1u);
  EXPECT_EQ(traj.states[0].coeffs, project<SpectralBasis>(default_initial, b).coeffs);
}

TEST(Run, DeterministicAcrossRuns) {
  const auto b = spectral(16);
  const auto q = QWienerSpec::power_law(16);
  const Stepper<SpectralBasis> st(b, Model{}, q, cfg(1.0 / 32, 16, SchemeKind::milstein));
  const auto a = st.run(sample_tree(q, 16, 1, 0.5, 12, 4), 0, default_initial);
  const auto c = st.run(sample_tree(q, 16, 1, 0.5, 12, 4), 0, default_initial);
  for (std::size_t m = 0; m < a.states.size(); ++m) EXPECT_EQ(a.states[m].coeffs, c.states[m].coeffs);
}

TEST(Run, RejectsMismatchedTree) {
  const auto b = spectral(8);
  const auto q = QWienerSpec::power_law(8);
  const Stepper<SpectralBasis> st(b, Model{}, q, cfg(1.0 / 16, 8));
  EXPECT_THROW(st.run(sample_tree(q, 16, 1, 0.5, 1, 0), 0, default_initial), ArgumentError);
  EXPECT_THROW(st.run(sample_tree(q, 8, 1, 1.0, 1, 0), 0, default_initial), ArgumentError);
}

TEST(Newton, LinearModelOneIteration) {
  const double tau = 0.05, c = 0.8;
  const auto b = spectral(8);
  const Stepper<SpectralBasis> st(b, heat(c), QWienerSpec::power_law(8), cfg(tau));
  const SpectralField rhs(b, Vector::LinSpaced(8, 1.0, -0.5));
  StepStats stats;
  const auto w = st.newton_solve(rhs, &stats);
  EXPECT_EQ(stats.iterations, 1);
  const Vector direct = rhs.coeffs.cwiseQuotient(
      (Vector::Ones(8) + tau * b->eigenvalues() - tau * c * Vector::Ones(8)));
  EXPECT_LT((w.coeffs - direct).norm(), 1e-12);

  const auto mesh = std::make_shared<const FemMesh>(16);
  const Stepper<FemMesh> fs(mesh, heat(c), QWienerSpec::power_law(8), cfg(tau));
  const FemField frhs(mesh, Vector::LinSpaced(15, 1.0, -0.5));
  const auto fw = fs.newton_solve(frhs, &stats);
  EXPECT_EQ(stats.iterations, 1);
  const TridiagonalMatrix a = (1.0 - tau * c) * mesh->mass() + tau * mesh->stiffness();
  EXPECT_LT((fw.coeffs - a.solve(mesh->apply_mass(frhs.coeffs))).norm(), 1e-12);
}

TEST(Newton, CubicZeroRhs) {
  const auto b = spectral(16);
  const Stepper<SpectralBasis> st(b, Model{}, QWienerSpec::power_law(16), cfg(0x1.0p-6));
  StepStats stats;
  EXPECT_EQ(st.newton_solve(SpectralField::zero(b), &stats).coeffs, Vector::Zero(16));
  EXPECT_EQ(stats.iterations, 0);
}

TEST(Newton, CubicRandomRhsSubstitution) {
  const int n = 64;
  const double tau = 0x1.0p-6;
  const auto b = spectral(n);
  const Model m{DriftSpec::allen_cahn(), DiffusionSpec::linear(0.5)};
  const Stepper<SpectralBasis> st(b, m, QWienerSpec::power_law(n), cfg(tau));
  std::mt19937_64 gen(20240611);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 100; ++trial) {
    Vector c(n);
    for (int k = 0; k < n; ++k) c[k] = normal(gen) / (k + 1);
    c *= std::uniform_real_distribution<double>(0.05, 1.0)(gen) / c.norm();
    StepStats stats;
    const auto w = st.newton_solve(SpectralField(b, c), &stats);
    EXPECT_LE(stats.iterations, 6) << trial;
    EXPECT_LE(stats.residual, 1e-12) << trial;
    // w = (1 + tau lambda)^{-1} (rhs + tau P f(w)).
    const Vector image = (c + tau * b->load(m.drift.f(w.on_grid())))
                             .cwiseQuotient(Vector::Ones(n) + tau * b->eigenvalues());
    EXPECT_LT((image - w.coeffs).norm(), 1e-12) << trial;
  }
}

TEST(Newton, IterationCapRaisesSolverError) {
  const auto b = spectral(16);
  SchemeConfig c = cfg(0.2);
  c.newton.max_iter = 1;
  const Stepper<SpectralBasis> st(b, Model{}, QWienerSpec::power_law(16), c);
  Vector big = Vector::Zero(16);
  big[0] = 3.0;
  try {
    st.newton_solve(SpectralField(b, big));
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_EQ(e.iterations(), 1);
    EXPECT_GT(e.last_residual(), 1e-12);
  }
}

TEST(Newton, FemAgreesWithSpectralOnSmoothData) {
  const double tau = 0x1.0p-6;
  const Model m{DriftSpec::allen_cahn(), DiffusionSpec::linear(0.5)};
  const auto b = spectral(64);
  const auto mesh = std::make_shared<const FemMesh>(256);
  const auto q = QWienerSpec::power_law(8);
  const Stepper<SpectralBasis> ss(b, m, q, cfg(tau));
  const Stepper<FemMesh> fs(mesh, m, q, cfg(tau));
  const auto u0 = [](double x) { return 1.5 * std::sin(kPi * x); };
  const auto ws = ss.newton_solve(ss.initial_state(u0));
  const auto wf = fs.newton_solve(fs.initial_state(u0));
  EXPECT_LT(l2_distance(wf, ws), 1e-4);
}

TEST(Stability, StatesStayBoundedOverLongRun) {
  const auto b = spectral(32);
  const auto q = QWienerSpec::power_law(32);
  const Stepper<SpectralBasis> st(b, Model{}, q, cfg(1.0 / 64, 256));
  const auto traj = st.run(sample_tree(q, 256, 1, 4.0, 6, 0), 0, default_initial);
  for (const auto& s : traj.states) {
    EXPECT_TRUE(s.finite());
    EXPECT_LT(s.l2_norm(), 10.0);
  }
  EXPECT_LE(traj.max_iterations(), 10);
}
