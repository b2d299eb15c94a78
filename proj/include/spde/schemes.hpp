#pragma once

// Drift-implicit Euler and Milstein Galerkin time steppers.
//
// One step solves the monotone nonlinear system
//
//   w - tau A w - tau P F(w) = u^m + P G(u^m) dW [+ P DG(u^m) G(u^m) I_m]
//
// with the noise taken at the previous state. In weak form this reads
// (M + tau K) w - tau <f(w), phi> = M rhs, with M the identity and K the
// eigenvalue diagonal in the sine basis. For tau L_f < 1/4 the map is strongly
// monotone, and damped Newton started from the right-hand side converges.

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>

#include "spde/basis.hpp"
#include "spde/coefficients.hpp"
#include "spde/errors.hpp"
#include "spde/noise.hpp"

namespace spde {

enum class SchemeKind { euler, milstein };

inline std::string to_string(SchemeKind s) { return s == SchemeKind::euler ? "euler" : "milstein"; }

struct NewtonSettings {
  double tol_residual = 1e-12;
  int max_iter = 50;
  double damping = 1.0;
};

struct SchemeConfig {
  SchemeKind scheme = SchemeKind::euler;
  double tau = 0.0;
  std::size_t steps = 0;
  NewtonSettings newton;

  double horizon() const { return tau * static_cast<double>(steps); }

  /// Step restriction tau in (0,1), and tau < 1/(4 L_f) when L_f > 0.
  void validate(double lipschitz) const {
    if (!(tau > 0.0 && tau < 1.0)) {
      throw ConfigError("scheme.tau = " + std::to_string(tau) + " must lie in (0,1)");
    }
    if (lipschitz > 0.0 && !(tau < 1.0 / (4.0 * lipschitz))) {
      std::ostringstream os;
      os << "scheme.tau = " << tau << " violates the step restriction tau < 1/(4 L_f) = "
         << 1.0 / (4.0 * lipschitz) << " (L_f = " << lipschitz << ")";
      throw ConfigError(os.str());
    }
    if (!(newton.tol_residual > 0.0)) throw ConfigError("newton.tol must be positive");
    if (newton.max_iter < 1) throw ConfigError("newton.max_iter must be >= 1");
    if (!(newton.damping > 0.0 && newton.damping <= 1.0)) throw ConfigError("newton.damping must lie in (0,1]");
  }
};

struct StepStats {
  int iterations = 0;
  double residual = 0.0;
};

template <GalerkinBasis B>
struct Trajectory {
  std::vector<Field<B>> states;
  std::vector<StepStats> diagnostics;

  int max_iterations() const {
    int m = 0;
    for (const auto& d : diagnostics) m = std::max(m, d.iterations);
    return m;
  }
};

namespace detail {

// Linearized step operator J = M + tau K - tau W(f'(u)) and its solve.
inline Vector jacobian_solve(const SpectralBasis& basis, const Vector& diag, double tau, const Vector& dfdu,
                             const Vector& rhs, double abs_tol) {
  const auto apply = [&](const Vector& v) -> Vector {
    return diag.cwiseProduct(v) - tau * basis.load(dfdu.cwiseProduct(basis.synthesize(v)));
  };
  // CG with the exact diagonal of J as preconditioner; J is SPD under the step
  // restriction, and affine drifts make the preconditioned operator the identity.
  const Matrix& t = basis.table();
  const Vector jdiag =
      diag - (tau / basis.quadrature_points()) * (t.array().square().matrix().transpose() * dfdu);
  const double target = std::max(abs_tol, 1e-14 * rhs.norm());
  Vector x = Vector::Zero(rhs.size());
  Vector r = rhs;
  Vector z = r.cwiseQuotient(jdiag);
  Vector p = z;
  double rz = r.dot(z);
  constexpr int kMaxCg = 200;
  for (int it = 0; it < kMaxCg && r.norm() > target; ++it) {
    const Vector ap = apply(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) break;
    const double alpha = rz / pap;
    x += alpha * p;
    r -= alpha * ap;
    z = r.cwiseQuotient(jdiag);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  if (r.norm() <= target) return x;

  // Dense fallback.
  Matrix j = -(tau / basis.quadrature_points()) * (t.transpose() * dfdu.asDiagonal() * t);
  j.diagonal() += diag;
  Eigen::LDLT<Matrix> ldlt(j);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw NumericError("jacobian_solve: linearized step operator is not positive definite");
  }
  return ldlt.solve(rhs);
}

inline Vector jacobian_solve(const FemMesh& mesh, const TridiagonalMatrix& base, double tau, const Vector& dfdu,
                             const Vector& rhs) {
  TridiagonalMatrix j = mesh.weighted_mass(dfdu);
  j *= -tau;
  j += base;
  if (!j.ldl_pivots()) throw NumericError("jacobian_solve: linearized step operator is not positive definite");
  return j.solve(rhs);
}

}  // namespace detail

/// Stepper for one (basis, model, noise, config) combination.
///
/// Holds the quadrature-grid tables; immutable after construction and safe to
/// share across threads.
template <GalerkinBasis B>
class Stepper {
 public:
  Stepper(std::shared_ptr<const B> basis, Model model, QWienerSpec noise, SchemeConfig config)
      : basis_(std::move(basis)),
        model_(std::move(model)),
        noise_(std::move(noise)),
        config_(config),
        grid_noise_(noise_, basis_->nodes()) {
    config_.validate(model_.drift.one_sided_lipschitz());
    if (model_.diffusion.is_additive()) {
      const Vector& x = basis_->nodes();
      additive_profile_ = x.unaryExpr([this](double v) { return model_.diffusion.profile()(v); });
    }
    if constexpr (std::is_same_v<B, SpectralBasis>) {
      step_diag_ = Vector::Ones(basis_->dim()) + config_.tau * basis_->eigenvalues();
    } else {
      step_matrix_ = basis_->mass() + config_.tau * basis_->stiffness();
    }
  }

  const std::shared_ptr<const B>& basis() const noexcept { return basis_; }
  const Model& model() const noexcept { return model_; }
  const QWienerSpec& noise() const noexcept { return noise_; }
  const SchemeConfig& config() const noexcept { return config_; }
  const GridNoise& grid_noise() const noexcept { return grid_noise_; }

  /// u^m + P G(u^m) dW, plus the Milstein term when requested.
  Field<B> explicit_part(const Field<B>& state, std::span<const double> dbeta, bool milstein) const {
    const Vector ug = state.on_grid();
    const Vector dw = grid_noise_.increment(dbeta);
    Vector noise_grid = model_.diffusion.is_additive()
                            ? Vector(additive_profile_.cwiseProduct(dw))
                            : Vector(model_.diffusion.multiplier(ug, basis_->nodes()).cwiseProduct(dw));
    if (milstein && !model_.diffusion.is_additive()) {
      const MilsteinBracket bracket{dw, grid_noise_.covariance(), config_.tau};
      noise_grid += milstein_correction_grid(model_.diffusion, ug, bracket);
    }
    detail::require_finite_values(noise_grid, ug, "noise term");
    Vector c = state.coeffs + basis_->solve_mass(basis_->load(noise_grid));
    return Field<B>(basis_, std::move(c));
  }

  Field<B> euler_step(const Field<B>& state, std::span<const double> dbeta, StepStats* stats = nullptr) const {
    return newton_solve(explicit_part(state, dbeta, false), stats);
  }

  Field<B> milstein_step(const Field<B>& state, std::span<const double> dbeta, StepStats* stats = nullptr) const {
    return newton_solve(explicit_part(state, dbeta, true), stats);
  }

  Field<B> step(const Field<B>& state, std::span<const double> dbeta, StepStats* stats = nullptr) const {
    return config_.scheme == SchemeKind::euler ? euler_step(state, dbeta, stats)
                                               : milstein_step(state, dbeta, stats);
  }

  /// Solves w - tau A w - tau P F(w) = rhs by damped Newton from w = rhs.
  Field<B> newton_solve(const Field<B>& rhs, StepStats* stats = nullptr) const {
    const double tau = config_.tau;
    const auto& nw = config_.newton;
    const Vector b = basis_->apply_mass(rhs.coeffs);
    Vector w = rhs.coeffs;
    double res = 0.0;
    for (int it = 0;; ++it) {
      const Vector ug = basis_->synthesize(w);
      const Vector fg = model_.drift.f(ug);
      detail::require_finite_values(fg, ug, "newton_solve: drift");
      Vector r = basis_->apply_mass(w) + tau * basis_->apply_stiffness(w) - tau * basis_->load(fg) - b;
      res = residual_norm(r);
      if (!std::isfinite(res)) throw SolverError("newton_solve: non-finite residual", res, it);
      if (res <= nw.tol_residual) {
        if (stats) *stats = {it, res};
        return Field<B>(basis_, std::move(w));
      }
      if (it == nw.max_iter) {
        std::ostringstream os;
        os << "newton_solve: no convergence in " << nw.max_iter << " iterations, residual " << res;
        throw SolverError(os.str(), res, it);
      }
      const Vector dfdu = model_.drift.df(ug);
      Vector delta;
      try {
        if constexpr (std::is_same_v<B, SpectralBasis>) {
          delta = detail::jacobian_solve(*basis_, step_diag_, tau, dfdu, r, 1e-2 * nw.tol_residual);
        } else {
          delta = detail::jacobian_solve(*basis_, step_matrix_, tau, dfdu, r);
        }
      } catch (const NumericError& e) {
        throw SolverError(std::string("newton_solve: singular Jacobian (") + e.what() + ")", res, it);
      }
      w -= nw.damping * delta;
    }
  }

  Field<B> initial_state(const std::function<double(double)>& u0) const {
    Field<B> s = project<B>(u0, basis_);
    if (!std::isfinite(h1_seminorm(s))) throw ArgumentError("initial datum: projection has no finite H^1 norm");
    return s;
  }

  /// Runs config().steps steps on `level` of the tree.
  Trajectory<B> run(const NoiseTree& tree, int level, Field<B> initial) const {
    const std::size_t steps = config_.steps;
    if (steps > 0) {
      if (tree.steps(level) != steps) {
        throw ArgumentError("run: noise level has " + std::to_string(tree.steps(level)) + " steps, config has " +
                            std::to_string(steps));
      }
      if (std::abs(tree.tau(level) - config_.tau) > 1e-12 * config_.tau) {
        throw ArgumentError("run: noise level step size does not match scheme.tau");
      }
      if (tree.modes() < noise_.modes()) throw ArgumentError("run: noise tree has fewer modes than K");
    }
    Trajectory<B> traj;
    traj.states.reserve(steps + 1);
    traj.diagnostics.reserve(steps);
    traj.states.push_back(std::move(initial));
    for (std::size_t m = 0; m < steps; ++m) {
      StepStats st;
      traj.states.push_back(step(traj.states.back(), tree.increment(level, m), &st));
      traj.diagnostics.push_back(st);
    }
    return traj;
  }

  Trajectory<B> run(const NoiseTree& tree, int level, const std::function<double(double)>& u0) const {
    return run(tree, level, initial_state(u0));
  }

 private:
  double residual_norm(const Vector& r) const {
    if constexpr (std::is_same_v<B, SpectralBasis>) {
      return r.norm();
    } else {
      return std::sqrt(std::max(0.0, r.dot(basis_->solve_mass(r))));
    }
  }

  std::shared_ptr<const B> basis_;
  Model model_;
  QWienerSpec noise_;
  SchemeConfig config_;
  GridNoise grid_noise_;
  Vector additive_profile_;
  Vector step_diag_;
  TridiagonalMatrix step_matrix_;
};

/// Convenience wrapper building a stepper for a single run.
template <GalerkinBasis B>
Trajectory<B> run(std::shared_ptr<const B> basis, const Model& model, const QWienerSpec& noise,
                  const SchemeConfig& config, const NoiseTree& tree, int level,
                  const std::function<double(double)>& u0) {
  return Stepper<B>(std::move(basis), model, noise, config).run(tree, level, u0);
}

/// The default initial datum sin(pi x), an element of H^2 with zero trace.
inline double default_initial(double x) { return std::sin(kPi * x); }

}  // namespace spde
