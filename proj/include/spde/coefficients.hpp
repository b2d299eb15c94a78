#pragma once

// Drift f and diffusion g of du = (Au + F(u)) dt + G(u) dW, with F(u)(x) = f(u(x))
// and (G(u)v)(x) = g(u(x)) v(x). Nemytskii operators are applied
// pseudo-spectrally: synthesize on the quadrature grid, act pointwise, load back.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spde/basis.hpp"
#include "spde/errors.hpp"
#include "spde/noise.hpp"

namespace spde {

namespace detail {

// Symmetric test grid for constant estimation.
struct TestGrid {
  static constexpr double kRadius = 10.0;
  static constexpr int kPoints = 100001;

  static double at(int i, double radius = kRadius) {
    return -radius + 2.0 * radius * i / (kPoints - 1);
  }
};

inline double horner(const std::vector<double>& a, double x) {
  double acc = 0.0;
  for (auto it = a.rbegin(); it != a.rend(); ++it) acc = acc * x + *it;
  return acc;
}

inline std::vector<double> differentiate(const std::vector<double>& a) {
  if (a.size() <= 1) return {};
  std::vector<double> d(a.size() - 1);
  for (std::size_t i = 1; i < a.size(); ++i) d[i - 1] = static_cast<double>(i) * a[i];
  return d;
}

inline std::vector<double> trim(std::vector<double> a) {
  while (!a.empty() && a.back() == 0.0) a.pop_back();
  return a;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Drift
// ---------------------------------------------------------------------------

enum class DriftKind { allen_cahn, odd_polynomial, polynomial, linear, zero };

inline std::string to_string(DriftKind k) {
  switch (k) {
    case DriftKind::allen_cahn: return "allen_cahn";
    case DriftKind::odd_polynomial: return "odd_polynomial";
    case DriftKind::polynomial: return "polynomial";
    case DriftKind::linear: return "linear";
    case DriftKind::zero: return "zero";
  }
  return "?";
}

/// Polynomial drift f(x) = sum_i a_i x^i with its growth data.
///
/// `polynomial` is unchecked and exists so that models violating the
/// one-sided Lipschitz condition can be constructed and diagnosed.
class DriftSpec {
 public:
  static DriftSpec allen_cahn() { return DriftSpec(DriftKind::allen_cahn, {0.0, 1.0, 0.0, -1.0}, 1.0); }
  static DriftSpec linear(double c) { return DriftSpec(DriftKind::linear, {0.0, c}, c); }
  static DriftSpec zero() { return DriftSpec(DriftKind::zero, {}, 0.0); }

  static DriftSpec odd_polynomial(std::vector<double> coeffs) {
    coeffs = detail::trim(std::move(coeffs));
    if (coeffs.size() < 2 || (coeffs.size() - 1) % 2 == 0) {
      throw ArgumentError("odd_polynomial: degree must be odd");
    }
    if (!(coeffs.back() < 0.0)) throw ArgumentError("odd_polynomial: leading coefficient must be negative");
    return DriftSpec(DriftKind::odd_polynomial, std::move(coeffs), std::nullopt);
  }

  static DriftSpec polynomial(std::vector<double> coeffs) {
    return DriftSpec(DriftKind::polynomial, detail::trim(std::move(coeffs)), std::nullopt);
  }

  DriftKind kind() const noexcept { return kind_; }
  const std::vector<double>& coeffs() const noexcept { return coeffs_; }
  int degree() const noexcept { return coeffs_.empty() ? 0 : static_cast<int>(coeffs_.size()) - 1; }
  /// q with |f'(x)| <= L'_f (1 + |x|^(q-2)).
  int growth_exponent() const noexcept { return std::max(2, degree() + 1); }
  /// q~ with |f''(x)| <= L''_f (1 + |x|^(q~-3)).
  int second_growth_exponent() const noexcept { return std::max(3, growth_exponent()); }
  /// L_f in (f(x)-f(y))(x-y) <= L_f (x-y)^2.
  double one_sided_lipschitz() const noexcept { return lipschitz_; }
  double growth_constant() const noexcept { return growth_constant_; }
  double second_growth_constant() const noexcept { return second_growth_constant_; }

  /// True when sup f' is finite on the real line (polynomial structure).
  bool monotone_structure() const noexcept {
    const auto d = detail::trim(derivative_);
    if (d.size() <= 1) return true;
    return (d.size() - 1) % 2 == 0 && d.back() < 0.0;
  }

  double f(double x) const { return detail::horner(coeffs_, x); }
  double df(double x) const { return detail::horner(derivative_, x); }
  double d2f(double x) const { return detail::horner(second_derivative_, x); }

  Vector f(const Vector& u) const { return u.unaryExpr([this](double x) { return f(x); }); }
  Vector df(const Vector& u) const { return u.unaryExpr([this](double x) { return df(x); }); }

 private:
  DriftSpec(DriftKind kind, std::vector<double> coeffs, std::optional<double> lipschitz)
      : kind_(kind),
        coeffs_(std::move(coeffs)),
        derivative_(detail::differentiate(coeffs_)),
        second_derivative_(detail::differentiate(derivative_)) {
    lipschitz_ = lipschitz ? *lipschitz : sup_derivative();
    const int q = growth_exponent();
    const int qt = second_growth_exponent();
    for (int i = 0; i < detail::TestGrid::kPoints; ++i) {
      const double x = detail::TestGrid::at(i);
      growth_constant_ = std::max(growth_constant_, std::abs(df(x)) / (1.0 + std::pow(std::abs(x), q - 2)));
      second_growth_constant_ =
          std::max(second_growth_constant_, std::abs(d2f(x)) / (1.0 + std::pow(std::abs(x), qt - 3)));
    }
  }

  // Max of f' on the test grid, polished by golden-section search around the argmax.
  double sup_derivative() const {
    int best = 0;
    double best_val = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < detail::TestGrid::kPoints; ++i) {
      const double v = df(detail::TestGrid::at(i));
      if (v > best_val) {
        best_val = v;
        best = i;
      }
    }
    double a = detail::TestGrid::at(std::max(best - 1, 0));
    double b = detail::TestGrid::at(std::min(best + 1, detail::TestGrid::kPoints - 1));
    constexpr double kInvPhi = 0.6180339887498949;
    for (int it = 0; it < 80; ++it) {
      const double c = b - kInvPhi * (b - a);
      const double d = a + kInvPhi * (b - a);
      if (df(c) > df(d)) b = d; else a = c;
    }
    return std::max(best_val, df(0.5 * (a + b)));
  }

  DriftKind kind_;
  std::vector<double> coeffs_;
  std::vector<double> derivative_;
  std::vector<double> second_derivative_;
  double lipschitz_ = 0.0;
  double growth_constant_ = 0.0;
  double second_growth_constant_ = 0.0;
};

// ---------------------------------------------------------------------------
// Diffusion
// ---------------------------------------------------------------------------

enum class DiffusionKind { additive, linear, sine, custom };

inline std::string to_string(DiffusionKind k) {
  switch (k) {
    case DiffusionKind::additive: return "additive";
    case DiffusionKind::linear: return "linear";
    case DiffusionKind::sine: return "sine";
    case DiffusionKind::custom: return "custom";
  }
  return "?";
}

class DiffusionSpec {
 public:
  using Scalar = std::function<double(double)>;

  /// G(u)v = b v with a fixed spatial profile b(x).
  static DiffusionSpec additive(Scalar profile) {
    DiffusionSpec s(DiffusionKind::additive);
    s.profile_ = std::move(profile);
    return s;
  }
  static DiffusionSpec additive(double b) {
    auto s = additive([b](double) { return b; });
    s.sigma_ = b;
    return s;
  }
  /// g(u) = sigma u.
  static DiffusionSpec linear(double sigma) {
    DiffusionSpec s(DiffusionKind::linear);
    s.sigma_ = sigma;
    return s;
  }
  /// g(u) = sigma sin(u).
  static DiffusionSpec sine(double sigma) {
    DiffusionSpec s(DiffusionKind::sine);
    s.sigma_ = sigma;
    return s;
  }
  static DiffusionSpec custom(Scalar g, Scalar dg, Scalar d2g) {
    DiffusionSpec s(DiffusionKind::custom);
    s.g_ = std::move(g);
    s.dg_ = std::move(dg);
    s.d2g_ = std::move(d2g);
    return s;
  }

  DiffusionKind kind() const noexcept { return kind_; }
  bool is_additive() const noexcept { return kind_ == DiffusionKind::additive; }
  /// Symmetry of DG(u)(G(u)e_k)e_l in (k,l); holds for every Nemytskii g with diagonal Q.
  bool commutative() const noexcept { return true; }
  double sigma() const noexcept { return sigma_; }
  const Scalar& profile() const noexcept { return profile_; }

  double g(double u) const {
    switch (kind_) {
      case DiffusionKind::linear: return sigma_ * u;
      case DiffusionKind::sine: return sigma_ * std::sin(u);
      case DiffusionKind::custom: return g_(u);
      case DiffusionKind::additive: break;
    }
    throw ArgumentError("DiffusionSpec::g: additive noise has no pointwise g(u)");
  }
  double dg(double u) const {
    switch (kind_) {
      case DiffusionKind::linear: return sigma_;
      case DiffusionKind::sine: return sigma_ * std::cos(u);
      case DiffusionKind::custom: return dg_(u);
      case DiffusionKind::additive: return 0.0;
    }
    return 0.0;
  }
  double d2g(double u) const {
    switch (kind_) {
      case DiffusionKind::linear: return 0.0;
      case DiffusionKind::sine: return -sigma_ * std::sin(u);
      case DiffusionKind::custom: return d2g_(u);
      case DiffusionKind::additive: return 0.0;
    }
    return 0.0;
  }

  /// Multiplier of Delta W at each node: g(u(x_j)) or b(x_j).
  Vector multiplier(const Vector& u_grid, const Vector& nodes) const {
    if (is_additive()) return nodes.unaryExpr([this](double x) { return profile_(x); });
    return u_grid.unaryExpr([this](double x) { return g(x); });
  }

  /// g'(u) g(u) at each node; zero for additive noise.
  Vector milstein_factor(const Vector& u_grid) const {
    if (is_additive()) return Vector::Zero(u_grid.size());
    return u_grid.unaryExpr([this](double x) { return dg(x) * g(x); });
  }

 private:
  explicit DiffusionSpec(DiffusionKind k) : kind_(k) {}

  DiffusionKind kind_;
  double sigma_ = 0.0;
  Scalar profile_;
  Scalar g_, dg_, d2g_;
};

/// Drift and diffusion together.
struct Model {
  DriftSpec drift = DriftSpec::allen_cahn();
  DiffusionSpec diffusion = DiffusionSpec::linear(0.5);
};

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

namespace detail {

inline void require_finite_values(const Vector& values, const Vector& input, const char* what) {
  if (!values.allFinite()) {
    std::ostringstream os;
    os << what << ": non-finite value for input of magnitude " << input.cwiseAbs().maxCoeff();
    throw NumericError(os.str());
  }
}

}  // namespace detail

/// P F(u).
template <GalerkinBasis B>
Field<B> apply_drift(const DriftSpec& spec, const Field<B>& u) {
  const Vector ug = u.on_grid();
  const Vector fg = spec.f(ug);
  detail::require_finite_values(fg, ug, "apply_drift");
  return project_grid<B>(fg, u.basis);
}

/// P G(u) dW with dW given at the quadrature nodes of u's basis.
template <GalerkinBasis B>
Field<B> apply_diffusion(const DiffusionSpec& spec, const Field<B>& u, const Vector& dw_grid) {
  if (dw_grid.size() != u.basis->nodes().size()) throw ArgumentError("apply_diffusion: grid size mismatch");
  const Vector ug = u.on_grid();
  const Vector prod = spec.multiplier(ug, u.basis->nodes()).cwiseProduct(dw_grid);
  detail::require_finite_values(prod, ug, "apply_diffusion");
  return project_grid<B>(prod, u.basis);
}

/// P G(u) dW with dW given as a field in the same basis.
template <GalerkinBasis B>
Field<B> apply_diffusion(const DiffusionSpec& spec, const Field<B>& u, const Field<B>& dw) {
  return apply_diffusion(spec, u, dw.on_grid());
}

/// Pointwise 1/2 g'(u) g(u) [dW^2 - tau q] before projection.
inline Vector milstein_correction_grid(const DiffusionSpec& spec, const Vector& u_grid,
                                       const MilsteinBracket& bracket) {
  return spec.milstein_factor(u_grid).cwiseProduct(bracket.iterated_integral());
}

/// P DG(u) G(u) [integral of (W(r) - W(t_m)) dW(r)] in the commutative closed form.
template <GalerkinBasis B>
Field<B> milstein_correction(const DiffusionSpec& spec, const Field<B>& u, const MilsteinBracket& bracket) {
  if (spec.is_additive()) return Field<B>::zero(u.basis);
  const Vector ug = u.on_grid();
  if (bracket.dw.size() != ug.size()) throw ArgumentError("milstein_correction: grid size mismatch");
  const Vector c = milstein_correction_grid(spec, ug, bracket);
  detail::require_finite_values(c, ug, "milstein_correction");
  return project_grid<B>(c, u.basis);
}

// ---------------------------------------------------------------------------
// Assumption checks
// ---------------------------------------------------------------------------

enum class CheckStatus { pass, fail, asserted };

struct AssumptionCheck {
  std::string id;
  std::string title;
  CheckStatus status = CheckStatus::pass;
  std::string detail;
  std::optional<std::pair<double, double>> witness;
};

struct AssumptionReport {
  std::vector<AssumptionCheck> checks;
  double one_sided_lipschitz = 0.0;  // estimated L_f
  double growth_constant = 0.0;      // estimated L'_f
  int growth_exponent = 2;           // q
  double second_growth_constant = 0.0;
  int second_growth_exponent = 3;    // q~
  double sup_dg = 0.0;
  double sup_d2g = 0.0;
  double lipschitz_dg_g = 0.0;
  double g_at_zero = 0.0;
  bool supports_gamma_one = false;

  bool all_passed() const {
    return std::none_of(checks.begin(), checks.end(),
                        [](const AssumptionCheck& c) { return c.status == CheckStatus::fail; });
  }

  const AssumptionCheck* find(const std::string& id) const {
    for (const auto& c : checks) if (c.id == id) return &c;
    return nullptr;
  }
};

namespace detail {

struct GridSup {
  double value = -std::numeric_limits<double>::infinity();
  double x = 0.0, y = 0.0;
};

// Largest difference quotient (h(x_{i+1}) - h(x_i)) / (x_{i+1} - x_i) over grid
// neighbours with |x| <= radius; `absolute` takes its modulus.
template <class H>
GridSup sup_quotient(const H& h, double radius, bool absolute) {
  GridSup s;
  double xp = TestGrid::at(0, radius);
  double hp = h(xp);
  for (int i = 1; i < TestGrid::kPoints; ++i) {
    const double x = TestGrid::at(i, radius);
    const double hx = h(x);
    double q = (hx - hp) / (x - xp);
    if (absolute) q = std::abs(q);
    if (q > s.value) s = {q, xp, x};
    xp = x;
    hp = hx;
  }
  return s;
}

template <class H>
double sup_abs(const H& h, double radius) {
  double m = 0.0;
  for (int i = 0; i < TestGrid::kPoints; ++i) m = std::max(m, std::abs(h(TestGrid::at(i, radius))));
  return m;
}

// A grid supremum is taken as bounded when doubling the window barely moves it.
inline bool stable(double full, double half) { return full <= half + 0.25 * (1.0 + std::abs(half)); }

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

}  // namespace detail

/// Grid-based verification of the drift and diffusion assumptions.
///
/// Constants are estimated on [-10, 10] with 1e5+1 points. Boundedness is judged
/// by comparing the supremum on [-10, 10] with the one on [-5, 5]. The
/// H^{1+theta} growth of G is a function-space property and is reported as
/// asserted for the built-in diffusions.
inline AssumptionReport check_assumptions(const DriftSpec& drift, const DiffusionSpec& diffusion,
                                          const QWienerSpec* noise = nullptr) {
  using detail::TestGrid;
  AssumptionReport r;
  const double R = TestGrid::kRadius;

  // One-sided Lipschitz.
  auto f = [&](double x) { return drift.f(x); };
  const auto full = detail::sup_quotient(f, R, false);
  const auto half = detail::sup_quotient(f, R / 2, false);
  r.one_sided_lipschitz = full.value;
  {
    AssumptionCheck c{"A1.monotone", "one-sided Lipschitz drift", CheckStatus::pass, "", std::nullopt};
    const bool bounded = drift.monotone_structure() && detail::stable(full.value, half.value);
    if (!bounded) {
      c.status = CheckStatus::fail;
      c.witness = std::make_pair(full.x, full.y);
      const double dx = full.y - full.x;
      c.detail = "no finite L_f: (f(x)-f(y))(x-y) = " + detail::fmt((f(full.y) - f(full.x)) * dx) +
                 " exceeds L(x-y)^2 = " + detail::fmt(half.value * dx * dx) + " for L = " +
                 detail::fmt(half.value) + " at (x,y) = (" + detail::fmt(full.x) + ", " +
                 detail::fmt(full.y) + ")";
    } else if (full.value > drift.one_sided_lipschitz() + 1e-9) {
      c.status = CheckStatus::fail;
      c.witness = std::make_pair(full.x, full.y);
      c.detail = "estimated L_f = " + detail::fmt(full.value) + " exceeds declared " +
                 detail::fmt(drift.one_sided_lipschitz());
    } else {
      c.detail = "L_f ~ " + detail::fmt(full.value);
    }
    r.checks.push_back(std::move(c));
  }

  // Growth of f' and f''.
  r.growth_exponent = drift.growth_exponent();
  r.second_growth_exponent = drift.second_growth_exponent();
  {
    const int q = r.growth_exponent;
    auto ratio = [&](double x) { return std::abs(drift.df(x)) / (1.0 + std::pow(std::abs(x), q - 2)); };
    const double s_full = detail::sup_abs(ratio, R);
    const double s_half = detail::sup_abs(ratio, R / 2);
    r.growth_constant = s_full;
    AssumptionCheck c{"A1.growth", "polynomial growth of f'", CheckStatus::pass,
                      "L'_f ~ " + detail::fmt(s_full) + ", q = " + std::to_string(q), std::nullopt};
    if (!detail::stable(s_full, s_half)) c.status = CheckStatus::fail;
    r.checks.push_back(std::move(c));
  }
  {
    const int qt = r.second_growth_exponent;
    auto ratio = [&](double x) { return std::abs(drift.d2f(x)) / (1.0 + std::pow(std::abs(x), qt - 3)); };
    const double s_full = detail::sup_abs(ratio, R);
    const double s_half = detail::sup_abs(ratio, R / 2);
    r.second_growth_constant = s_full;
    AssumptionCheck c{"A4.growth", "growth of f''", CheckStatus::pass,
                      "L''_f ~ " + detail::fmt(s_full) + ", q~ = " + std::to_string(qt), std::nullopt};
    if (!detail::stable(s_full, s_half)) c.status = CheckStatus::fail;
    r.checks.push_back(std::move(c));
  }

  // Diffusion.
  if (diffusion.is_additive()) {
    r.checks.push_back({"A2.lipschitz", "Lipschitz diffusion", CheckStatus::pass,
                        "additive noise: G is constant", std::nullopt});
    r.checks.push_back({"A3.regularity", "H^{1+theta} growth of G", CheckStatus::asserted,
                        "asserted by model builder (smooth profile, H^1-trace-class Q)", std::nullopt});
    r.checks.push_back({"A-g.derivatives", "bounded DG, D^2G and Lipschitz DG G", CheckStatus::pass,
                        "additive noise: DG = 0", std::nullopt});
    r.checks.push_back({"A5.commutative", "commutative noise", CheckStatus::pass,
                        "trivially satisfied for additive noise", std::nullopt});
  } else {
    auto dg = [&](double x) { return diffusion.dg(x); };
    auto d2g = [&](double x) { return diffusion.d2g(x); };
    auto dgg = [&](double x) { return diffusion.dg(x) * diffusion.g(x); };
    r.sup_dg = detail::sup_abs(dg, R);
    r.sup_d2g = detail::sup_abs(d2g, R);
    const auto lip_full = detail::sup_quotient(dgg, R, true);
    const auto lip_half = detail::sup_quotient(dgg, R / 2, true);
    r.lipschitz_dg_g = lip_full.value;
    r.g_at_zero = diffusion.g(0.0);

    AssumptionCheck a2{"A2.lipschitz", "Lipschitz diffusion", CheckStatus::pass,
                       "sup|g'| ~ " + detail::fmt(r.sup_dg) + ", g(0) = " + detail::fmt(r.g_at_zero),
                       std::nullopt};
    if (!detail::stable(r.sup_dg, detail::sup_abs(dg, R / 2))) {
      a2.status = CheckStatus::fail;
      a2.detail += " (g' unbounded)";
    }
    if (r.g_at_zero != 0.0) {
      a2.status = CheckStatus::fail;
      a2.detail += " (g(0) != 0 while the noise modes do not vanish on the boundary)";
    }
    r.checks.push_back(std::move(a2));
    r.checks.push_back({"A3.regularity", "H^{1+theta} growth of G", CheckStatus::asserted,
                        "asserted by model builder for built-in Nemytskii g", std::nullopt});

    AssumptionCheck ag{"A-g.derivatives", "bounded DG, D^2G and Lipschitz DG G", CheckStatus::pass,
                       "sup|g''| ~ " + detail::fmt(r.sup_d2g) + ", Lip(g'g) ~ " + detail::fmt(r.lipschitz_dg_g),
                       std::nullopt};
    if (!detail::stable(r.sup_d2g, detail::sup_abs(d2g, R / 2)) ||
        !detail::stable(lip_full.value, lip_half.value)) {
      ag.status = CheckStatus::fail;
      ag.witness = std::make_pair(lip_full.x, lip_full.y);
    }
    r.checks.push_back(std::move(ag));
    r.checks.push_back({"A5.commutative", "commutative noise", CheckStatus::pass,
                        "Nemytskii g with diagonal Q: DG(u)(G(u)e_k)e_l is symmetric in (k,l)", std::nullopt});
  }

  if (noise != nullptr) {
    AssumptionCheck c{"Q.trace", "trace condition sum lambda_k ||e_k||^2_{W^1,inf} < inf", CheckStatus::pass,
                      "", std::nullopt};
    if (noise->decay() > 0.0) {
      c.detail = "lambda_k = k^-" + detail::fmt(noise->decay());
      if (!(noise->decay() > QWienerSpec::kMinDecay)) c.status = CheckStatus::fail;
    } else {
      c.detail = "finite truncation, K = " + std::to_string(noise->modes());
    }
    r.checks.push_back(std::move(c));
  }

  r.supports_gamma_one = r.all_passed();
  return r;
}

inline void print(const AssumptionReport& r, std::ostream& os) {
  for (const auto& c : r.checks) {
    const char* tag = c.status == CheckStatus::pass ? "PASS" : c.status == CheckStatus::fail ? "FAIL" : "ASSERTED";
    os << std::left << std::setw(9) << tag << std::setw(18) << c.id << c.title;
    if (!c.detail.empty()) os << ": " << c.detail;
    os << '\n';
  }
  os << "estimated L_f = " << detail::fmt(r.one_sided_lipschitz) << ", L'_f = " << detail::fmt(r.growth_constant)
     << " (q = " << r.growth_exponent << "), L''_f = " << detail::fmt(r.second_growth_constant)
     << " (q~ = " << r.second_growth_exponent << ")\n";
  os << "regime: " << (r.supports_gamma_one ? "gamma = 1 (H^2 data, sharp rates)" : "not covered") << '\n';
}

}  // namespace spde
