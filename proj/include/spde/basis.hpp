#pragma once

// Spatial discretization of (0,1) with homogeneous Dirichlet conditions.
//
// Two Galerkin spaces are provided: the span of the first N Dirichlet
// eigenfunctions e_k(x) = sqrt(2) sin(k pi x), and continuous piecewise-linear
// finite elements on a uniform mesh. Both expose the same small interface over
// a fixed quadrature grid (synthesize coefficients to grid values, load grid
// values against the basis, mass and stiffness actions), which is all the
// pseudo-spectral Nemytskii evaluations and the implicit solvers need.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spde/errors.hpp"

namespace spde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kSqrt2 = std::numbers::sqrt2;

namespace detail {

inline void require_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) {
    throw NumericError(std::string(what) + ": non-finite value");
  }
}

inline void require_unit_interval(double x) {
  if (!(x >= 0.0 && x <= 1.0)) {
    throw ArgumentError("evaluation point " + std::to_string(x) + " outside [0,1]");
  }
}

// s[k-1] = sqrt(2) sin(k pi x) for k = 1..n via the three-term recurrence.
inline void sine_row(double x, std::span<double> s) {
  if (s.empty()) return;
  const double theta = kPi * x;
  const double c2 = 2.0 * std::cos(theta);
  double prev = 0.0;
  double cur = std::sin(theta);
  for (std::size_t k = 0; k < s.size(); ++k) {
    s[k] = kSqrt2 * cur;
    const double next = c2 * cur - prev;
    prev = cur;
    cur = next;
  }
}

}  // namespace detail

/// Dirichlet eigenpair of -d^2/dx^2 on (0,1).
struct Eigenpair {
  double eigenvalue;
  std::function<double(double)> eigenfunction;
};

inline Eigenpair eigenpair(int k) {
  if (k < 1) throw ArgumentError("eigenpair: mode index must be >= 1, got " + std::to_string(k));
  const double kpi = k * kPi;
  return {kpi * kpi, [kpi](double x) { return kSqrt2 * std::sin(kpi * x); }};
}

// ---------------------------------------------------------------------------
// Tridiagonal matrices
// ---------------------------------------------------------------------------

class TridiagonalMatrix {
 public:
  TridiagonalMatrix() = default;

  TridiagonalMatrix(std::vector<double> sub, std::vector<double> diag, std::vector<double> super)
      : sub_(std::move(sub)), diag_(std::move(diag)), super_(std::move(super)) {
    const std::size_t n = diag_.size();
    const std::size_t off = n == 0 ? 0 : n - 1;
    if (sub_.size() != off || super_.size() != off) {
      throw ArgumentError("TridiagonalMatrix: off-diagonals must have size n-1");
    }
  }

  static TridiagonalMatrix symmetric(std::vector<double> diag, std::vector<double> off) {
    auto copy = off;
    return {std::move(copy), std::move(diag), std::move(off)};
  }

  std::size_t size() const noexcept { return diag_.size(); }
  const std::vector<double>& sub() const noexcept { return sub_; }
  const std::vector<double>& diag() const noexcept { return diag_; }
  const std::vector<double>& super() const noexcept { return super_; }

  bool is_symmetric() const noexcept { return sub_ == super_; }

  Vector multiply(const Vector& x) const {
    const auto n = static_cast<Eigen::Index>(size());
    if (x.size() != n) throw ArgumentError("TridiagonalMatrix::multiply: size mismatch");
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double acc = diag_[i] * x[i];
      if (i > 0) acc += sub_[i - 1] * x[i - 1];
      if (i + 1 < n) acc += super_[i] * x[i + 1];
      y[i] = acc;
    }
    return y;
  }

  /// Pivots of the LDL^T factorization; empty optional when a pivot is not positive.
  std::optional<std::vector<double>> ldl_pivots() const {
    std::vector<double> d(size());
    for (std::size_t i = 0; i < size(); ++i) {
      d[i] = diag_[i];
      if (i > 0) d[i] -= sub_[i - 1] * super_[i - 1] / d[i - 1];
      if (!(d[i] > 0.0)) return std::nullopt;
    }
    return d;
  }

  bool positive_definite() const { return is_symmetric() && ldl_pivots().has_value(); }

  /// Thomas algorithm; throws NumericError on a zero pivot.
  Vector solve(const Vector& b) const {
    const auto n = static_cast<Eigen::Index>(size());
    if (b.size() != n) throw ArgumentError("TridiagonalMatrix::solve: size mismatch");
    if (n == 0) return b;
    std::vector<double> c(static_cast<std::size_t>(n));
    Vector x(n);
    double denom = diag_[0];
    if (denom == 0.0) throw NumericError("TridiagonalMatrix::solve: singular pivot at row 0");
    c[0] = n > 1 ? super_[0] / denom : 0.0;
    x[0] = b[0] / denom;
    for (Eigen::Index i = 1; i < n; ++i) {
      denom = diag_[i] - sub_[i - 1] * c[i - 1];
      if (denom == 0.0 || !std::isfinite(denom)) {
        throw NumericError("TridiagonalMatrix::solve: singular pivot at row " + std::to_string(i));
      }
      c[i] = i + 1 < n ? super_[i] / denom : 0.0;
      x[i] = (b[i] - sub_[i - 1] * x[i - 1]) / denom;
    }
    for (Eigen::Index i = n - 2; i >= 0; --i) x[i] -= c[i] * x[i + 1];
    return x;
  }

  TridiagonalMatrix& operator+=(const TridiagonalMatrix& o) {
    if (o.size() != size()) throw ArgumentError("TridiagonalMatrix: size mismatch");
    for (std::size_t i = 0; i < diag_.size(); ++i) diag_[i] += o.diag_[i];
    for (std::size_t i = 0; i < sub_.size(); ++i) {
      sub_[i] += o.sub_[i];
      super_[i] += o.super_[i];
    }
    return *this;
  }

  TridiagonalMatrix& operator*=(double s) {
    for (auto& v : diag_) v *= s;
    for (auto& v : sub_) v *= s;
    for (auto& v : super_) v *= s;
    return *this;
  }

  Matrix dense() const {
    const auto n = static_cast<Eigen::Index>(size());
    Matrix m = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      m(i, i) = diag_[i];
      if (i + 1 < n) {
        m(i + 1, i) = sub_[i];
        m(i, i + 1) = super_[i];
      }
    }
    return m;
  }

 private:
  std::vector<double> sub_, diag_, super_;
};

inline TridiagonalMatrix operator+(TridiagonalMatrix a, const TridiagonalMatrix& b) { return a += b; }
inline TridiagonalMatrix operator*(double s, TridiagonalMatrix a) { return a *= s; }

// ---------------------------------------------------------------------------
// Spectral sine basis
// ---------------------------------------------------------------------------

/// Span of e_1..e_N with a P-point composite midpoint grid.
///
/// The midpoint rule integrates sin(j pi x) sin(l pi x) exactly for j + l < 2P,
/// so loads of polynomial nonlinearities of degree d are alias-free while
/// (d + 1) N < 2P.
class SpectralBasis {
 public:
  static constexpr int kMinQuadrature = 1024;

  explicit SpectralBasis(int modes, int growth_exponent = 4)
      : SpectralBasis(modes, growth_exponent, std::max(4 * growth_exponent * modes, kMinQuadrature)) {}

  SpectralBasis(int modes, int growth_exponent, int quadrature_points)
      : modes_(modes), growth_exponent_(growth_exponent), points_(quadrature_points) {
    if (modes < 1) throw ArgumentError("SpectralBasis: need at least one mode");
    if (growth_exponent < 2) throw ArgumentError("SpectralBasis: growth exponent must be >= 2");
    if (quadrature_points < growth_exponent * modes) {
      throw ArgumentError("SpectralBasis: quadrature grid must satisfy P >= q*N");
    }
    eigenvalues_.resize(modes_);
    for (int k = 0; k < modes_; ++k) {
      const double kpi = (k + 1) * kPi;
      eigenvalues_[k] = kpi * kpi;
    }
    nodes_.resize(points_);
    for (int j = 0; j < points_; ++j) nodes_[j] = (j + 0.5) / points_;
    weights_ = Vector::Constant(points_, 1.0 / points_);
    table_.resize(points_, modes_);
    for (int k = 0; k < modes_; ++k) {
      for (int j = 0; j < points_; ++j) table_(j, k) = kSqrt2 * std::sin((k + 1) * kPi * nodes_[j]);
    }
  }

  Eigen::Index dim() const noexcept { return modes_; }
  int modes() const noexcept { return modes_; }
  int growth_exponent() const noexcept { return growth_exponent_; }
  int quadrature_points() const noexcept { return points_; }
  const Vector& eigenvalues() const noexcept { return eigenvalues_; }
  const Vector& nodes() const noexcept { return nodes_; }
  const Vector& weights() const noexcept { return weights_; }
  /// P x N matrix of e_k at the quadrature nodes.
  const Matrix& table() const noexcept { return table_; }

  Vector synthesize(const Vector& coeffs) const { return table_ * coeffs; }

  /// (integral of v e_k)_k by quadrature, v given at the nodes.
  Vector load(const Vector& grid_values) const {
    return table_.transpose() * grid_values / static_cast<double>(points_);
  }

  Vector apply_mass(const Vector& c) const { return c; }
  Vector solve_mass(const Vector& b) const { return b; }
  Vector apply_stiffness(const Vector& c) const { return eigenvalues_.cwiseProduct(c); }
  double l2_norm(const Vector& c) const { return c.norm(); }

  Vector evaluate(const Vector& coeffs, std::span<const double> points) const {
    Vector out(static_cast<Eigen::Index>(points.size()));
    std::vector<double> row(static_cast<std::size_t>(modes_));
    for (std::size_t i = 0; i < points.size(); ++i) {
      detail::require_unit_interval(points[i]);
      if (points[i] == 0.0 || points[i] == 1.0) {
        out[static_cast<Eigen::Index>(i)] = 0.0;
        continue;
      }
      detail::sine_row(points[i], row);
      double acc = 0.0;
      for (int k = 0; k < modes_; ++k) acc += coeffs[k] * row[static_cast<std::size_t>(k)];
      out[static_cast<Eigen::Index>(i)] = acc;
    }
    return out;
  }

  bool same_space(const SpectralBasis& o) const noexcept { return o.modes_ == modes_; }

 private:
  int modes_;
  int growth_exponent_;
  int points_;
  Vector eigenvalues_;
  Vector nodes_;
  Vector weights_;
  Matrix table_;
};

// ---------------------------------------------------------------------------
// P1 finite elements
// ---------------------------------------------------------------------------

/// Uniform mesh of (0,1) with interior hat functions as degrees of freedom.
///
/// Quadrature is three-point Gauss-Legendre on `sub` equal pieces of every
/// cell, which integrates piecewise polynomials up to degree five exactly and
/// resolves oscillatory noise through the sub-division.
class FemMesh {
 public:
  static constexpr int kMinQuadrature = 1024;

  explicit FemMesh(int cells) : FemMesh(cells, default_subdivision(cells)) {}

  FemMesh(int cells, int subdivision) : cells_(cells), sub_(subdivision) {
    if (cells < 2) throw ArgumentError("FemMesh: need at least 2 cells for an interior node");
    if (subdivision < 1) throw ArgumentError("FemMesh: subdivision must be positive");
    h_ = 1.0 / cells_;
    static constexpr double kGaussX[3] = {0.5 - 0.3872983346207417, 0.5, 0.5 + 0.3872983346207417};
    static constexpr double kGaussW[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
    const int per_cell = 3 * sub_;
    const Eigen::Index total = static_cast<Eigen::Index>(cells_) * per_cell;
    nodes_.resize(total);
    weights_.resize(total);
    cell_.resize(static_cast<std::size_t>(total));
    local_.resize(total);
    Eigen::Index q = 0;
    for (int c = 0; c < cells_; ++c) {
      for (int s = 0; s < sub_; ++s) {
        for (int g = 0; g < 3; ++g, ++q) {
          const double xi = (s + kGaussX[g]) / sub_;
          cell_[static_cast<std::size_t>(q)] = c;
          local_[q] = xi;
          nodes_[q] = (c + xi) * h_;
          weights_[q] = kGaussW[g] * h_ / sub_;
        }
      }
    }
    mass_ = TridiagonalMatrix::symmetric(std::vector<double>(dim_size(), 4.0 * h_ / 6.0),
                                         std::vector<double>(dim_size() - 1, h_ / 6.0));
    stiffness_ = TridiagonalMatrix::symmetric(std::vector<double>(dim_size(), 2.0 / h_),
                                              std::vector<double>(dim_size() - 1, -1.0 / h_));
  }

  static int default_subdivision(int cells) {
    const int target = std::max(8 * cells, kMinQuadrature);
    return std::max(1, (target + 3 * cells - 1) / (3 * cells));
  }

  Eigen::Index dim() const noexcept { return cells_ - 1; }
  int cells() const noexcept { return cells_; }
  double h() const noexcept { return h_; }
  int subdivision() const noexcept { return sub_; }
  const Vector& nodes() const noexcept { return nodes_; }
  const Vector& weights() const noexcept { return weights_; }
  const TridiagonalMatrix& mass() const noexcept { return mass_; }
  const TridiagonalMatrix& stiffness() const noexcept { return stiffness_; }

  Vector synthesize(const Vector& coeffs) const {
    Vector out(nodes_.size());
    for (Eigen::Index q = 0; q < nodes_.size(); ++q) {
      const int c = cell_[static_cast<std::size_t>(q)];
      const double xi = local_[q];
      out[q] = (1.0 - xi) * nodal(coeffs, c) + xi * nodal(coeffs, c + 1);
    }
    return out;
  }

  Vector load(const Vector& grid_values) const {
    Vector b = Vector::Zero(dim());
    for (Eigen::Index q = 0; q < nodes_.size(); ++q) {
      const int c = cell_[static_cast<std::size_t>(q)];
      const double wv = weights_[q] * grid_values[q];
      if (c >= 1) b[c - 1] += wv * (1.0 - local_[q]);
      if (c + 1 <= cells_ - 1) b[c] += wv * local_[q];
    }
    return b;
  }

  /// Tridiagonal matrix of integral(omega phi_i phi_j), omega given at the nodes.
  TridiagonalMatrix weighted_mass(const Vector& omega) const {
    std::vector<double> diag(dim_size(), 0.0), off(dim_size() - 1, 0.0);
    for (Eigen::Index q = 0; q < nodes_.size(); ++q) {
      const int c = cell_[static_cast<std::size_t>(q)];
      const double xi = local_[q];
      const double w = weights_[q] * omega[q];
      const double left = 1.0 - xi;
      if (c >= 1) diag[static_cast<std::size_t>(c - 1)] += w * left * left;
      if (c + 1 <= cells_ - 1) diag[static_cast<std::size_t>(c)] += w * xi * xi;
      if (c >= 1 && c + 1 <= cells_ - 1) off[static_cast<std::size_t>(c - 1)] += w * left * xi;
    }
    return TridiagonalMatrix::symmetric(std::move(diag), std::move(off));
  }

  Vector apply_mass(const Vector& c) const { return mass_.multiply(c); }
  Vector solve_mass(const Vector& b) const { return mass_.solve(b); }
  Vector apply_stiffness(const Vector& c) const { return stiffness_.multiply(c); }
  double l2_norm(const Vector& c) const { return std::sqrt(std::max(0.0, c.dot(mass_.multiply(c)))); }

  Vector evaluate(const Vector& coeffs, std::span<const double> points) const {
    Vector out(static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double x = points[i];
      detail::require_unit_interval(x);
      const double s = x / h_;
      const int c = std::min(static_cast<int>(s), cells_ - 1);
      const double xi = s - c;
      out[static_cast<Eigen::Index>(i)] = (1.0 - xi) * nodal(coeffs, c) + xi * nodal(coeffs, c + 1);
    }
    return out;
  }

  bool same_space(const FemMesh& o) const noexcept { return o.cells_ == cells_; }

 private:
  std::size_t dim_size() const noexcept { return static_cast<std::size_t>(cells_ - 1); }

  double nodal(const Vector& coeffs, int node) const {
    return (node <= 0 || node >= cells_) ? 0.0 : coeffs[node - 1];
  }

  int cells_;
  int sub_;
  double h_ = 0.0;
  Vector nodes_;
  Vector weights_;
  std::vector<int> cell_;
  Vector local_;
  TridiagonalMatrix mass_;
  TridiagonalMatrix stiffness_;
};

inline TridiagonalMatrix assemble_mass(const FemMesh& mesh) { return mesh.mass(); }
inline TridiagonalMatrix assemble_stiffness(const FemMesh& mesh) { return mesh.stiffness(); }

inline TridiagonalMatrix assemble_mass(int cells) { return FemMesh(cells, 1).mass(); }
inline TridiagonalMatrix assemble_stiffness(int cells) { return FemMesh(cells, 1).stiffness(); }

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

template <class B>
concept GalerkinBasis = requires(const B& b, const Vector& v, std::span<const double> pts) {
  { b.dim() } -> std::convertible_to<Eigen::Index>;
  { b.nodes() } -> std::convertible_to<const Vector&>;
  { b.weights() } -> std::convertible_to<const Vector&>;
  { b.synthesize(v) } -> std::convertible_to<Vector>;
  { b.load(v) } -> std::convertible_to<Vector>;
  { b.apply_mass(v) } -> std::convertible_to<Vector>;
  { b.solve_mass(v) } -> std::convertible_to<Vector>;
  { b.apply_stiffness(v) } -> std::convertible_to<Vector>;
  { b.l2_norm(v) } -> std::convertible_to<double>;
  { b.evaluate(v, pts) } -> std::convertible_to<Vector>;
  { b.same_space(b) } -> std::convertible_to<bool>;
};

/// Coefficient vector together with the basis it is expressed in.
template <GalerkinBasis B>
struct Field {
  std::shared_ptr<const B> basis;
  Vector coeffs;

  Field() = default;
  Field(std::shared_ptr<const B> b, Vector c) : basis(std::move(b)), coeffs(std::move(c)) {
    if (!basis) throw ArgumentError("Field: null basis");
    if (coeffs.size() != basis->dim()) {
      throw ArgumentError("Field: coefficient count " + std::to_string(coeffs.size()) +
                          " does not match basis dimension " + std::to_string(basis->dim()));
    }
  }

  static Field zero(std::shared_ptr<const B> b) {
    const auto n = b->dim();
    return Field(std::move(b), Vector::Zero(n));
  }

  Eigen::Index dim() const { return coeffs.size(); }
  bool finite() const { return coeffs.allFinite(); }
  double l2_norm() const { return basis->l2_norm(coeffs); }
  Vector on_grid() const { return basis->synthesize(coeffs); }
};

template <GalerkinBasis B>
Field<B> operator+(const Field<B>& a, const Field<B>& b) {
  return Field<B>(a.basis, a.coeffs + b.coeffs);
}

template <GalerkinBasis B>
Field<B> operator-(const Field<B>& a, const Field<B>& b) {
  return Field<B>(a.basis, a.coeffs - b.coeffs);
}

template <GalerkinBasis B>
Field<B> operator*(double s, const Field<B>& a) {
  return Field<B>(a.basis, s * a.coeffs);
}

using SpectralField = Field<SpectralBasis>;
using FemField = Field<FemMesh>;

/// Galerkin (L2-orthogonal) projection of grid values onto the basis.
template <GalerkinBasis B>
Field<B> project_grid(const Vector& grid_values, std::shared_ptr<const B> basis) {
  Vector c = basis->solve_mass(basis->load(grid_values));
  detail::require_finite(c, "project");
  return Field<B>(std::move(basis), std::move(c));
}

/// Galerkin projection of a pointwise-evaluable function.
template <GalerkinBasis B>
Field<B> project(const std::function<double(double)>& u, std::shared_ptr<const B> basis) {
  const Vector& x = basis->nodes();
  Vector values(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) values[j] = u(x[j]);
  detail::require_finite(values, "project: integrand");
  return project_grid<B>(values, std::move(basis));
}

template <GalerkinBasis B>
Vector evaluate(const Field<B>& field, std::span<const double> points) {
  return field.basis->evaluate(field.coeffs, points);
}

/// sqrt(sum_k lambda_k^theta c_k^2).
inline double sobolev_norm(const SpectralField& field, double theta) {
  const Vector& lam = field.basis->eigenvalues();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < field.dim(); ++k) {
    acc += std::pow(lam[k], theta) * field.coeffs[k] * field.coeffs[k];
  }
  if (!std::isfinite(acc)) throw NumericError("sobolev_norm: non-finite");
  return std::sqrt(acc);
}

/// Norm of the discrete gradient, sqrt(c^T K c); equals the H^1 seminorm.
template <GalerkinBasis B>
double h1_seminorm(const Field<B>& field) {
  return std::sqrt(std::max(0.0, field.coeffs.dot(field.basis->apply_stiffness(field.coeffs))));
}

/// Moves a field into another basis.
///
/// Spectral to spectral zero-pads or truncates; every other pair goes through
/// point evaluation on the target grid followed by Galerkin projection.
template <GalerkinBasis To, GalerkinBasis From>
Field<To> transfer(const Field<From>& field, std::shared_ptr<const To> target) {
  if constexpr (std::is_same_v<To, From>) {
    if (target->same_space(*field.basis)) return Field<To>(std::move(target), field.coeffs);
  }
  if constexpr (std::is_same_v<To, SpectralBasis> && std::is_same_v<From, SpectralBasis>) {
    Vector c = Vector::Zero(target->dim());
    const auto n = std::min(c.size(), field.coeffs.size());
    c.head(n) = field.coeffs.head(n);
    return Field<To>(std::move(target), std::move(c));
  } else {
    const Vector& x = target->nodes();
    Vector values = field.basis->evaluate(field.coeffs, std::span<const double>(x.data(), x.size()));
    return project_grid<To>(values, std::move(target));
  }
}

/// L2 distance between two fields, measured in the basis of `reference`.
template <GalerkinBasis R, GalerkinBasis B>
double l2_distance(const Field<B>& field, const Field<R>& reference) {
  if constexpr (std::is_same_v<R, SpectralBasis> && std::is_same_v<B, SpectralBasis>) {
    // Zero-padding is exact, so skip the copy.
    const auto n = std::min(field.dim(), reference.dim());
    double acc = (field.coeffs.head(n) - reference.coeffs.head(n)).squaredNorm();
    if (reference.dim() > n) acc += reference.coeffs.tail(reference.dim() - n).squaredNorm();
    if (field.dim() > n) acc += field.coeffs.tail(field.dim() - n).squaredNorm();
    return std::sqrt(acc);
  } else {
    const Field<R> moved = transfer<R>(field, reference.basis);
    return (moved - reference).l2_norm();
  }
}

}  // namespace spde
