#pragma once

// Truncated Q-Wiener process W(t) = sum_k sqrt(lambda^Q_k) e_k beta_k(t) with
// coupled multi-resolution Brownian increments.
//
// Increments are drawn once at the finest time level from a counter-based
// stream keyed by (seed, sample id, finest step, mode) and summed pairwise
// upwards, so every coarser level is an exact aggregate of the finer ones.

#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spde/basis.hpp"
#include "spde/errors.hpp"
#include "spde/philox.hpp"

namespace spde {

/// Diagonal covariance in the sine eigenbasis, truncated to K modes.
class QWienerSpec {
 public:
  /// Decay exponents at or below this fail the trace condition sum lambda_k ||e_k||^2_{W^{1,inf}} < inf.
  static constexpr double kMinDecay = 3.0;

  QWienerSpec() = default;

  explicit QWienerSpec(std::vector<double> eigenvalues) : eigs_(std::move(eigenvalues)) {
    if (eigs_.empty()) throw ArgumentError("QWienerSpec: truncation level K must be positive");
    for (std::size_t k = 0; k < eigs_.size(); ++k) {
      if (!(eigs_[k] >= 0.0) || !std::isfinite(eigs_[k])) {
        throw ArgumentError("QWienerSpec: eigenvalues must be finite and nonnegative");
      }
      if (k > 0 && eigs_[k] > eigs_[k - 1]) {
        throw ArgumentError("QWienerSpec: eigenvalues must be nonincreasing");
      }
    }
  }

  /// lambda^Q_k = k^-decay for k = 1..K.
  static QWienerSpec power_law(int modes, double decay = 4.0) {
    if (modes < 1) throw ArgumentError("QWienerSpec: truncation level K must be positive");
    if (!(decay > kMinDecay)) {
      throw ArgumentError("QWienerSpec: decay exponent must exceed 3 for trace-class noise into H^1");
    }
    std::vector<double> e(static_cast<std::size_t>(modes));
    for (int k = 0; k < modes; ++k) e[static_cast<std::size_t>(k)] = std::pow(k + 1.0, -decay);
    QWienerSpec s(std::move(e));
    s.decay_ = decay;
    return s;
  }

  int modes() const noexcept { return static_cast<int>(eigs_.size()); }
  const std::vector<double>& eigenvalues() const noexcept { return eigs_; }
  /// Power-law exponent when built by power_law, 0 otherwise.
  double decay() const noexcept { return decay_; }

  double trace() const {
    double t = 0.0;
    for (double v : eigs_) t += v;
    return t;
  }

  /// The same covariance restricted to the first `modes` modes.
  QWienerSpec truncated(int modes) const {
    if (modes < 1 || modes > this->modes()) throw ArgumentError("QWienerSpec::truncated: bad K");
    QWienerSpec s(std::vector<double>(eigs_.begin(), eigs_.begin() + modes));
    s.decay_ = decay_;
    return s;
  }

 private:
  std::vector<double> eigs_;
  double decay_ = 0.0;
};

/// Brownian increments of all K modes on a dyadic hierarchy of time grids.
///
/// Level 0 is the coarsest; level l+1 has twice as many steps as level l and
/// increment (l, m) is the sum of increments (l+1, 2m) and (l+1, 2m+1).
class NoiseTree {
 public:
  struct Level {
    std::size_t steps = 0;
    double tau = 0.0;
    std::vector<double> increments;  // steps x K, row-major
  };

  NoiseTree() = default;
  NoiseTree(std::uint64_t seed, std::uint64_t sample_id, int modes, std::vector<Level> levels)
      : seed_(seed), sample_id_(sample_id), modes_(modes), levels_(std::move(levels)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t sample_id() const noexcept { return sample_id_; }
  int modes() const noexcept { return modes_; }
  int levels() const noexcept { return static_cast<int>(levels_.size()); }
  int finest_level() const noexcept { return levels() - 1; }
  const Level& level(int l) const {
    check_level(l);
    return levels_[static_cast<std::size_t>(l)];
  }
  std::size_t steps(int l) const { return level(l).steps; }
  double tau(int l) const { return level(l).tau; }
  double horizon() const { return levels_.empty() ? 0.0 : levels_.back().tau * levels_.back().steps; }

  /// Level whose grid has exactly `steps` steps; throws if absent.
  int level_for_steps(std::size_t steps) const {
    for (int l = 0; l < levels(); ++l) {
      if (levels_[static_cast<std::size_t>(l)].steps == steps) return l;
    }
    throw ArgumentError("NoiseTree: no level with " + std::to_string(steps) + " steps");
  }

  /// (Delta beta_1, ..., Delta beta_K) over step m of level l.
  std::span<const double> increment(int l, std::size_t m) const {
    const Level& lv = level(l);
    if (m >= lv.steps) {
      throw ArgumentError("NoiseTree: step " + std::to_string(m) + " out of range at level " +
                          std::to_string(l));
    }
    return {lv.increments.data() + m * static_cast<std::size_t>(modes_),
            static_cast<std::size_t>(modes_)};
  }

  friend bool operator==(const NoiseTree& a, const NoiseTree& b) {
    if (a.seed_ != b.seed_ || a.sample_id_ != b.sample_id_ || a.modes_ != b.modes_ ||
        a.levels_.size() != b.levels_.size()) {
      return false;
    }
    for (std::size_t l = 0; l < a.levels_.size(); ++l) {
      const auto& x = a.levels_[l];
      const auto& y = b.levels_[l];
      if (x.steps != y.steps || x.tau != y.tau || x.increments != y.increments) return false;
    }
    return true;
  }

 private:
  void check_level(int l) const {
    if (l < 0 || l >= levels()) throw ArgumentError("NoiseTree: level " + std::to_string(l) + " out of range");
  }

  std::uint64_t seed_ = 0;
  std::uint64_t sample_id_ = 0;
  int modes_ = 0;
  std::vector<Level> levels_;
};

/// Samples a tree whose finest level has `finest_steps` steps over [0, horizon].
inline NoiseTree sample_tree(const QWienerSpec& spec, std::size_t finest_steps, int levels,
                             double horizon, std::uint64_t seed, std::uint64_t sample_id) {
  const int modes = spec.modes();
  if (modes < 1) throw ArgumentError("sample_tree: K must be positive");
  if (levels < 1) throw ArgumentError("sample_tree: need at least one level");
  if (!(horizon > 0.0)) throw ArgumentError("sample_tree: horizon must be positive");
  if (levels > 63 || finest_steps == 0 || finest_steps % (std::size_t{1} << (levels - 1)) != 0) {
    throw ArgumentError("sample_tree: finest step count " + std::to_string(finest_steps) +
                        " is not a power-of-two refinement over " + std::to_string(levels) + " levels");
  }
  if (finest_steps > 0xFFFFFFFFu) throw ArgumentError("sample_tree: too many steps");

  std::vector<NoiseTree::Level> out(static_cast<std::size_t>(levels));
  auto& fine = out.back();
  fine.steps = finest_steps;
  fine.tau = horizon / static_cast<double>(finest_steps);
  fine.increments.resize(finest_steps * static_cast<std::size_t>(modes));
  const double scale = std::sqrt(fine.tau);
  for (std::size_t m = 0; m < finest_steps; ++m) {
    for (int k = 0; k < modes; ++k) {
      fine.increments[m * modes + k] =
          scale * rng::standard_normal(seed, sample_id, static_cast<std::uint32_t>(m),
                                       static_cast<std::uint32_t>(k));
    }
  }
  for (int l = levels - 2; l >= 0; --l) {
    const auto& child = out[static_cast<std::size_t>(l + 1)];
    auto& lv = out[static_cast<std::size_t>(l)];
    lv.steps = child.steps / 2;
    lv.tau = 2.0 * child.tau;
    lv.increments.resize(lv.steps * static_cast<std::size_t>(modes));
    for (std::size_t m = 0; m < lv.steps; ++m) {
      for (int k = 0; k < modes; ++k) {
        lv.increments[m * modes + k] =
            child.increments[(2 * m) * modes + k] + child.increments[(2 * m + 1) * modes + k];
      }
    }
  }
  return NoiseTree(seed, sample_id, modes, std::move(out));
}

/// Pointwise synthesis of Delta W on a fixed set of nodes.
class GridNoise {
 public:
  GridNoise(const QWienerSpec& spec, const Vector& nodes) : modes_(spec.modes()) {
    const auto& lam = spec.eigenvalues();
    table_.resize(nodes.size(), modes_);
    covariance_ = Vector::Zero(nodes.size());
    std::vector<double> row(static_cast<std::size_t>(modes_));
    for (Eigen::Index j = 0; j < nodes.size(); ++j) {
      detail::sine_row(nodes[j], row);
      for (int k = 0; k < modes_; ++k) {
        const double e = row[static_cast<std::size_t>(k)];
        table_(j, k) = std::sqrt(lam[static_cast<std::size_t>(k)]) * e;
        covariance_[j] += lam[static_cast<std::size_t>(k)] * e * e;
      }
    }
  }

  int modes() const noexcept { return modes_; }

  /// Delta W(x_j) = sum_{k<=K} sqrt(lambda_k) e_k(x_j) Delta beta_k.
  Vector increment(std::span<const double> dbeta) const {
    if (dbeta.size() < static_cast<std::size_t>(modes_)) {
      throw ArgumentError("GridNoise: tree carries fewer modes than the noise spec");
    }
    Eigen::Map<const Vector> b(dbeta.data(), modes_);
    return table_ * b;
  }

  /// q(x_j) = sum_k lambda_k e_k(x_j)^2, the pointwise variance rate.
  const Vector& covariance() const noexcept { return covariance_; }

 private:
  int modes_;
  Matrix table_;
  Vector covariance_;
};

/// Pointwise data for the commutative Milstein term.
///
/// With symmetric kernel the iterated integrals enter only through
/// I_kl + I_lk = Delta beta_k Delta beta_l - delta_kl tau, whose pointwise
/// contraction is dw(x)^2 - tau q(x).
struct MilsteinBracket {
  Vector dw;
  Vector q;
  double tau = 0.0;

  Vector iterated_integral() const { return 0.5 * (dw.array().square() - tau * q.array()).matrix(); }
};

inline MilsteinBracket milstein_bracket(const GridNoise& grid, const NoiseTree& tree, int level,
                                        std::size_t m) {
  return {grid.increment(tree.increment(level, m)), grid.covariance(), tree.tau(level)};
}

inline MilsteinBracket milstein_bracket(const NoiseTree& tree, int level, std::size_t m,
                                        const QWienerSpec& spec, const Vector& nodes) {
  return milstein_bracket(GridNoise(spec, nodes), tree, level, m);
}

/// Delta W over step m of `level`, projected into `basis`.
template <GalerkinBasis B>
Field<B> increment_field(const NoiseTree& tree, int level, std::size_t m, const QWienerSpec& spec,
                         std::shared_ptr<const B> basis) {
  const GridNoise grid(spec, basis->nodes());
  return project_grid<B>(grid.increment(tree.increment(level, m)), std::move(basis));
}

// ---------------------------------------------------------------------------
// Binary dump
//
// Little-endian, 8 bytes per entry:
//   u64 seed, u64 sample_id, u64 K, u64 levels, u64 coarsest_steps,
//   f64 finest_tau, then f64 increments in (level, m, k) order, level 0 first.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw ArgumentError("read_tree: truncated input");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

}  // namespace detail

inline void write_tree(std::ostream& os, const NoiseTree& tree) {
  detail::put_u64(os, tree.seed());
  detail::put_u64(os, tree.sample_id());
  detail::put_u64(os, static_cast<std::uint64_t>(tree.modes()));
  detail::put_u64(os, static_cast<std::uint64_t>(tree.levels()));
  detail::put_u64(os, tree.levels() > 0 ? tree.steps(0) : 0);
  detail::put_u64(os, std::bit_cast<std::uint64_t>(tree.levels() > 0 ? tree.tau(tree.finest_level()) : 0.0));
  for (int l = 0; l < tree.levels(); ++l) {
    for (double v : tree.level(l).increments) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
}

inline NoiseTree read_tree(std::istream& is) {
  const std::uint64_t seed = detail::get_u64(is);
  const std::uint64_t sample = detail::get_u64(is);
  const std::uint64_t modes = detail::get_u64(is);
  const std::uint64_t levels = detail::get_u64(is);
  const std::uint64_t coarse = detail::get_u64(is);
  const double fine_tau = std::bit_cast<double>(detail::get_u64(is));
  if (modes == 0 || modes > (1u << 20) || levels == 0 || levels > 40 || coarse == 0) {
    throw ArgumentError("read_tree: malformed header");
  }
  std::vector<NoiseTree::Level> out(levels);
  for (std::uint64_t l = 0; l < levels; ++l) {
    auto& lv = out[l];
    lv.steps = coarse << l;
    lv.tau = fine_tau * static_cast<double>(std::uint64_t{1} << (levels - 1 - l));
    lv.increments.resize(lv.steps * modes);
    for (auto& v : lv.increments) v = std::bit_cast<double>(detail::get_u64(is));
  }
  return NoiseTree(seed, sample, static_cast<int>(modes), std::move(out));
}

}  // namespace spde
