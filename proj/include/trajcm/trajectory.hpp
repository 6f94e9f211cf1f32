#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "trajcm/common.hpp"

namespace trajcm {

enum class BasisKind : std::uint8_t { Polynomial = 0, Bezier = 1 };

/// Temporal basis shared by all trajectories.
///
/// Polynomial: g_j(t) = t^j for j = 1..degree.
/// Bezier: Bernstein polynomials of the given degree, j = 0..degree. The
/// j = 0 control point is pinned to the anchor, so only j = 1..degree carry
/// coefficients.
struct Basis {
  BasisKind kind = BasisKind::Bezier;
  int degree = 10;

  /// Number of 2-vector coefficients stored per anchor.
  std::size_t coefficient_count() const { return static_cast<std::size_t>(degree); }

  friend bool operator==(const Basis&, const Basis&) = default;
};

/// Raw basis values g_j(t). Throws std::invalid_argument for t outside [0, 1]
/// or degree < 1.
std::vector<double> eval_basis(const Basis& basis, double t);

/// Weights multiplying the stored coefficients at time t, so that the
/// displacement is sum_j out[j] * coeff[j]. Every weight vanishes at t = 0.
void coefficient_weights(const Basis& basis, double t, std::span<double> out);

/// Coarse grid of anchors, one trajectory per stride x stride cell, stored in
/// displacement form: q_n(t) = anchor_n + sum_j w_j(t) * coeff_{n,j}.
class TrajectoryField {
 public:
  TrajectoryField() = default;

  /// Identity field (all coefficients zero).
  TrajectoryField(int width, int height, Basis basis, int stride = 4);

  const Basis& basis() const { return basis_; }
  const GridGeometry& grid() const { return grid_; }
  int width() const { return grid_.width; }
  int height() const { return grid_.height; }
  int stride() const { return grid_.stride; }
  std::size_t anchor_count() const { return grid_.cell_count(); }
  std::size_t coefficients_per_anchor() const { return basis_.coefficient_count(); }

  Vec2 anchor(std::size_t n) const { return grid_.center(n); }

  /// Coefficients in anchor-major order: coeffs()[n * coefficients_per_anchor() + j].
  std::span<const Vec2> coeffs() const { return coeffs_; }
  std::span<Vec2> coeffs() { return coeffs_; }
  Vec2& coeff(std::size_t n, std::size_t j) { return coeffs_[n * coefficients_per_anchor() + j]; }
  const Vec2& coeff(std::size_t n, std::size_t j) const {
    return coeffs_[n * coefficients_per_anchor() + j];
  }

  /// Flat scalar view used by the optimizer: x and y of each coefficient.
  std::span<double> scalars() { return {&coeffs_.data()->x, coeffs_.size() * 2}; }
  std::span<const double> scalars() const { return {&coeffs_.data()->x, coeffs_.size() * 2}; }

  /// Displacement from the anchor for precomputed coefficient weights.
  Vec2 displacement(std::size_t n, std::span<const double> weights) const;

 private:
  Basis basis_;
  GridGeometry grid_;
  std::vector<Vec2> coeffs_;
};

static_assert(sizeof(Vec2) == 2 * sizeof(double));

/// q_n(t): anchor position plus displacement. Throws std::invalid_argument
/// for a bad anchor index or t outside [0, 1].
Vec2 eval_trajectory(const TrajectoryField& field, std::size_t anchor, double t);

/// Positions of all anchors at several times, laid out [time][anchor].
struct TrajectoryBatch {
  std::size_t n_times = 0;
  std::size_t n_anchors = 0;
  std::vector<Vec2> positions;

  const Vec2& at(std::size_t time, std::size_t anchor) const {
    return positions[time * n_anchors + anchor];
  }
  std::span<const Vec2> at_time(std::size_t time) const {
    return std::span<const Vec2>(positions).subspan(time * n_anchors, n_anchors);
  }
};

TrajectoryBatch eval_trajectory_batch(const TrajectoryField& field, std::span<const double> times);

/// TRJ1 trajectory file. Coefficients are stored as f32.
void save_trajectory_field(const TrajectoryField& field, const std::filesystem::path& path);
TrajectoryField load_trajectory_field(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_trj1(const TrajectoryField& field);
TrajectoryField decode_trj1(std::span<const std::uint8_t> bytes);

}  // namespace trajcm
