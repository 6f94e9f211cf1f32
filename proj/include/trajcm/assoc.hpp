#pragma once

#include <cstdint>
#include <memory_resource>
#include <span>
#include <vector>

#include "trajcm/common.hpp"
#include "trajcm/trajectory.hpp"

namespace trajcm {

struct FlowMap;

struct KnnConfig {
  int k = 32;
  /// Queries processed per tile; scratch memory is tile_size x point count.
  int tile_size = 64;
};

/// k nearest points per query, nearest first, ties broken by lower index.
struct KnnResult {
  std::size_t n_queries = 0;
  int k = 0;
  std::vector<std::int32_t> indices;
  std::vector<double> distances;

  std::span<const std::int32_t> neighbors(std::size_t q) const {
    return std::span<const std::int32_t>(indices).subspan(q * k, k);
  }
};

/// Exact KNN in 2D, streamed over query tiles so that no more than
/// tile_size x points.size() candidate distances exist at any time. Scratch
/// buffers come from `scratch`. Throws std::invalid_argument when k is not in
/// [1, points.size()] or tile_size < 1.
KnnResult knn_per_bin(std::span<const Vec2> queries, std::span<const Vec2> points, int k,
                      int tile_size = 64,
                      std::pmr::memory_resource* scratch = std::pmr::get_default_resource());

/// [n_bins x cells] table of mean trajectory displacements toward t_ref.
struct DisplacementVolume {
  int n_bins = 0;
  int k = 0;
  GridGeometry cells;
  double t_ref = 0.0;
  std::vector<double> bin_centers;
  std::vector<Vec2> disp;                   // [bin][cell]
  std::vector<std::int32_t> knn_indices;    // [bin][cell][k]

  std::size_t cell_count() const { return cells.cell_count(); }
  std::size_t voxel(int bin, std::size_t cell) const {
    return static_cast<std::size_t>(bin) * cell_count() + cell;
  }
  std::span<const std::int32_t> neighbors(std::size_t voxel_index) const {
    return std::span<const std::int32_t>(knn_indices).subspan(voxel_index * k, k);
  }
  /// Zero-displacement volume with no neighbor sets (identity warp).
  static DisplacementVolume zero(int width, int height, int n_bins, int stride, double t_ref);
};

/// Builds the volume for one reference time: at each bin center, KNN between
/// cell centers and the trajectory positions at that time, then the mean of
/// q_n(t_ref) - q_n(bin_center) over the neighbors. `volume_stride` of 0 uses
/// the field's stride. The neighbor count is capped at the anchor count.
DisplacementVolume build_displacement_volume(const TrajectoryField& field, double t_ref,
                                             const KnnConfig& cfg, int n_bins,
                                             int volume_stride = 0);

/// Mean motion of the stored neighbor sets between consecutive bin centers.
struct DeltaField {
  int n_pairs = 0;
  GridGeometry cells;
  std::vector<Vec2> delta;  // [pair][cell]
};

/// Empty (n_pairs = 0) when the volume has fewer than two bins.
DeltaField build_consecutive_delta_field(const TrajectoryField& field,
                                         const DisplacementVolume& volume);

/// Adds d(loss)/d(coeffs) given d(loss)/d(disp) for every voxel.
void displacement_volume_backward(const TrajectoryField& field, const DisplacementVolume& volume,
                                  std::span<const Vec2> grad_disp, std::span<Vec2> grad_coeffs);

/// Adds d(loss)/d(coeffs) given d(loss)/d(delta) for every delta entry.
void delta_field_backward(const TrajectoryField& field, const DisplacementVolume& volume,
                          std::span<const Vec2> grad_delta, std::span<Vec2> grad_coeffs);

/// Dense per-pixel displacement from time 0 to t: mean of Delta q_n(t) over
/// the k trajectories whose start points are nearest the pixel (k capped at
/// the anchor count).
FlowMap predict_flow_map(const TrajectoryField& field, double t, int k);

}  // namespace trajcm
