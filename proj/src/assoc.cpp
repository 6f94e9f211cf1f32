#include "trajcm/assoc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "trajcm/flow.hpp"
#include "trajcm/parallel.hpp"

namespace trajcm {
namespace {

struct Candidate {
  double d2;
  std::int32_t index;
};

bool closer(const Candidate& a, const Candidate& b) {
  return a.d2 < b.d2 || (a.d2 == b.d2 && a.index < b.index);
}

void check_knn_args(std::size_t n_points, int k, int tile_size) {
  if (k < 1 || static_cast<std::size_t>(k) > n_points) {
    throw std::invalid_argument("knn: k=" + std::to_string(k) + " must be in [1, " +
                                std::to_string(n_points) + "]");
  }
  if (tile_size < 1) throw std::invalid_argument("knn: tile_size must be >= 1");
}

// Neighbors of queries [q_begin, q_end), written to rows q_begin.. of the
// output arrays. `buffer` holds at least (q_end - q_begin) * points.size()
// candidates.
void knn_tile(std::span<const Vec2> queries, std::span<const Vec2> points, int k,
              std::size_t q_begin, std::size_t q_end, std::span<Candidate> buffer,
              std::int32_t* out_indices, double* out_distances) {
  const std::size_t n = points.size();
  for (std::size_t q = q_begin; q < q_end; ++q) {
    Candidate* row = buffer.data() + (q - q_begin) * n;
    const Vec2 c = queries[q];
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = points[i].x - c.x;
      const double dy = points[i].y - c.y;
      row[i] = {dx * dx + dy * dy, static_cast<std::int32_t>(i)};
    }
  }
  for (std::size_t q = q_begin; q < q_end; ++q) {
    Candidate* row = buffer.data() + (q - q_begin) * n;
    std::partial_sort(row, row + k, row + n, closer);
    for (int j = 0; j < k; ++j) {
      out_indices[q * k + j] = row[j].index;
      if (out_distances) out_distances[q * k + j] = std::sqrt(row[j].d2);
    }
  }
}

void check_time(double t, const char* what) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::invalid_argument(std::string(what) + " " + std::to_string(t) + " outside [0, 1]");
  }
}

std::vector<double> weights_at(const TrajectoryField& field, double t) {
  std::vector<double> w(field.coefficients_per_anchor());
  coefficient_weights(field.basis(), t, w);
  return w;
}

}  // namespace

KnnResult knn_per_bin(std::span<const Vec2> queries, std::span<const Vec2> points, int k,
                      int tile_size, std::pmr::memory_resource* scratch) {
  check_knn_args(points.size(), k, tile_size);
  KnnResult result{queries.size(), k, {}, {}};
  result.indices.resize(queries.size() * k);
  result.distances.resize(queries.size() * k);

  const std::size_t tile = std::min<std::size_t>(static_cast<std::size_t>(tile_size), queries.size());
  std::pmr::vector<Candidate> buffer(tile * points.size(), scratch);
  for (std::size_t q = 0; q < queries.size(); q += tile) {
    knn_tile(queries, points, k, q, std::min(q + tile, queries.size()), buffer,
             result.indices.data(), result.distances.data());
  }
  return result;
}

DisplacementVolume DisplacementVolume::zero(int width, int height, int n_bins, int stride, double t_ref) {
  DisplacementVolume v;
  v.n_bins = n_bins;
  v.cells = {width, height, stride};
  v.t_ref = t_ref;
  for (int b = 0; b < n_bins; ++b) v.bin_centers.push_back((b + 0.5) / n_bins);
  v.disp.assign(static_cast<std::size_t>(n_bins) * v.cell_count(), Vec2{});
  return v;
}

DisplacementVolume build_displacement_volume(const TrajectoryField& field, double t_ref,
                                             const KnnConfig& cfg, int n_bins, int volume_stride) {
  check_time(t_ref, "t_ref");
  if (n_bins < 1) throw std::invalid_argument("build_displacement_volume: n_bins must be >= 1");
  // Small images may have fewer anchors than the configured neighbor count.
  const int k = std::min<int>(cfg.k, static_cast<int>(field.anchor_count()));
  check_knn_args(field.anchor_count(), k, cfg.tile_size);

  const int stride = volume_stride > 0 ? volume_stride : field.stride();
  DisplacementVolume vol = DisplacementVolume::zero(field.width(), field.height(), n_bins, stride, t_ref);
  vol.k = k;
  const std::size_t n_cells = vol.cell_count();
  const std::size_t n_anchors = field.anchor_count();
  vol.knn_indices.resize(static_cast<std::size_t>(n_bins) * n_cells * k);

  std::vector<Vec2> cell_centers(n_cells);
  for (std::size_t c = 0; c < n_cells; ++c) cell_centers[c] = vol.cells.center(c);

  // Per-bin trajectory positions and displacement toward t_ref.
  const auto w_ref = weights_at(field, t_ref);
  std::vector<Vec2> positions(n_bins * n_anchors);
  std::vector<Vec2> toward_ref(n_bins * n_anchors);
  for (int b = 0; b < n_bins; ++b) {
    const auto w_bin = weights_at(field, vol.bin_centers[b]);
    for (std::size_t n = 0; n < n_anchors; ++n) {
      const Vec2 d_bin = field.displacement(n, w_bin);
      positions[b * n_anchors + n] = field.anchor(n) + d_bin;
      toward_ref[b * n_anchors + n] = field.displacement(n, w_ref) - d_bin;
    }
  }

  const std::size_t tile = std::min<std::size_t>(static_cast<std::size_t>(cfg.tile_size), n_cells);
  const std::size_t tiles_per_bin = (n_cells + tile - 1) / tile;
  parallel_for(static_cast<std::size_t>(n_bins) * tiles_per_bin, [&](std::size_t task) {
    const std::size_t b = task / tiles_per_bin;
    const std::size_t q_begin = (task % tiles_per_bin) * tile;
    const std::size_t q_end = std::min(q_begin + tile, n_cells);
    std::vector<Candidate> buffer((q_end - q_begin) * n_anchors);
    std::span<const Vec2> pos(positions.data() + b * n_anchors, n_anchors);
    std::int32_t* bin_indices = vol.knn_indices.data() + b * n_cells * k;
    knn_tile(cell_centers, pos, k, q_begin, q_end, buffer, bin_indices, nullptr);

    for (std::size_t c = q_begin; c < q_end; ++c) {
      Vec2 sum;
      for (int j = 0; j < k; ++j) sum += toward_ref[b * n_anchors + bin_indices[c * k + j]];
      vol.disp[b * n_cells + c] = sum * (1.0 / k);
    }
  });
  return vol;
}

DeltaField build_consecutive_delta_field(const TrajectoryField& field,
                                         const DisplacementVolume& volume) {
  DeltaField out{std::max(0, volume.n_bins - 1), volume.cells, {}};
  if (out.n_pairs == 0) return out;
  if (volume.k < 1) throw std::invalid_argument("delta field: volume has no neighbor sets");

  const std::size_t n_cells = volume.cell_count();
  const std::size_t n_anchors = field.anchor_count();
  out.delta.resize(out.n_pairs * n_cells);
  std::vector<Vec2> current(n_anchors);
  std::vector<Vec2> next(n_anchors);
  auto displacements = [&](int b, std::vector<Vec2>& dst) {
    const auto w = weights_at(field, volume.bin_centers[b]);
    for (std::size_t n = 0; n < n_anchors; ++n) dst[n] = field.displacement(n, w);
  };
  displacements(0, next);
  for (int b = 0; b < out.n_pairs; ++b) {
    std::swap(current, next);
    displacements(b + 1, next);
    for (std::size_t c = 0; c < n_cells; ++c) {
      Vec2 sum;
      for (std::int32_t n : volume.neighbors(volume.voxel(b, c))) sum += next[n] - current[n];
      out.delta[b * n_cells + c] = sum * (1.0 / volume.k);
    }
  }
  return out;
}

void displacement_volume_backward(const TrajectoryField& field, const DisplacementVolume& volume,
                                  std::span<const Vec2> grad_disp, std::span<Vec2> grad_coeffs) {
  const std::size_t n_coef = field.coefficients_per_anchor();
  const std::size_t n_cells = volume.cell_count();
  if (volume.k < 1) return;
  const auto w_ref = weights_at(field, volume.t_ref);
  std::vector<double> dw(n_coef);
  for (int b = 0; b < volume.n_bins; ++b) {
    const auto w_bin = weights_at(field, volume.bin_centers[b]);
    for (std::size_t j = 0; j < n_coef; ++j) dw[j] = (w_ref[j] - w_bin[j]) / volume.k;
    for (std::size_t c = 0; c < n_cells; ++c) {
      const Vec2 g = grad_disp[b * n_cells + c];
      if (g.x == 0.0 && g.y == 0.0) continue;
      for (std::int32_t n : volume.neighbors(volume.voxel(b, c))) {
        Vec2* gc = grad_coeffs.data() + n * n_coef;
        for (std::size_t j = 0; j < n_coef; ++j) gc[j] += g * dw[j];
      }
    }
  }
}

void delta_field_backward(const TrajectoryField& field, const DisplacementVolume& volume,
                          std::span<const Vec2> grad_delta, std::span<Vec2> grad_coeffs) {
  const std::size_t n_coef = field.coefficients_per_anchor();
  const std::size_t n_cells = volume.cell_count();
  std::vector<double> dw(n_coef);
  for (int b = 0; b + 1 < volume.n_bins; ++b) {
    const auto w0 = weights_at(field, volume.bin_centers[b]);
    const auto w1 = weights_at(field, volume.bin_centers[b + 1]);
    for (std::size_t j = 0; j < n_coef; ++j) dw[j] = (w1[j] - w0[j]) / volume.k;
    for (std::size_t c = 0; c < n_cells; ++c) {
      const Vec2 g = grad_delta[b * n_cells + c];
      if (g.x == 0.0 && g.y == 0.0) continue;
      for (std::int32_t n : volume.neighbors(volume.voxel(b, c))) {
        Vec2* gc = grad_coeffs.data() + n * n_coef;
        for (std::size_t j = 0; j < n_coef; ++j) gc[j] += g * dw[j];
      }
    }
  }
}

FlowMap predict_flow_map(const TrajectoryField& field, double t, int k) {
  if (k > 0) k = std::min<int>(k, static_cast<int>(field.anchor_count()));
  check_time(t, "flow time");
  check_knn_args(field.anchor_count(), k, 1);
  const std::size_t n_anchors = field.anchor_count();
  std::vector<Vec2> starts(n_anchors);
  std::vector<Vec2> moved(n_anchors);
  const auto w = weights_at(field, t);
  for (std::size_t n = 0; n < n_anchors; ++n) {
    starts[n] = field.anchor(n);
    moved[n] = field.displacement(n, w);
  }

  FlowMap map(field.width(), field.height(), t);
  std::vector<Vec2> pixels(map.flow.size());
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) pixels[static_cast<std::size_t>(y) * map.width + x] = {double(x), double(y)};
  }

  constexpr std::size_t kRows = 64;
  const std::size_t n_tiles = (pixels.size() + kRows - 1) / kRows;
  std::vector<std::int32_t> indices(pixels.size() * k);
  parallel_for(n_tiles, [&](std::size_t tile) {
    const std::size_t q_begin = tile * kRows;
    const std::size_t q_end = std::min(q_begin + kRows, pixels.size());
    std::vector<Candidate> buffer((q_end - q_begin) * n_anchors);
    knn_tile(pixels, starts, k, q_begin, q_end, buffer, indices.data(), nullptr);
    for (std::size_t q = q_begin; q < q_end; ++q) {
      Vec2 sum;
      for (int j = 0; j < k; ++j) sum += moved[indices[q * k + j]];
      map.flow[q] = sum * (1.0 / k);
    }
  });
  return map;
}

}  // namespace trajcm
