#include "trajcm/warp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "trajcm/parallel.hpp"

namespace trajcm {
namespace {

constexpr std::size_t kChunk = 16384;

// Lower neighbor index and blend weight toward the upper one along a row of
// cell centers, clamped at both ends.
std::pair<int, double> blend_axis(const GridGeometry& g, double coord, int n_cells, int extent) {
  if (n_cells == 1) return {0, 0.0};
  int lo = std::clamp(static_cast<int>(std::floor((coord - g.center_coord(0, extent)) / g.stride)), 0,
                      n_cells - 2);
  const double c0 = g.center_coord(lo, extent);
  const double c1 = g.center_coord(lo + 1, extent);
  return {lo, std::clamp((coord - c0) / (c1 - c0), 0.0, 1.0)};
}

}  // namespace

VoxelTaps lookup_taps(const DisplacementVolume& volume, int px, int py, double tau, VolumeLookup lookup) {
  VoxelTaps taps;
  const int n_bins = volume.n_bins;
  if (lookup == VolumeLookup::Nearest) {
    const int bin = std::clamp(static_cast<int>(std::floor(tau * n_bins)), 0, n_bins - 1);
    taps.voxel[0] = static_cast<std::uint32_t>(volume.voxel(bin, volume.cells.cell_of_pixel(px, py)));
    taps.weight[0] = 1.0;
    taps.count = 1;
    return taps;
  }

  const GridGeometry& g = volume.cells;
  const auto [cx, wx] = blend_axis(g, px, g.cells_x(), g.width);
  const auto [cy, wy] = blend_axis(g, py, g.cells_y(), g.height);
  int b0 = 0;
  double wb = 0.0;
  const double f = tau * n_bins - 0.5;
  if (n_bins > 1) {
    b0 = std::clamp(static_cast<int>(std::floor(f)), 0, n_bins - 2);
    wb = std::clamp(f - b0, 0.0, 1.0);
  }
  for (int db = 0; db < 2; ++db) {
    const double tb = db ? wb : 1.0 - wb;
    for (int dy = 0; dy < 2; ++dy) {
      const double ty = dy ? wy : 1.0 - wy;
      for (int dx = 0; dx < 2; ++dx) {
        const double w = tb * ty * (dx ? wx : 1.0 - wx);
        if (w == 0.0) continue;
        const int b = std::min(b0 + db, n_bins - 1);
        const std::size_t cell = static_cast<std::size_t>(std::min(cy + dy, g.cells_y() - 1)) * g.cells_x() +
                                 std::min(cx + dx, g.cells_x() - 1);
        taps.voxel[taps.count] = static_cast<std::uint32_t>(volume.voxel(b, cell));
        taps.weight[taps.count] = w;
        ++taps.count;
      }
    }
  }
  return taps;
}

WarpedEvents warp_events(const EventSlice& slice, const DisplacementVolume& volume,
                         bool time_weighting, VolumeLookup lookup) {
  if (volume.cells.width != slice.width() || volume.cells.height != slice.height()) {
    throw std::invalid_argument("warp_events: volume geometry does not match the event slice");
  }
  const std::size_t n = slice.size();
  WarpedEvents out;
  out.width = slice.width();
  out.height = slice.height();
  out.t_ref = volume.t_ref;
  out.pos.resize(n);
  out.weight.assign(n, 0.0);
  out.polarity.resize(n);
  out.valid.resize(n);

  const double x_max = slice.width() - 1;
  const double y_max = slice.height() - 1;
  parallel_for((n + kChunk - 1) / kChunk, [&](std::size_t chunk) {
    const std::size_t end = std::min(n, (chunk + 1) * kChunk);
    for (std::size_t i = chunk * kChunk; i < end; ++i) {
      const Event& e = slice[i];
      const double tau = slice.normalized_time(e.t);
      const VoxelTaps taps = lookup_taps(volume, e.x, e.y, tau, lookup);
      Vec2 d;
      for (int j = 0; j < taps.count; ++j) d += taps.weight[j] * volume.disp[taps.voxel[j]];
      const Vec2 p{e.x + d.x, e.y + d.y};
      out.pos[i] = p;
      out.polarity[i] = e.p;
      const bool inside = p.x >= 0.0 && p.x <= x_max && p.y >= 0.0 && p.y <= y_max;
      out.valid[i] = inside ? 1 : 0;
      if (inside) out.weight[i] = time_weighting ? std::abs(volume.t_ref - tau) : 1.0;
    }
  });

  double weight_sum = 0.0;
  std::size_t n_valid = 0;
  for (std::size_t i = 0; i < n; ++i) {
    n_valid += out.valid[i];
    weight_sum += out.weight[i];
  }
  out.n_masked = n - n_valid;
  if (time_weighting && n_valid > 0) {
    // All unmasked events at t_ref leave nothing to rescale; fall back to 1.
    const double scale = weight_sum > 0.0 ? static_cast<double>(n_valid) / weight_sum : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (out.valid[i]) out.weight[i] = scale > 0.0 ? out.weight[i] * scale : 1.0;
    }
  }
  return out;
}

}  // namespace trajcm
