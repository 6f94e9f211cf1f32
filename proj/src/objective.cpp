#include "trajcm/objective.hpp"

#include <algorithm>
#include <cmath>

namespace trajcm {
namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

double contrast_scale(const ObjectiveConfig& cfg, int width, int height) {
  return cfg.normalization == ContrastNormalization::PerPixel
             ? 1.0 / (static_cast<double>(width) * static_cast<double>(height))
             : 1.0;
}

double regularizer_r(const DeltaField& delta) {
  if (delta.n_pairs == 0) return 0.0;
  const int cw = delta.cells.cells_x();
  const int ch = delta.cells.cells_y();
  const std::size_t n_cells = delta.cells.cell_count();
  double sum = 0.0;
  for (int b = 0; b < delta.n_pairs; ++b) {
    const Vec2* d = delta.delta.data() + b * n_cells;
    for (int y = 0; y < ch; ++y) {
      for (int x = 0; x < cw; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * cw + x;
        if (x + 1 < cw) sum += std::abs(d[i + 1].x - d[i].x) + std::abs(d[i + 1].y - d[i].y);
        if (y + 1 < ch) sum += std::abs(d[i + cw].x - d[i].x) + std::abs(d[i + cw].y - d[i].y);
      }
    }
  }
  return sum / static_cast<double>(n_cells);
}

std::vector<Vec2> regularizer_r_backward(const DeltaField& delta) {
  std::vector<Vec2> grad(delta.delta.size());
  if (delta.n_pairs == 0) return grad;
  const int cw = delta.cells.cells_x();
  const int ch = delta.cells.cells_y();
  const std::size_t n_cells = delta.cells.cell_count();
  const double inv = 1.0 / static_cast<double>(n_cells);
  for (int b = 0; b < delta.n_pairs; ++b) {
    const Vec2* d = delta.delta.data() + b * n_cells;
    Vec2* g = grad.data() + b * n_cells;
    for (int y = 0; y < ch; ++y) {
      for (int x = 0; x < cw; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * cw + x;
        for (const std::size_t j : {x + 1 < cw ? i + 1 : i, y + 1 < ch ? i + cw : i}) {
          if (j == i) continue;
          const Vec2 s{sign(d[j].x - d[i].x) * inv, sign(d[j].y - d[i].y) * inv};
          g[j] += s;
          g[i] -= s;
        }
      }
    }
  }
  return grad;
}

ObjectiveState evaluate_objective(const EventSlice& slice, const TrajectoryField& field,
                                  double t_ref, const ObjectiveConfig& cfg) {
  ObjectiveState s;
  s.volume = build_displacement_volume(field, t_ref, cfg.knn, cfg.n_bins, cfg.volume_stride);
  s.delta = build_consecutive_delta_field(field, s.volume);
  s.warped = warp_events(slice, s.volume, cfg.time_weighting, cfg.lookup);
  s.iwe = build_iwe(s.warped, cfg.sigma, cfg.polarity_split);

  LossBreakdown& l = s.loss;
  l.G = contrast_g(s.iwe) * contrast_scale(cfg, slice.width(), slice.height());
  l.R = regularizer_r(s.delta);
  l.lambda = cfg.lambda;
  l.n_masked = s.warped.n_masked;
  l.degenerate = !(l.G >= cfg.epsilon);
  l.total = 1.0 / std::max(l.G, cfg.epsilon) + cfg.lambda * l.R;
  return s;
}

LossBreakdown total_loss(const EventSlice& slice, const TrajectoryField& field, double t_ref,
                         const ObjectiveConfig& cfg) {
  return evaluate_objective(slice, field, t_ref, cfg).loss;
}

double sample_reference_time(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double fixed_reference_loss(const EventSlice& slice, const TrajectoryField& field,
                            const ObjectiveConfig& cfg) {
  auto contrast_at = [&](const DisplacementVolume& volume) {
    const auto warped = warp_events(slice, volume, false, cfg.lookup);
    return contrast_g(build_iwe(warped, cfg.sigma, cfg.polarity_split));
  };
  auto contrast_ref = [&](double t_ref) {
    return contrast_at(build_displacement_volume(field, t_ref, cfg.knn, cfg.n_bins, cfg.volume_stride));
  };
  const int stride = cfg.volume_stride > 0 ? cfg.volume_stride : field.stride();
  const double g_zero =
      contrast_at(DisplacementVolume::zero(slice.width(), slice.height(), cfg.n_bins, stride, 0.0));
  // Summation order keeps the zero-warp value exactly 1.
  const double numerator = (contrast_ref(0.0) + contrast_ref(1.0)) + 2.0 * contrast_ref(0.5);
  return numerator / (4.0 * std::max(g_zero, cfg.epsilon));
}

}  // namespace trajcm
