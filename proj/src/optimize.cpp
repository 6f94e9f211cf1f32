#include "trajcm/optimize.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace trajcm {
namespace {

// Adds scale * d(G)/d(coeffs) for the contrast of an evaluated state.
void contrast_backward(const EventSlice& slice, const TrajectoryField& field, const ObjectiveState& s,
                       const ObjectiveConfig& cfg, double scale, std::span<Vec2> grad) {
  const IweGradient d_image = contrast_g_backward(s.iwe);
  const std::vector<Vec2> d_pos = iwe_backward(s.warped, s.iwe, d_image);
  std::vector<Vec2> d_disp(s.volume.disp.size());
  for (std::size_t k = 0; k < slice.size(); ++k) {
    if (!s.warped.valid[k]) continue;
    const Event& e = slice[k];
    const VoxelTaps taps = lookup_taps(s.volume, e.x, e.y, slice.normalized_time(e.t), cfg.lookup);
    for (int j = 0; j < taps.count; ++j) d_disp[taps.voxel[j]] += (scale * taps.weight[j]) * d_pos[k];
  }
  displacement_volume_backward(field, s.volume, d_disp, grad);
}

void regularizer_backward(const TrajectoryField& field, const ObjectiveState& s, double lambda,
                          std::span<Vec2> grad) {
  if (lambda == 0.0 || s.delta.n_pairs == 0) return;
  std::vector<Vec2> d_delta = regularizer_r_backward(s.delta);
  for (Vec2& g : d_delta) g *= lambda;
  delta_field_backward(field, s.volume, d_delta, grad);
}

struct ThreePointState {
  ObjectiveState at0, at1, at_half;
  double g_zero = 0.0;
  double f = 0.0;
};

ThreePointState evaluate_three_point(const EventSlice& slice, const TrajectoryField& field,
                                     const ObjectiveConfig& cfg) {
  ObjectiveConfig unweighted = cfg;
  unweighted.time_weighting = false;
  ThreePointState st;
  st.at0 = evaluate_objective(slice, field, 0.0, unweighted);
  st.at1 = evaluate_objective(slice, field, 1.0, unweighted);
  st.at_half = evaluate_objective(slice, field, 0.5, unweighted);
  const int stride = cfg.volume_stride > 0 ? cfg.volume_stride : field.stride();
  const auto zero = DisplacementVolume::zero(slice.width(), slice.height(), cfg.n_bins, stride, 0.0);
  st.g_zero = contrast_g(build_iwe(warp_events(slice, zero, false, cfg.lookup), cfg.sigma, cfg.polarity_split)) *
              contrast_scale(cfg, slice.width(), slice.height());
  const double num = (st.at0.loss.G + st.at1.loss.G) + 2.0 * st.at_half.loss.G;
  st.f = num / (4.0 * std::max(st.g_zero, cfg.epsilon));
  return st;
}

bool all_finite(std::span<const Vec2> v) {
  return std::all_of(v.begin(), v.end(), [](const Vec2& g) { return g.finite(); });
}

}  // namespace

LossGradient loss_gradient(const EventSlice& slice, const TrajectoryField& field, double t_ref,
                           const ObjectiveConfig& cfg) {
  const ObjectiveState s = evaluate_objective(slice, field, t_ref, cfg);
  LossGradient out{s.loss, std::vector<Vec2>(field.coeffs().size())};
  if (!s.loss.degenerate) {
    contrast_backward(slice, field, s, cfg,
                      -contrast_scale(cfg, slice.width(), slice.height()) / (s.loss.G * s.loss.G), out.grad);
  }
  regularizer_backward(field, s, cfg.lambda, out.grad);
  return out;
}

LossGradient three_point_loss_gradient(const EventSlice& slice, const TrajectoryField& field,
                                       const ObjectiveConfig& cfg) {
  const ThreePointState st = evaluate_three_point(slice, field, cfg);
  LossGradient out;
  out.grad.assign(field.coeffs().size(), Vec2{});
  LossBreakdown& l = out.loss;
  l.G = st.f;
  l.R = st.at_half.loss.R;
  l.lambda = cfg.lambda;
  l.n_masked = st.at_half.loss.n_masked;
  l.degenerate = !(st.f >= cfg.epsilon);
  l.total = 1.0 / std::max(st.f, cfg.epsilon) + cfg.lambda * l.R;
  if (!l.degenerate) {
    const double base = -contrast_scale(cfg, slice.width(), slice.height()) / (st.f * st.f) /
                        (4.0 * std::max(st.g_zero, cfg.epsilon));
    contrast_backward(slice, field, st.at0, cfg, base, out.grad);
    contrast_backward(slice, field, st.at1, cfg, base, out.grad);
    contrast_backward(slice, field, st.at_half, cfg, 2.0 * base, out.grad);
  }
  regularizer_backward(field, st.at_half, cfg.lambda, out.grad);
  return out;
}

OptimTrace minimize(const EventSlice& slice, const TrajectoryField& init_field, const OptimConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("minimize: learning rate must be > 0");
  if (!(cfg.beta1 > 0.0 && cfg.beta1 < 1.0 && cfg.beta2 > 0.0 && cfg.beta2 < 1.0)) {
    throw std::invalid_argument("minimize: moment decays must be in (0, 1)");
  }
  if (cfg.iterations < 0) throw std::invalid_argument("minimize: negative iteration count");
  if (cfg.reference == ReferenceMode::Fixed && !(cfg.fixed_t_ref >= 0.0 && cfg.fixed_t_ref <= 1.0)) {
    throw std::invalid_argument("minimize: fixed reference time outside [0, 1]");
  }

  const auto start = std::chrono::steady_clock::now();
  OptimTrace trace;
  trace.final_field = init_field;
  TrajectoryField& field = trace.final_field;
  std::span<double> params = field.scalars();
  std::vector<double> m(params.size(), 0.0);
  std::vector<double> v(params.size(), 0.0);
  std::mt19937_64 rng(cfg.seed);
  double beta1_pow = 1.0;
  double beta2_pow = 1.0;

  for (int it = 0; it < cfg.iterations; ++it) {
    double t_ref = std::numeric_limits<double>::quiet_NaN();
    LossGradient lg;
    if (cfg.reference == ReferenceMode::ThreePoint) {
      lg = three_point_loss_gradient(slice, field, cfg.objective);
    } else {
      t_ref = cfg.reference == ReferenceMode::Random ? sample_reference_time(rng) : cfg.fixed_t_ref;
      lg = loss_gradient(slice, field, t_ref, cfg.objective);
    }
    if (!std::isfinite(lg.loss.total) || !all_finite(lg.grad)) {
      throw NumericalError("non-finite loss or gradient at iteration " + std::to_string(it), it);
    }
    trace.entries.push_back({it, t_ref, lg.loss.G, lg.loss.R, lg.loss.total});

    beta1_pow *= cfg.beta1;
    beta2_pow *= cfg.beta2;
    const std::span<const double> g(&lg.grad.data()->x, lg.grad.size() * 2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / (1.0 - beta1_pow);
      const double v_hat = v[i] / (1.0 - beta2_pow);
      params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }

    if (cfg.early_stop && it >= 20) {
      const double before = trace.entries[it - 20].total;
      if (std::abs(lg.loss.total - before) < 1e-6 * std::abs(before)) {
        trace.early_stopped = true;
        break;
      }
    }
  }
  trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return trace;
}

void write_trace_csv(const OptimTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  auto put = [&](double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.write(buf, res.ptr - buf);
  };
  out << "iter,t_ref,G,R,total\n";
  for (const TraceEntry& e : trace.entries) {
    out << e.iter << ',';
    put(e.t_ref);
    out << ',';
    put(e.G);
    out << ',';
    put(e.R);
    out << ',';
    put(e.total);
    out << '\n';
  }
}

namespace {

// Every discrete decision the objective makes for a given field.
std::vector<std::int64_t> discrete_signature(const ObjectiveState& s) {
  std::vector<std::int64_t> sig(s.volume.knn_indices.begin(), s.volume.knn_indices.end());
  for (std::size_t k = 0; k < s.warped.pos.size(); ++k) {
    sig.push_back(s.warped.valid[k]);
    sig.push_back(static_cast<std::int64_t>(std::floor(s.warped.pos[k].x)));
    sig.push_back(static_cast<std::int64_t>(std::floor(s.warped.pos[k].y)));
  }
  const int cw = s.delta.cells.cells_x();
  const int ch = s.delta.cells.cells_y();
  const std::size_t n_cells = s.delta.cells.cell_count();
  auto sgn = [](double v) -> std::int64_t { return (v > 0) - (v < 0); };
  for (int b = 0; b < s.delta.n_pairs; ++b) {
    const Vec2* d = s.delta.delta.data() + b * n_cells;
    for (int y = 0; y < ch; ++y) {
      for (int x = 0; x < cw; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * cw + x;
        if (x + 1 < cw) {
          sig.push_back(sgn(d[i + 1].x - d[i].x));
          sig.push_back(sgn(d[i + 1].y - d[i].y));
        }
        if (y + 1 < ch) {
          sig.push_back(sgn(d[i + cw].x - d[i].x));
          sig.push_back(sgn(d[i + cw].y - d[i].y));
        }
      }
    }
  }
  return sig;
}

}  // namespace

GradientCheckReport gradient_check(const EventSlice& slice, const TrajectoryField& field,
                                   const ObjectiveConfig& cfg, double t_ref, std::size_t n_coords,
                                   double h, std::uint64_t seed) {
  if (n_coords < 1) throw std::invalid_argument("gradient_check: n_coords must be >= 1");
  if (!(h > 0.0)) throw std::invalid_argument("gradient_check: step must be > 0");

  const LossGradient analytic = loss_gradient(slice, field, t_ref, cfg);
  const std::span<const double> grad(&analytic.grad.data()->x, analytic.grad.size() * 2);
  const auto base_sig = discrete_signature(evaluate_objective(slice, field, t_ref, cfg));
  const double abs_floor = 1e-6 * std::abs(analytic.loss.total);

  std::vector<std::size_t> order(grad.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  GradientCheckReport report;
  TrajectoryField probe = field;
  auto loss_at = [&](std::size_t coord, double offset, std::vector<std::int64_t>* sig) {
    probe.scalars()[coord] = field.scalars()[coord] + offset;
    const ObjectiveState s = evaluate_objective(slice, probe, t_ref, cfg);
    if (sig) *sig = discrete_signature(s);
    probe.scalars()[coord] = field.scalars()[coord];
    return s.loss.total;
  };

  std::vector<std::int64_t> sig;
  for (std::size_t coord : order) {
    if (report.checked == n_coords) break;
    loss_at(coord, 2.0 * h, &sig);
    bool smooth = sig == base_sig;
    if (smooth) {
      loss_at(coord, -2.0 * h, &sig);
      smooth = sig == base_sig;
    }
    if (!smooth) {
      ++report.skipped;
      continue;
    }
    const double numeric = (loss_at(coord, h, nullptr) - loss_at(coord, -h, nullptr)) / (2.0 * h);
    const double a = grad[coord];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), abs_floor});
    ++report.checked;
    if (rel > report.max_rel_error || report.worst_coordinate < 0) {
      report.max_rel_error = rel;
      report.worst_coordinate = static_cast<std::int64_t>(coord);
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace trajcm
