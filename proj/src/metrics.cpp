#include "trajcm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <stdexcept>

#include "trajcm/iwe.hpp"
#include "trajcm/warp.hpp"

namespace trajcm {
namespace {

void check_shapes(std::size_t pred, std::size_t gt, std::size_t mask) {
  if (pred != gt || pred != mask) throw std::invalid_argument("metrics: shape mismatch");
}

double angle_deg(const Vec2& a, const Vec2& b) {
  const double dot = a.x * b.x + a.y * b.y + 1.0;
  const double na = std::sqrt(a.x * a.x + a.y * a.y + 1.0);
  const double nb = std::sqrt(b.x * b.x + b.y * b.y + 1.0);
  return std::acos(std::clamp(dot / (na * nb), -1.0, 1.0)) * (180.0 / std::numbers::pi);
}

std::vector<std::uint8_t> joint_mask(const FlowMap& a, const FlowMap& b) {
  std::vector<std::uint8_t> m(a.flow.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = a.valid(i) && b.valid(i);
  return m;
}

}  // namespace

FlowErrors epe_ae(std::span<const Vec2> pred, std::span<const Vec2> gt, std::span<const std::uint8_t> mask) {
  check_shapes(pred.size(), gt.size(), mask.size());
  FlowErrors out;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    out.epe += (pred[i] - gt[i]).norm();
    out.ae += angle_deg(pred[i], gt[i]);
    ++out.n_valid;
  }
  if (out.n_valid == 0) throw std::invalid_argument("metrics: empty mask");
  out.epe /= static_cast<double>(out.n_valid);
  out.ae /= static_cast<double>(out.n_valid);
  return out;
}

double pct_out(std::span<const Vec2> pred, std::span<const Vec2> gt, std::span<const std::uint8_t> mask,
               double threshold) {
  check_shapes(pred.size(), gt.size(), mask.size());
  std::size_t n = 0;
  std::size_t outliers = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    ++n;
    if ((pred[i] - gt[i]).norm() > threshold) ++outliers;
  }
  if (n == 0) throw std::invalid_argument("metrics: empty mask");
  return static_cast<double>(outliers) / static_cast<double>(n);
}

TrajectoryErrors tepe_tae(std::span<const FlowMap> pred, std::span<const FlowMap> gt, double threshold) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw std::invalid_argument("tepe_tae: prediction and ground truth need the same number of maps");
  }
  TrajectoryErrors out;
  const std::size_t n_pixels = gt.front().flow.size();
  std::vector<double> epe_sum(n_pixels, 0.0);
  std::vector<std::uint8_t> valid_all(n_pixels, 1);
  for (std::size_t s = 0; s < gt.size(); ++s) {
    if (pred[s].width != gt[s].width || pred[s].height != gt[s].height || gt[s].flow.size() != n_pixels) {
      throw std::invalid_argument("tepe_tae: map shape mismatch");
    }
    if (std::abs(pred[s].t - gt[s].t) > 1e-9) throw std::invalid_argument("tepe_tae: map time mismatch");
    const auto mask = joint_mask(pred[s], gt[s]);
    const FlowErrors e = epe_ae(pred[s].flow, gt[s].flow, mask);
    out.epe_per_time.push_back(e.epe);
    out.ae_per_time.push_back(e.ae);
    for (std::size_t i = 0; i < n_pixels; ++i) {
      valid_all[i] &= mask[i];
      if (mask[i]) epe_sum[i] += (pred[s].flow[i] - gt[s].flow[i]).norm();
    }
  }
  const double n_s = static_cast<double>(gt.size());
  for (std::size_t s = 0; s < gt.size(); ++s) {
    out.tepe += out.epe_per_time[s];
    out.tae += out.ae_per_time[s];
  }
  out.tepe /= n_s;
  out.tae /= n_s;

  std::size_t outliers = 0;
  for (std::size_t i = 0; i < n_pixels; ++i) {
    if (!valid_all[i]) continue;
    ++out.n_valid;
    if (epe_sum[i] / n_s > threshold) ++outliers;
  }
  out.pct_out = out.n_valid > 0 ? static_cast<double>(outliers) / static_cast<double>(out.n_valid) : 0.0;
  return out;
}

double fwl(const EventSlice& slice, const DisplacementVolume& estimate) {
  const auto zero = DisplacementVolume::zero(slice.width(), slice.height(), estimate.n_bins,
                                             estimate.cells.stride, estimate.t_ref);
  const auto base = build_iwe(warp_events(slice, zero, false), 0.0, false).summed();
  const double var_base = image_variance(base);
  if (!(var_base > 0.0)) throw std::invalid_argument("fwl: zero-variance baseline (degenerate slice)");
  const auto warped = build_iwe(warp_events(slice, estimate, false), 0.0, false).summed();
  return image_variance(warped) / var_base;
}

double flow_total_variation(const FlowMap& map) {
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const Vec2& f = map.at(x, y);
      if (!f.finite()) continue;
      ++n;
      if (x + 1 < map.width && map.at(x + 1, y).finite()) {
        const Vec2 d = map.at(x + 1, y) - f;
        sum += std::abs(d.x) + std::abs(d.y);
      }
      if (y + 1 < map.height && map.at(x, y + 1).finite()) {
        const Vec2 d = map.at(x, y + 1) - f;
        sum += std::abs(d.x) + std::abs(d.y);
      }
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

void write_eval_csv(const MotionEval& eval, std::ostream& out) {
  const auto& t = eval.trajectory;
  out << std::setprecision(17);
  out << "metric,value\n";
  out << "tepe," << t.tepe << "\ntae," << t.tae << "\npct_out," << t.pct_out << "\nn_valid," << t.n_valid << '\n';
  if (eval.has_fwl) out << "fwl," << eval.fwl << '\n';
  for (std::size_t s = 0; s < t.epe_per_time.size(); ++s) {
    out << "epe_" << s + 1 << ',' << t.epe_per_time[s] << '\n';
    out << "ae_" << s + 1 << ',' << t.ae_per_time[s] << '\n';
  }
}

void write_eval_text(const MotionEval& eval, std::ostream& out) {
  const auto& t = eval.trajectory;
  out << std::fixed << std::setprecision(4);
  out << "TEPE   " << t.tepe << " px\n"
      << "TAE    " << t.tae << " deg\n"
      << "%Out   " << t.pct_out * 100.0 << " %\n"
      << "pixels " << t.n_valid << '\n';
  if (eval.has_fwl) out << "FWL    " << eval.fwl << '\n';
  for (std::size_t s = 0; s < t.epe_per_time.size(); ++s) {
    out << "  map " << s + 1 << ": EPE " << t.epe_per_time[s] << "  AE " << t.ae_per_time[s] << '\n';
  }
  out.unsetf(std::ios::floatfield);
}

}  // namespace trajcm
