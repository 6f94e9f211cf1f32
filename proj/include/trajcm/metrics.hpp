#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "trajcm/assoc.hpp"
#include "trajcm/common.hpp"
#include "trajcm/events.hpp"
#include "trajcm/flow.hpp"

namespace trajcm {

struct FlowErrors {
  double epe = 0.0;
  double ae = 0.0;  ///< degrees
  std::size_t n_valid = 0;
};

/// Mean endpoint error and mean angle between (u, v, 1) space-time vectors
/// over pixels with mask != 0. Throws std::invalid_argument on a shape
/// mismatch or an empty mask.
FlowErrors epe_ae(std::span<const Vec2> pred, std::span<const Vec2> gt, std::span<const std::uint8_t> mask);

/// Fraction of masked pixels whose endpoint error is strictly above threshold.
double pct_out(std::span<const Vec2> pred, std::span<const Vec2> gt, std::span<const std::uint8_t> mask,
               double threshold = 3.0);

struct TrajectoryErrors {
  double tepe = 0.0;
  double tae = 0.0;
  double pct_out = 0.0;  ///< on the per-pixel mean EPE over time
  std::vector<double> epe_per_time;
  std::vector<double> ae_per_time;
  std::size_t n_valid = 0;  ///< pixels valid at every time
};

/// Mean over the N_s maps of per-map EPE/AE. Each map uses the pixels finite
/// in both pred and gt. Throws std::invalid_argument if the map counts,
/// shapes or times differ.
TrajectoryErrors tepe_tae(std::span<const FlowMap> pred, std::span<const FlowMap> gt, double threshold = 3.0);

/// Var(IWE warped by the estimate) / Var(IWE with zero warp), polarity
/// summed, bilinear voting, no time weighting. Throws std::invalid_argument
/// when the zero-warp image has zero variance.
double fwl(const EventSlice& slice, const DisplacementVolume& estimate);

/// Mean over valid pixels of |dF/dx|_1 + |dF/dy|_1 (forward differences
/// between valid neighbors).
double flow_total_variation(const FlowMap& map);

struct MotionEval {
  TrajectoryErrors trajectory;
  double fwl = 0.0;
  bool has_fwl = false;
};

void write_eval_csv(const MotionEval& eval, std::ostream& out);
void write_eval_text(const MotionEval& eval, std::ostream& out);

}  // namespace trajcm
