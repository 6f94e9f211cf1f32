#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "trajcm/events.hpp"
#include "trajcm/objective.hpp"
#include "trajcm/trajectory.hpp"

namespace trajcm {

/// How the reference time is chosen at each optimizer step.
enum class ReferenceMode {
  Random,      ///< t_ref ~ U(0, 1), one draw per step
  Fixed,       ///< always OptimConfig::fixed_t_ref
  ThreePoint,  ///< baseline objective over t_ref in {0, 0.5, 1}, normalized by the zero warp
};

struct LossGradient {
  LossBreakdown loss;
  std::vector<Vec2> grad;  ///< same layout as TrajectoryField::coeffs()
};

/// Analytic gradient of total_loss with neighbor sets, bin assignment and
/// the border mask held fixed. A degenerate (epsilon-guarded) contrast term
/// contributes no gradient.
LossGradient loss_gradient(const EventSlice& slice, const TrajectoryField& field, double t_ref,
                           const ObjectiveConfig& cfg);

/// Loss 1/F + lambda * R, F being fixed_reference_loss, and its gradient.
/// LossBreakdown::G holds F.
LossGradient three_point_loss_gradient(const EventSlice& slice, const TrajectoryField& field,
                                       const ObjectiveConfig& cfg);

struct OptimConfig {
  int iterations = 500;
  double learning_rate = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  ObjectiveConfig objective;
  ReferenceMode reference = ReferenceMode::Random;
  double fixed_t_ref = 0.0;
  /// Stop once the total changed by less than 1e-6 (relative) over 20 steps.
  bool early_stop = false;
};

struct TraceEntry {
  int iter = 0;
  double t_ref = 0.0;  ///< NaN for ReferenceMode::ThreePoint
  double G = 0.0;
  double R = 0.0;
  double total = 0.0;
};

struct OptimTrace {
  std::vector<TraceEntry> entries;
  double wall_seconds = 0.0;
  bool early_stopped = false;
  TrajectoryField final_field;
};

/// Adam on the trajectory coefficients. Deterministic for a given seed.
/// Throws NumericalError naming the iteration when the loss or gradient is
/// not finite, std::invalid_argument on a bad configuration.
OptimTrace minimize(const EventSlice& slice, const TrajectoryField& init_field, const OptimConfig& cfg);

/// CSV with header "iter,t_ref,G,R,total".
void write_trace_csv(const OptimTrace& trace, const std::filesystem::path& path);

struct GradientCheckReport {
  double max_rel_error = 0.0;
  std::int64_t worst_coordinate = -1;  ///< scalar index into TrajectoryField::scalars()
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

/// Compares loss_gradient with central differences of total_loss on
/// randomly drawn scalar coordinates. A coordinate is skipped when moving it
/// by +-2h changes any discrete choice of the objective (neighbor sets,
/// integer cell of a warped event, border mask, sign of a regularizer
/// difference). The relative error is |a - n| / max(|a|, |n|, 1e-6 |L|).
GradientCheckReport gradient_check(const EventSlice& slice, const TrajectoryField& field,
                                   const ObjectiveConfig& cfg, double t_ref, std::size_t n_coords,
                                   double h = 1e-4, std::uint64_t seed = 0);

}  // namespace trajcm
