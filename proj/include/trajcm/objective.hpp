#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "trajcm/assoc.hpp"
#include "trajcm/events.hpp"
#include "trajcm/iwe.hpp"
#include "trajcm/trajectory.hpp"
#include "trajcm/warp.hpp"

namespace trajcm {

/// Scale applied to contrast_g inside the loss.
enum class ContrastNormalization {
  PerPixel,  ///< mean gradient magnitude over the image
  None,      ///< raw sum over pixels
};

struct ObjectiveConfig {
  double lambda = 0.003;
  ContrastNormalization normalization = ContrastNormalization::PerPixel;
  double sigma = 1.0;
  bool time_weighting = true;
  bool polarity_split = true;
  KnnConfig knn;
  int n_bins = 15;
  int volume_stride = 0;  ///< 0: same as the trajectory field
  VolumeLookup lookup = VolumeLookup::Nearest;
  double epsilon = 1e-8;  ///< lower guard on G inside 1/G
};

struct LossBreakdown {
  double G = 0.0;  ///< contrast after normalization
  double R = 0.0;
  double total = 0.0;
  double lambda = 0.0;
  std::size_t n_masked = 0;
  bool degenerate = false;  ///< G fell below epsilon
};

/// L1 norm of the forward spatial differences of the delta field (both
/// components, all bin pairs), divided by the cell count.
double regularizer_r(const DeltaField& delta);
std::vector<Vec2> regularizer_r_backward(const DeltaField& delta);

/// Factor turning contrast_g into the G used by the loss.
double contrast_scale(const ObjectiveConfig& cfg, int width, int height);

/// Every intermediate of one objective evaluation, kept for the backward pass.
struct ObjectiveState {
  DisplacementVolume volume;
  DeltaField delta;
  WarpedEvents warped;
  Iwe iwe;
  LossBreakdown loss;
};

ObjectiveState evaluate_objective(const EventSlice& slice, const TrajectoryField& field,
                                  double t_ref, const ObjectiveConfig& cfg);

/// 1/max(G, epsilon) + lambda * R at reference time t_ref.
LossBreakdown total_loss(const EventSlice& slice, const TrajectoryField& field, double t_ref,
                         const ObjectiveConfig& cfg);

/// Uniform draw on [0, 1) built from the top 53 bits of one generator output.
double sample_reference_time(std::mt19937_64& rng);

/// Three-reference baseline (G(0) + 2 G(0.5) + G(1)) / (4 G(zero warp)).
/// Contrast only: lambda and time weighting are not used.
double fixed_reference_loss(const EventSlice& slice, const TrajectoryField& field,
                            const ObjectiveConfig& cfg);

}  // namespace trajcm
