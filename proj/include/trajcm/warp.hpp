#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "trajcm/assoc.hpp"
#include "trajcm/common.hpp"
#include "trajcm/events.hpp"

namespace trajcm {

/// How an event reads its displacement from the volume.
enum class VolumeLookup {
  Nearest,    ///< nearest bin in time, the event pixel's cell in space
  Trilinear,  ///< linear blend over the two nearest bins and four nearest cells
};

struct VoxelTaps {
  std::array<std::uint32_t, 8> voxel{};
  std::array<double, 8> weight{};
  int count = 0;
};

/// Voxels (and blend weights, summing to 1) an event at pixel (px, py) and
/// normalized time tau reads from.
VoxelTaps lookup_taps(const DisplacementVolume& volume, int px, int py, double tau,
                      VolumeLookup lookup = VolumeLookup::Nearest);

/// Events transported to the volume's reference time.
struct WarpedEvents {
  int width = 0;
  int height = 0;
  double t_ref = 0.0;
  std::vector<Vec2> pos;
  std::vector<double> weight;       ///< 0 for masked events
  std::vector<std::int8_t> polarity;
  std::vector<std::uint8_t> valid;  ///< 0 when warped outside [0, W-1] x [0, H-1]
  std::size_t n_masked = 0;
};

/// x'_k = x_k + disp(x_k, t_k). With time weighting each unmasked event is
/// weighted by |t_ref - t_k|, rescaled to mean 1 over unmasked events.
/// Throws std::invalid_argument if the volume geometry differs from the slice.
WarpedEvents warp_events(const EventSlice& slice, const DisplacementVolume& volume,
                         bool time_weighting, VolumeLookup lookup = VolumeLookup::Nearest);

}  // namespace trajcm
