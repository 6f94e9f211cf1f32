#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "trajcm/common.hpp"
#include "trajcm/warp.hpp"

namespace trajcm {

/// Image of warped events. `neg` is empty unless polarity_split is set, in
/// which case positive events go to `pos` and negative ones to `neg`.
struct Iwe {
  int width = 0;
  int height = 0;
  double t_ref = 0.0;
  double sigma = 0.0;
  bool polarity_split = true;
  std::vector<double> pos;
  std::vector<double> neg;

  /// pos + neg per pixel.
  std::vector<double> summed() const;
};

/// Accumulates unmasked events. sigma == 0 votes bilinearly into the four
/// surrounding pixels; sigma > 0 uses a normalized Gaussian footprint over
/// the pixels within ceil(3 sigma) of the event's integer cell.
Iwe build_iwe(const WarpedEvents& warped, double sigma = 0.0, bool polarity_split = true);

/// Sum over pixels (and polarity images) of the forward-difference gradient
/// magnitude. The last column/row has zero gradient along that axis.
double contrast_g(const Iwe& iwe);

/// d contrast_g / d I per pixel, laid out like the Iwe images.
struct IweGradient {
  std::vector<double> pos;
  std::vector<double> neg;
};
IweGradient contrast_g_backward(const Iwe& iwe);

/// d(sum_p grad[p] * I[p]) / d x'_k for every event (zero for masked ones).
std::vector<Vec2> iwe_backward(const WarpedEvents& warped, const Iwe& iwe, const IweGradient& grad);

/// Population variance over all pixels.
double image_variance(std::span<const double> image);

enum class IweChannel { Sum, Positive, Negative };

struct PgmOptions {
  int bits = 8;  ///< 8 or 16
  IweChannel channel = IweChannel::Sum;
};

/// Max-normalized binary PGM. The comment line records the normalization as
/// "# trajcm iwe max=<value> scale=<factor>".
void write_pgm(const Iwe& iwe, const std::filesystem::path& path, const PgmOptions& options = {});

}  // namespace trajcm
