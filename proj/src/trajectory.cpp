#include "trajcm/trajectory.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "byte_io.hpp"

namespace trajcm {
namespace {

void check_time(double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw std::invalid_argument("basis time " + std::to_string(t) + " outside [0, 1]");
  }
}

void check_degree(const Basis& basis) {
  if (basis.degree < 1) throw std::invalid_argument("basis degree must be >= 1");
}

double binomial(int n, int k) {
  double c = 1.0;
  for (int i = 1; i <= k; ++i) c = c * (n - k + i) / i;
  return c;
}

}  // namespace

std::vector<double> eval_basis(const Basis& basis, double t) {
  check_degree(basis);
  check_time(t);
  const int n = basis.degree;
  if (basis.kind == BasisKind::Polynomial) {
    std::vector<double> g(n);
    double power = 1.0;
    for (int j = 0; j < n; ++j) {
      power *= t;
      g[j] = power;
    }
    return g;
  }
  std::vector<double> g(n + 1);
  for (int j = 0; j <= n; ++j) {
    g[j] = binomial(n, j) * std::pow(1.0 - t, n - j) * std::pow(t, j);
  }
  return g;
}

void coefficient_weights(const Basis& basis, double t, std::span<double> out) {
  const auto g = eval_basis(basis, t);
  if (out.size() != basis.coefficient_count()) {
    throw std::invalid_argument("coefficient_weights: output size mismatch");
  }
  // Bezier drops the pinned j = 0 control point.
  const std::size_t offset = basis.kind == BasisKind::Bezier ? 1 : 0;
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = g[j + offset];
}

TrajectoryField::TrajectoryField(int width, int height, Basis basis, int stride)
    : basis_(basis), grid_{width, height, stride} {
  check_degree(basis);
  if (width < 1 || height < 1) throw std::invalid_argument("TrajectoryField: empty image");
  if (stride < 1) throw std::invalid_argument("TrajectoryField: stride must be >= 1");
  coeffs_.assign(anchor_count() * coefficients_per_anchor(), Vec2{});
}

Vec2 TrajectoryField::displacement(std::size_t n, std::span<const double> weights) const {
  Vec2 d;
  const Vec2* c = coeffs_.data() + n * coefficients_per_anchor();
  for (std::size_t j = 0; j < weights.size(); ++j) d += weights[j] * c[j];
  return d;
}

Vec2 eval_trajectory(const TrajectoryField& field, std::size_t anchor, double t) {
  if (anchor >= field.anchor_count()) {
    throw std::invalid_argument("eval_trajectory: anchor index " + std::to_string(anchor) +
                                " out of range");
  }
  std::vector<double> w(field.coefficients_per_anchor());
  coefficient_weights(field.basis(), t, w);
  return field.anchor(anchor) + field.displacement(anchor, w);
}

TrajectoryBatch eval_trajectory_batch(const TrajectoryField& field, std::span<const double> times) {
  TrajectoryBatch batch{times.size(), field.anchor_count(), {}};
  batch.positions.resize(batch.n_times * batch.n_anchors);
  std::vector<double> w(field.coefficients_per_anchor());
  for (std::size_t i = 0; i < times.size(); ++i) {
    coefficient_weights(field.basis(), times[i], w);
    for (std::size_t n = 0; n < batch.n_anchors; ++n) {
      batch.positions[i * batch.n_anchors + n] = field.anchor(n) + field.displacement(n, w);
    }
  }
  return batch;
}

std::vector<std::uint8_t> encode_trj1(const TrajectoryField& field) {
  detail::ByteWriter w;
  w.magic("TRJ1");
  w.put(static_cast<std::uint8_t>(field.basis().kind));
  w.put(static_cast<std::uint16_t>(field.basis().degree));
  w.put(static_cast<std::uint16_t>(field.stride()));
  w.put(static_cast<std::uint32_t>(field.grid().cells_x()));
  w.put(static_cast<std::uint32_t>(field.grid().cells_y()));
  w.put(static_cast<std::uint32_t>(field.width()));
  w.put(static_cast<std::uint32_t>(field.height()));
  for (const Vec2& c : field.coeffs()) {
    w.put(static_cast<float>(c.x));
    w.put(static_cast<float>(c.y));
  }
  return std::move(w.bytes());
}

TrajectoryField decode_trj1(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "TRJ1");
  r.expect_magic("TRJ1");
  const auto kind = r.get<std::uint8_t>("basis kind");
  const auto degree = r.get<std::uint16_t>("degree");
  const auto stride = r.get<std::uint16_t>("stride");
  const auto grid_w = r.get<std::uint32_t>("grid width");
  const auto grid_h = r.get<std::uint32_t>("grid height");
  const auto width = r.get<std::uint32_t>("image width");
  const auto height = r.get<std::uint32_t>("image height");
  if (kind > 1) r.fail_at(4, "unknown basis kind " + std::to_string(kind));
  if (degree < 1 || stride < 1 || width < 1 || height < 1 || width > 65536 || height > 65536) {
    r.fail_at(5, "invalid header values");
  }
  TrajectoryField field(static_cast<int>(width), static_cast<int>(height),
                        Basis{static_cast<BasisKind>(kind), degree}, stride);
  if (static_cast<int>(grid_w) != field.grid().cells_x() ||
      static_cast<int>(grid_h) != field.grid().cells_y()) {
    r.fail_at(9, "grid dimensions inconsistent with image size and stride");
  }
  if (r.remaining() != field.coeffs().size() * 8) r.fail("coefficient payload size mismatch");
  for (Vec2& c : field.coeffs()) {
    c.x = r.get<float>("coefficient");
    c.y = r.get<float>("coefficient");
  }
  return field;
}

void save_trajectory_field(const TrajectoryField& field, const std::filesystem::path& path) {
  detail::write_file(path, encode_trj1(field));
}

TrajectoryField load_trajectory_field(const std::filesystem::path& path) {
  try {
    return decode_trj1(detail::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace trajcm
