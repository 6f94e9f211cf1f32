#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace trajcm {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2& operator+=(const Vec2& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr Vec2& operator-=(const Vec2& o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  constexpr Vec2& operator*=(double s) {
    x *= s;
    y *= s;
    return *this;
  }
  friend constexpr Vec2 operator+(Vec2 a, const Vec2& b) { return a += b; }
  friend constexpr Vec2 operator-(Vec2 a, const Vec2& b) { return a -= b; }
  friend constexpr Vec2 operator*(Vec2 a, double s) { return a *= s; }
  friend constexpr Vec2 operator*(double s, Vec2 a) { return a *= s; }
  friend constexpr bool operator==(const Vec2&, const Vec2&) = default;

  double norm() const { return std::hypot(x, y); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

/// Input file does not match its declared format.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loss or gradient became non-finite during optimization.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, int iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// Regular grid of stride x stride pixel cells covering a width x height
/// image. Partial cells at the right/bottom border are kept; their center is
/// the center of the pixels they actually cover.
struct GridGeometry {
  int width = 0;
  int height = 0;
  int stride = 4;

  int cells_x() const { return (width + stride - 1) / stride; }
  int cells_y() const { return (height + stride - 1) / stride; }
  std::size_t cell_count() const {
    return static_cast<std::size_t>(cells_x()) * static_cast<std::size_t>(cells_y());
  }

  double center_coord(int cell, int extent) const {
    const int lo = cell * stride;
    const int hi = std::min(lo + stride, extent) - 1;
    return 0.5 * (lo + hi);
  }
  Vec2 center(std::size_t cell) const {
    const int cx = static_cast<int>(cell % static_cast<std::size_t>(cells_x()));
    const int cy = static_cast<int>(cell / static_cast<std::size_t>(cells_x()));
    return {center_coord(cx, width), center_coord(cy, height)};
  }
  std::size_t cell_of_pixel(int px, int py) const {
    return static_cast<std::size_t>(py / stride) * static_cast<std::size_t>(cells_x()) +
           static_cast<std::size_t>(px / stride);
  }

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

}  // namespace trajcm
