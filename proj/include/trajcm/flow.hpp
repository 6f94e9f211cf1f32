#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "trajcm/common.hpp"

namespace trajcm {

/// Dense displacement map from normalized time 0 to `t`, row-major. Invalid
/// pixels hold NaN in both components.
struct FlowMap {
  int width = 0;
  int height = 0;
  double t = 0.0;
  std::vector<Vec2> flow;

  FlowMap() = default;
  FlowMap(int w, int h, double time) : width(w), height(h), t(time), flow(static_cast<std::size_t>(w) * h) {}

  static constexpr Vec2 invalid() {
    return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  }
  bool valid(std::size_t i) const { return flow[i].finite(); }
  Vec2& at(int x, int y) { return flow[static_cast<std::size_t>(y) * width + x]; }
  const Vec2& at(int x, int y) const { return flow[static_cast<std::size_t>(y) * width + x]; }
  std::vector<std::uint8_t> mask() const;
};

/// FLO1: magic, width u32, height u32, t f64, row-major f32 (dx, dy) pairs.
std::vector<std::uint8_t> encode_flo1(const FlowMap& map);
FlowMap decode_flo1(std::span<const std::uint8_t> bytes);
void save_flow_map(const FlowMap& map, const std::filesystem::path& path);
FlowMap load_flow_map(const std::filesystem::path& path);

}  // namespace trajcm
