#include "trajcm/flow.hpp"

#include <cmath>

#include "byte_io.hpp"

namespace trajcm {

std::vector<std::uint8_t> FlowMap::mask() const {
  std::vector<std::uint8_t> m(flow.size());
  for (std::size_t i = 0; i < flow.size(); ++i) m[i] = valid(i) ? 1 : 0;
  return m;
}

std::vector<std::uint8_t> encode_flo1(const FlowMap& map) {
  detail::ByteWriter w;
  w.magic("FLO1");
  w.put(static_cast<std::uint32_t>(map.width));
  w.put(static_cast<std::uint32_t>(map.height));
  w.put(map.t);
  for (const Vec2& v : map.flow) {
    const bool ok = v.finite();
    w.put(ok ? static_cast<float>(v.x) : std::numeric_limits<float>::quiet_NaN());
    w.put(ok ? static_cast<float>(v.y) : std::numeric_limits<float>::quiet_NaN());
  }
  return std::move(w.bytes());
}

FlowMap decode_flo1(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "FLO1");
  r.expect_magic("FLO1");
  const auto width = r.get<std::uint32_t>("width");
  const auto height = r.get<std::uint32_t>("height");
  const auto t = r.get<double>("t");
  if (width < 1 || height < 1 || width > 65536 || height > 65536) r.fail_at(4, "invalid geometry");
  if (!std::isfinite(t)) r.fail_at(12, "non-finite time");
  FlowMap map(static_cast<int>(width), static_cast<int>(height), t);
  if (r.remaining() != map.flow.size() * 8) r.fail("payload size mismatch");
  for (Vec2& v : map.flow) {
    const float dx = r.get<float>("dx");
    const float dy = r.get<float>("dy");
    v = (std::isfinite(dx) && std::isfinite(dy)) ? Vec2{dx, dy} : FlowMap::invalid();
  }
  return map;
}

void save_flow_map(const FlowMap& map, const std::filesystem::path& path) {
  detail::write_file(path, encode_flo1(map));
}

FlowMap load_flow_map(const std::filesystem::path& path) {
  try {
    return decode_flo1(detail::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace trajcm
