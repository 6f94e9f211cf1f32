#include "trajcm/events.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "byte_io.hpp"
#include "trajcm/common.hpp"

namespace trajcm {
namespace {

constexpr std::size_t kEvt1HeaderBytes = 4 + 4 + 4 + 8 + 8 + 8;
constexpr std::size_t kEvt1RecordBytes = 8 + 2 + 2 + 1 + 1;

// Empty string when the event is valid for the given geometry/interval.
std::string event_problem(const Event& e, int width, int height, double t_start, double t_end) {
  if (!std::isfinite(e.t)) return "non-finite timestamp";
  if (e.x >= width || e.y >= height) {
    return "coordinate (" + std::to_string(e.x) + "," + std::to_string(e.y) +
           ") outside " + std::to_string(width) + "x" + std::to_string(height);
  }
  if (e.p != 1 && e.p != -1) return "polarity " + std::to_string(e.p) + " is not +1/-1";
  if (e.t < t_start || e.t > t_end) return "timestamp outside [t_start, t_end]";
  return {};
}

}  // namespace

EventSlice::EventSlice(int width, int height, double t_start, double t_end, std::vector<Event> events)
    : width_(width), height_(height), t_start_(t_start), t_end_(t_end), events_(std::move(events)) {
  if (width < 1 || height < 1 || width > 65536 || height > 65536) {
    throw std::invalid_argument("EventSlice: sensor geometry must be within 1..65536");
  }
  if (!std::isfinite(t_start) || !std::isfinite(t_end) || t_end < t_start) {
    throw std::invalid_argument("EventSlice: interval must be finite with t_end >= t_start");
  }
  for (std::size_t i = 0; i < events_.size(); ++i) {
    if (auto problem = event_problem(events_[i], width, height, t_start, t_end); !problem.empty()) {
      throw std::invalid_argument("EventSlice: event " + std::to_string(i) + ": " + problem);
    }
  }
  std::stable_sort(events_.begin(), events_.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
}

EventFormat event_format_for(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? EventFormat::Csv : EventFormat::Binary;
}

std::vector<std::uint8_t> encode_evt1(const EventSlice& slice) {
  detail::ByteWriter w;
  w.bytes().reserve(kEvt1HeaderBytes + slice.size() * kEvt1RecordBytes);
  w.magic("EVT1");
  w.put(static_cast<std::uint32_t>(slice.width()));
  w.put(static_cast<std::uint32_t>(slice.height()));
  w.put(static_cast<std::uint64_t>(slice.size()));
  w.put(slice.t_start());
  w.put(slice.t_end());
  for (const Event& e : slice.events()) {
    w.put(e.t);
    w.put(e.x);
    w.put(e.y);
    w.put(e.p);
    w.put(std::uint8_t{0});
  }
  return std::move(w.bytes());
}

EventSlice decode_evt1(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "EVT1");
  r.expect_magic("EVT1");
  const auto width = r.get<std::uint32_t>("width");
  const auto height = r.get<std::uint32_t>("height");
  const auto count = r.get<std::uint64_t>("count");
  const auto t_start = r.get<double>("t_start");
  const auto t_end = r.get<double>("t_end");
  if (width < 1 || height < 1 || width > 65536 || height > 65536) {
    r.fail_at(4, "sensor geometry outside 1..65536");
  }
  if (!std::isfinite(t_start) || !std::isfinite(t_end) || t_end < t_start) {
    r.fail_at(20, "invalid interval");
  }
  if (count > r.remaining() / kEvt1RecordBytes || r.remaining() != count * kEvt1RecordBytes) {
    r.fail("payload size does not match count " + std::to_string(count));
  }

  std::vector<Event> events(count);
  for (auto& e : events) {
    const std::size_t record_offset = r.offset();
    e.t = r.get<double>("t");
    e.x = r.get<std::uint16_t>("x");
    e.y = r.get<std::uint16_t>("y");
    e.p = r.get<std::int8_t>("p");
    r.get<std::uint8_t>("pad");
    auto problem = event_problem(e, static_cast<int>(width), static_cast<int>(height), t_start, t_end);
    if (!problem.empty()) r.fail_at(record_offset, problem);
  }
  return EventSlice(static_cast<int>(width), static_cast<int>(height), t_start, t_end, std::move(events));
}

EventSlice load_events(const std::filesystem::path& path, EventFormat format,
                       std::optional<SensorGeometry> csv_geometry) {
  if (format == EventFormat::Binary) {
    try {
      return decode_evt1(detail::read_file(path));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }

  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  auto fail = [&](std::size_t line, const std::string& msg) -> void {
    throw ParseError(path.string() + ":" + std::to_string(line) + ": " + msg);
  };

  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) fail(1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,x,y,p") fail(1, "expected header 't,x,y,p'");

  std::vector<Event> events;
  std::vector<std::size_t> lines;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    double fields[4];
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int f = 0; f < 4; ++f) {
      auto [next, ec] = std::from_chars(p, end, fields[f]);
      if (ec != std::errc() || (f < 3 && (next == end || *next != ',')) || (f == 3 && next != end)) {
        fail(line_no, "malformed record");
      }
      p = next + 1;
    }
    if (!std::isfinite(fields[0])) fail(line_no, "non-finite timestamp");
    for (int f = 1; f < 3; ++f) {
      if (fields[f] < 0 || fields[f] > 65535 || fields[f] != std::floor(fields[f])) {
        fail(line_no, "invalid coordinate");
      }
    }
    if (fields[3] != 1.0 && fields[3] != -1.0) fail(line_no, "polarity is not +1/-1");
    events.push_back({fields[0], static_cast<std::uint16_t>(fields[1]),
                      static_cast<std::uint16_t>(fields[2]), static_cast<std::int8_t>(fields[3])});
    lines.push_back(line_no);
  }

  SensorGeometry geometry{1, 1};
  double t_start = 0.0;
  double t_end = 0.0;
  if (!events.empty()) {
    t_start = t_end = events.front().t;
  }
  for (const Event& e : events) {
    geometry.width = std::max(geometry.width, e.x + 1);
    geometry.height = std::max(geometry.height, e.y + 1);
    t_start = std::min(t_start, e.t);
    t_end = std::max(t_end, e.t);
  }
  if (csv_geometry) {
    geometry = *csv_geometry;
    for (std::size_t i = 0; i < events.size(); ++i) {
      if (events[i].x >= geometry.width || events[i].y >= geometry.height) {
        fail(lines[i], "coordinate outside declared geometry");
      }
    }
  }
  return EventSlice(geometry.width, geometry.height, t_start, t_end, std::move(events));
}

void save_events(const EventSlice& slice, const std::filesystem::path& path, EventFormat format) {
  if (format == EventFormat::Binary) {
    detail::write_file(path, encode_evt1(slice));
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "t,x,y,p\n";
  char buf[64];
  for (const Event& e : slice.events()) {
    auto res = std::to_chars(buf, buf + sizeof(buf), e.t);
    out.write(buf, res.ptr - buf);
    out << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.p) << '\n';
  }
}

double VoxelGrid::total() const {
  double sum = 0.0;
  for (double v : data) sum += v;
  return sum;
}

VoxelGrid build_voxel_grid(const EventSlice& slice, int bins) {
  if (bins < 1) throw std::invalid_argument("build_voxel_grid: bin count must be >= 1");
  if (slice.t_end() <= slice.t_start() && bins != 1) {
    throw std::invalid_argument("build_voxel_grid: single-timestamp slice requires one bin");
  }
  VoxelGrid grid{bins, slice.width(), slice.height(), slice.t_start(), slice.t_end(), {}};
  grid.data.assign(static_cast<std::size_t>(bins) * slice.width() * slice.height(), 0.0);
  const std::size_t plane = static_cast<std::size_t>(slice.width()) * slice.height();

  for (const Event& e : slice.events()) {
    const std::size_t pixel = static_cast<std::size_t>(e.y) * slice.width() + e.x;
    // Continuous bin coordinate; bin b is centered at (b + 0.5) / bins.
    const double f = slice.normalized_time(e.t) * bins - 0.5;
    if (f <= 0.0) {
      grid.data[pixel] += 1.0;
    } else if (f >= bins - 1) {
      grid.data[(bins - 1) * plane + pixel] += 1.0;
    } else {
      const int b0 = static_cast<int>(std::floor(f));
      const double w1 = f - b0;
      grid.data[b0 * plane + pixel] += 1.0 - w1;
      grid.data[(b0 + 1) * plane + pixel] += w1;
    }
  }
  return grid;
}

}  // namespace trajcm
