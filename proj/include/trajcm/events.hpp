#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace trajcm {

/// One brightness change: pixel (x, y), timestamp in seconds, polarity +1/-1.
struct Event {
  double t = 0.0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Validated, time-sorted events over [t_start, t_end] on a width x height
/// sensor. Immutable once constructed.
class EventSlice {
 public:
  EventSlice() = default;

  /// Validates every event and stable-sorts by timestamp. Throws
  /// std::invalid_argument on bad geometry, coordinates, polarity or
  /// timestamps outside the interval.
  EventSlice(int width, int height, double t_start, double t_end, std::vector<Event> events);

  int width() const { return width_; }
  int height() const { return height_; }
  double t_start() const { return t_start_; }
  double t_end() const { return t_end_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }
  std::span<const Event> events() const { return events_; }
  const Event& operator[](std::size_t i) const { return events_[i]; }

  /// Maps a timestamp to [0, 1] over the slice interval (0 for a
  /// single-timestamp slice).
  double normalized_time(double t) const {
    const double span = t_end_ - t_start_;
    return span > 0.0 ? (t - t_start_) / span : 0.0;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  double t_start_ = 0.0;
  double t_end_ = 0.0;
  std::vector<Event> events_;
};

enum class EventFormat { Binary, Csv };

struct SensorGeometry {
  int width = 0;
  int height = 0;
};

/// ".csv" selects Csv, everything else Binary (EVT1).
EventFormat event_format_for(const std::filesystem::path& path);

/// Reads an EVT1 or CSV event file. CSV carries no geometry; it is taken
/// from `csv_geometry` when given and otherwise inferred from the largest
/// coordinates. Throws ParseError naming the byte offset (EVT1) or line (CSV).
EventSlice load_events(const std::filesystem::path& path, EventFormat format,
                       std::optional<SensorGeometry> csv_geometry = std::nullopt);

void save_events(const EventSlice& slice, const std::filesystem::path& path, EventFormat format);

/// Serialized EVT1 bytes; save_events(Binary) writes exactly these.
std::vector<std::uint8_t> encode_evt1(const EventSlice& slice);
EventSlice decode_evt1(std::span<const std::uint8_t> bytes);

/// B x H x W event-count volume with linear voting in time between the two
/// nearest bin centers.
struct VoxelGrid {
  int bins = 0;
  int width = 0;
  int height = 0;
  double t_start = 0.0;
  double t_end = 0.0;
  std::vector<double> data;

  double at(int b, int y, int x) const {
    return data[(static_cast<std::size_t>(b) * height + y) * width + x];
  }
  double total() const;
};

VoxelGrid build_voxel_grid(const EventSlice& slice, int bins);

}  // namespace trajcm
