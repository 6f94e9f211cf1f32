#include <cmath>
#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "trajcm/common.hpp"
#include "trajcm/events.hpp"

using namespace trajcm;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

// Recomputes the voxel grid with an explicit nearest-two-centers search.
std::vector<double> voxel_oracle(const EventSlice& s, int bins) {
  std::vector<double> out(static_cast<std::size_t>(bins) * s.width() * s.height(), 0.0);
  for (const Event& e : s.events()) {
    const double tau = (e.t - s.t_start()) / (s.t_end() - s.t_start());
    std::vector<double> w(bins, 0.0);
    double lo_c = 0.5 / bins, hi_c = (bins - 0.5) / bins;
    if (tau <= lo_c) {
      w[0] = 1;
    } else if (tau >= hi_c) {
      w[bins - 1] = 1;
    } else {
      for (int b = 0; b + 1 < bins; ++b) {
        double c0 = (b + 0.5) / bins, c1 = (b + 1.5) / bins;
        if (tau >= c0 && tau < c1) {
          w[b] = (c1 - tau) / (c1 - c0);
          w[b + 1] = (tau - c0) / (c1 - c0);
        }
      }
    }
    for (int b = 0; b < bins; ++b) {
      out[(static_cast<std::size_t>(b) * s.height() + e.y) * s.width() + e.x] += w[b];
    }
  }
  return out;
}

}  // namespace

TEST_CASE("slice validation rejects bad events") {
  CHECK_THROWS_AS(EventSlice(0, 4, 0, 1, {}), std::invalid_argument);
  CHECK_THROWS_AS(EventSlice(4, 4, 1, 0, {}), std::invalid_argument);
  CHECK_THROWS_AS(EventSlice(4, 4, 0, 1, {{0.5, 4, 0, 1}}), std::invalid_argument);
  CHECK_THROWS_AS(EventSlice(4, 4, 0, 1, {{0.5, 0, 0, 0}}), std::invalid_argument);
  CHECK_THROWS_AS(EventSlice(4, 4, 0, 1, {{1.5, 0, 0, 1}}), std::invalid_argument);
  CHECK_NOTHROW(EventSlice(4, 4, 0, 1, {}));
}

TEST_CASE("slice sorts by time and keeps the order of equal timestamps") {
  std::vector<Event> ev = {{0.7, 1, 0, 1}, {0.2, 2, 0, 1}, {0.7, 3, 0, -1}, {0.2, 0, 0, -1}};
  EventSlice s(4, 1, 0, 1, ev);
  REQUIRE(s.size() == 4);
  CHECK(s[0].x == 2);
  CHECK(s[1].x == 0);
  CHECK(s[2].x == 1);
  CHECK(s[3].x == 3);
  CHECK(s.normalized_time(0.25) == doctest::Approx(0.25));
}

TEST_CASE("EVT1 round trip is exact") {
  auto s = test_util::random_slice(40, 30, 500, 7, 2.0, 3.5);
  auto bytes = encode_evt1(s);
  CHECK(bytes.size() == 36 + 14 * s.size());
  CHECK(bytes[0] == 'E');
  CHECK(bytes[3] == '1');
  auto back = decode_evt1(bytes);
  CHECK(back.width() == 40);
  CHECK(back.height() == 30);
  CHECK(back.t_start() == 2.0);
  CHECK(back.t_end() == 3.5);
  REQUIRE(back.size() == s.size());
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(back[i] == s[i]);
  CHECK(encode_evt1(back) == bytes);
}

TEST_CASE("EVT1 errors name the byte offset") {
  auto s = test_util::random_slice(8, 8, 3, 1);
  auto bytes = encode_evt1(s);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_evt1(bad_magic), doctest::Contains("byte offset 0"), ParseError);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  CHECK_THROWS_AS(decode_evt1(truncated), ParseError);

  auto bad_polarity = bytes;
  bad_polarity[36 + 14 + 12] = 0;  // second record's polarity byte
  CHECK_THROWS_WITH_AS(decode_evt1(bad_polarity), doctest::Contains("byte offset 50"), ParseError);

  auto bad_x = bytes;
  bad_x[36 + 8] = 200;
  CHECK_THROWS_WITH_AS(decode_evt1(bad_x), doctest::Contains("byte offset 36"), ParseError);
}

TEST_CASE("CSV load, save and error reporting") {
  test_util::TempDir dir("events");
  auto s = test_util::random_slice(16, 12, 200, 3, 0.0, 0.01);
  save_events(s, dir / "a.csv", EventFormat::Csv);
  auto back = load_events(dir / "a.csv", EventFormat::Csv, SensorGeometry{16, 12});
  REQUIRE(back.size() == s.size());
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(back[i] == s[i]);

  CHECK(event_format_for("x/y.csv") == EventFormat::Csv);
  CHECK(event_format_for("x/y.evt") == EventFormat::Binary);

  write_text(dir / "inferred.csv", "t,x,y,p\n0.5,3,7,1\n0.1,9,2,-1\n");
  auto inferred = load_events(dir / "inferred.csv", EventFormat::Csv);
  CHECK(inferred.width() == 10);
  CHECK(inferred.height() == 8);
  CHECK(inferred.t_start() == 0.1);
  CHECK(inferred[0].x == 9);

  write_text(dir / "bad_header.csv", "x,y,t,p\n");
  CHECK_THROWS_WITH_AS(load_events(dir / "bad_header.csv", EventFormat::Csv),
                       doctest::Contains("bad_header.csv:1:"), ParseError);
  write_text(dir / "bad_row.csv", "t,x,y,p\n0.1,1,1,1\n0.2,1,,1\n");
  CHECK_THROWS_WITH_AS(load_events(dir / "bad_row.csv", EventFormat::Csv),
                       doctest::Contains("bad_row.csv:3:"), ParseError);
  write_text(dir / "bad_pol.csv", "t,x,y,p\n0.1,1,1,0\n");
  CHECK_THROWS_WITH_AS(load_events(dir / "bad_pol.csv", EventFormat::Csv),
                       doctest::Contains(":2: polarity"), ParseError);
  write_text(dir / "outside.csv", "t,x,y,p\n0.1,1,1,1\n0.2,20,1,1\n");
  CHECK_THROWS_WITH_AS(load_events(dir / "outside.csv", EventFormat::Csv, SensorGeometry{16, 12}),
                       doctest::Contains(":3:"), ParseError);
  CHECK_THROWS_AS(load_events(dir / "missing.csv", EventFormat::Csv), ParseError);
}

TEST_CASE("voxel grid matches the interpolation oracle and conserves mass") {
  auto s = test_util::random_slice(9, 7, 800, 11, 1.0, 2.0);
  for (int bins : {1, 2, 5, 15}) {
    auto g = build_voxel_grid(s, bins);
    auto oracle = voxel_oracle(s, bins);
    REQUIRE(g.data.size() == oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(g.data[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
    CHECK(g.total() == doctest::Approx(800.0).epsilon(1e-12));
    for (double v : g.data) CHECK(v >= 0.0);
  }
}

TEST_CASE("voxel grid edge cases") {
  EventSlice single(3, 3, 0.5, 0.5, {{0.5, 1, 1, 1}, {0.5, 2, 2, -1}});
  CHECK_THROWS_AS(build_voxel_grid(single, 2), std::invalid_argument);
  auto g = build_voxel_grid(single, 1);
  CHECK(g.total() == 2.0);
  CHECK(g.at(0, 1, 1) == 1.0);
  CHECK_THROWS_AS(build_voxel_grid(single, 0), std::invalid_argument);

  EventSlice empty(3, 3, 0, 1, {});
  CHECK(build_voxel_grid(empty, 4).total() == 0.0);

  // An event exactly on a bin center lands in that bin only.
  EventSlice centered(2, 1, 0, 1, {{0.375, 1, 0, 1}});
  auto c = build_voxel_grid(centered, 4);
  CHECK(c.at(1, 0, 1) == 1.0);
  CHECK(c.at(0, 0, 1) == 0.0);
  CHECK(c.at(2, 0, 1) == 0.0);
}
