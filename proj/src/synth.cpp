#include "trajcm/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "trajcm/trajectory.hpp"

namespace trajcm {
namespace {

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<double> parse_numbers(const std::string& text, char sep) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size() || item.empty()) {
      throw std::invalid_argument("'" + item + "' is not a number");
    }
    out.push_back(v);
  }
  return out;
}

double parse_one(const std::string& text) {
  const auto v = parse_numbers(text, ',');
  if (v.size() != 1 || !std::isfinite(v[0])) throw std::invalid_argument("expected one finite number");
  return v[0];
}

int parse_int(const std::string& text) {
  const double v = parse_one(text);
  if (v != std::floor(v) || std::abs(v) > 1e9) throw std::invalid_argument("expected an integer");
  return static_cast<int>(v);
}

Vec2 parse_vec2(const std::string& text) {
  const auto v = parse_numbers(text, ',');
  if (v.size() != 2 || !std::isfinite(v[0]) || !std::isfinite(v[1])) {
    throw std::invalid_argument("expected 'x,y'");
  }
  return {v[0], v[1]};
}

bool inside_image(const Vec2& p, int width, int height) {
  return p.x >= 0.0 && p.x <= width - 1 && p.y >= 0.0 && p.y <= height - 1;
}

Vec2 region_center(const SceneSpec& spec) {
  if (spec.region_center) return *spec.region_center;
  if (spec.motion.kind == MotionKind::Circular) return spec.motion.center;
  return {0.5 * (spec.width - 1), 0.5 * (spec.height - 1)};
}

}  // namespace

Vec2 MotionModel::displacement(const Vec2& p0, double t) const {
  switch (kind) {
    case MotionKind::Constant:
      return velocity * t;
    case MotionKind::Circular: {
      const double a = angular_rate * t;
      const double c = std::cos(a);
      const double s = std::sin(a);
      const Vec2 r = p0 - center;
      return Vec2{c * r.x - s * r.y, s * r.x + c * r.y} - r;
    }
    case MotionKind::Bezier: {
      const auto g = eval_basis(Basis{BasisKind::Bezier, static_cast<int>(bezier.size())}, t);
      Vec2 d;
      for (std::size_t j = 0; j < bezier.size(); ++j) d += g[j + 1] * bezier[j];
      return d;
    }
  }
  return {};
}

SceneSpec parse_scene_spec(std::istream& in, const std::string& source) {
  SceneSpec spec;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    auto fail = [&](const std::string& msg) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": " + msg);
    };
    if (eq == std::string::npos) fail("expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "width") {
        spec.width = parse_int(value);
        if (spec.width < 1 || spec.width > 65536) fail("width must be in 1..65536");
      } else if (key == "height") {
        spec.height = parse_int(value);
        if (spec.height < 1 || spec.height > 65536) fail("height must be in 1..65536");
      } else if (key == "motion") {
        if (value == "constant") spec.motion.kind = MotionKind::Constant;
        else if (value == "circular") spec.motion.kind = MotionKind::Circular;
        else if (value == "bezier") spec.motion.kind = MotionKind::Bezier;
        else fail("motion must be constant, circular or bezier");
      } else if (key == "velocity") {
        spec.motion.velocity = parse_vec2(value);
      } else if (key == "center") {
        spec.motion.center = parse_vec2(value);
      } else if (key == "angular_rate") {
        spec.motion.angular_rate = parse_one(value);
      } else if (key == "bezier") {
        spec.motion.bezier.clear();
        std::stringstream ss(value);
        std::string pair;
        while (std::getline(ss, pair, ';')) spec.motion.bezier.push_back(parse_vec2(pair));
      } else if (key == "points") {
        spec.points = parse_int(value);
        if (spec.points < 0) fail("points must be >= 0");
      } else if (key == "rate") {
        spec.rate = parse_one(value);
        if (spec.rate < 0.0) fail("rate must be >= 0");
      } else if (key == "noise") {
        spec.noise = parse_one(value);
        if (spec.noise < 0.0 || spec.noise > 1.0) fail("noise must be in [0, 1]");
      } else if (key == "noise_count") {
        spec.noise_count = parse_int(value);
        if (*spec.noise_count < 0) fail("noise_count must be >= 0");
      } else if (key == "region_radius") {
        spec.region_radius = parse_one(value);
        if (spec.region_radius < 0.0) fail("region_radius must be >= 0");
      } else if (key == "region_center") {
        spec.region_center = parse_vec2(value);
      } else if (key == "keep_inside") {
        spec.keep_inside = parse_int(value) != 0;
      } else if (key == "contrast_threshold") {
        spec.contrast_threshold = parse_one(value);
      } else if (key == "t_start") {
        spec.t_start = parse_one(value);
      } else if (key == "duration") {
        spec.duration = parse_one(value);
        if (!(spec.duration > 0.0)) fail("duration must be > 0");
      } else if (key == "gt_times") {
        spec.gt_times = parse_int(value);
        if (spec.gt_times < 1) fail("gt_times must be >= 1");
      } else if (key == "mask_radius") {
        spec.mask_radius = parse_one(value);
        if (spec.mask_radius < 0.0) fail("mask_radius must be >= 0");
      } else {
        fail("unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument& e) {
      fail(key + ": " + e.what());
    }
  }
  return spec;
}

void validate_scene_spec(const SceneSpec& spec) {
  if (spec.width < 1 || spec.height < 1) throw std::invalid_argument("scene: empty image");
  if (spec.points < 0 || !(spec.rate >= 0.0)) throw std::invalid_argument("scene: negative texture");
  if (!(spec.noise >= 0.0 && spec.noise <= 1.0)) throw std::invalid_argument("scene: noise must be in [0, 1]");
  if (!(spec.duration > 0.0) || !std::isfinite(spec.t_start)) throw std::invalid_argument("scene: bad interval");
  if (spec.gt_times < 1) throw std::invalid_argument("scene: gt_times must be >= 1");
  if (spec.motion.kind == MotionKind::Bezier && spec.motion.bezier.empty()) {
    throw std::invalid_argument("scene: bezier motion needs control offsets");
  }
  if (spec.region_radius > 0.0 && !inside_image(region_center(spec), spec.width, spec.height)) {
    throw std::invalid_argument("scene: seed region center outside the image");
  }
  const bool texture = spec.points > 0 && spec.rate > 0.0;
  const bool noise = spec.noise_count ? *spec.noise_count > 0 : spec.noise > 0.0;
  if (!texture && !noise) throw std::invalid_argument("scene: no texture and no noise (degenerate)");
  if (spec.noise == 1.0 && !spec.noise_count) {
    throw std::invalid_argument("scene: noise=1 requires noise_count");
  }
}

FlowMap ground_truth_map(const SceneSpec& spec, std::span<const Vec2> seeds, double t) {
  FlowMap map(spec.width, spec.height, t);
  const double r2 = spec.mask_radius * spec.mask_radius;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const Vec2 p{double(x), double(y)};
      const bool near = std::any_of(seeds.begin(), seeds.end(), [&](const Vec2& s) {
        const Vec2 d = s - p;
        return d.x * d.x + d.y * d.y <= r2;
      });
      const Vec2 d = spec.motion.displacement(p, t);
      map.at(x, y) = (near && inside_image(p + d, spec.width, spec.height)) ? d : FlowMap::invalid();
    }
  }
  return map;
}

SyntheticScene generate_events(const SceneSpec& spec, std::uint64_t seed) {
  validate_scene_spec(spec);
  std::mt19937_64 rng(seed);
  SyntheticScene scene;

  // Seeds.
  const Vec2 center = region_center(spec);
  constexpr int kCurveSamples = 64;
  const long max_attempts = 1000L * std::max(1, spec.points);
  long attempts = 0;
  while (static_cast<int>(scene.seeds.size()) < (spec.rate > 0.0 ? spec.points : 0)) {
    if (++attempts > max_attempts) throw std::invalid_argument("scene: cannot place seeds inside the image");
    Vec2 p;
    if (spec.region_radius > 0.0) {
      const double r = spec.region_radius * std::sqrt(uniform01(rng));
      const double a = 2.0 * std::numbers::pi * uniform01(rng);
      p = center + Vec2{r * std::cos(a), r * std::sin(a)};
    } else {
      p = {uniform01(rng) * (spec.width - 1), uniform01(rng) * (spec.height - 1)};
    }
    bool ok = inside_image(p, spec.width, spec.height);
    for (int i = 1; ok && spec.keep_inside && i <= kCurveSamples; ++i) {
      ok = inside_image(p + spec.motion.displacement(p, double(i) / kCurveSamples), spec.width, spec.height);
    }
    if (ok) scene.seeds.push_back(p);
  }

  // Texture events along each curve at Poisson times.
  struct Tagged {
    double tau;
    Event e;
    std::int32_t source;
  };
  std::vector<Tagged> tagged;
  for (std::size_t i = 0; i < scene.seeds.size(); ++i) {
    const std::int8_t polarity = i % 2 == 0 ? 1 : -1;
    double tau = 0.0;
    while (true) {
      tau += -std::log(1.0 - uniform01(rng)) / spec.rate;
      if (tau > 1.0) break;
      const Vec2 p = scene.seeds[i] + spec.motion.displacement(scene.seeds[i], tau);
      const double px = std::floor(p.x + 0.5);
      const double py = std::floor(p.y + 0.5);
      if (px < 0 || py < 0 || px >= spec.width || py >= spec.height) continue;
      tagged.push_back({tau, {0.0, static_cast<std::uint16_t>(px), static_cast<std::uint16_t>(py), polarity},
                        static_cast<std::int32_t>(i)});
    }
  }

  std::size_t n_noise = 0;
  if (spec.noise_count) {
    n_noise = static_cast<std::size_t>(*spec.noise_count);
  } else if (spec.noise > 0.0) {
    n_noise = static_cast<std::size_t>(std::llround(tagged.size() * spec.noise / (1.0 - spec.noise)));
  }
  for (std::size_t i = 0; i < n_noise; ++i) {
    const auto x = static_cast<std::uint16_t>(std::min<double>(spec.width - 1, std::floor(uniform01(rng) * spec.width)));
    const auto y = static_cast<std::uint16_t>(std::min<double>(spec.height - 1, std::floor(uniform01(rng) * spec.height)));
    const double tau = uniform01(rng);
    const std::int8_t p = (rng() >> 63) ? 1 : -1;
    tagged.push_back({tau, {0.0, x, y, p}, -1});
  }

  std::stable_sort(tagged.begin(), tagged.end(), [](const Tagged& a, const Tagged& b) { return a.tau < b.tau; });
  std::vector<Event> events;
  events.reserve(tagged.size());
  scene.event_source.reserve(tagged.size());
  const double t_end = spec.t_start + spec.duration;
  for (Tagged& tg : tagged) {
    tg.e.t = std::min(t_end, spec.t_start + tg.tau * spec.duration);
    events.push_back(tg.e);
    scene.event_source.push_back(tg.source);
  }
  scene.events = EventSlice(spec.width, spec.height, spec.t_start, t_end, std::move(events));

  for (int k = 1; k <= spec.gt_times; ++k) {
    scene.gt.maps.push_back(ground_truth_map(spec, scene.seeds, double(k) / spec.gt_times));
  }
  return scene;
}

RigidFlow rigid_gt_flow(std::span<const Eigen::Vector3d> points, const RigidPose& pose_t,
                        const RigidPose& pose_t1, const Intrinsics& intrinsics) {
  for (const RigidPose* pose : {&pose_t, &pose_t1}) {
    const double err = (pose->rotation.transpose() * pose->rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (!(err <= 1e-9) || pose->rotation.determinant() < 0.0) {
      throw std::invalid_argument("rigid_gt_flow: pose rotation is not orthonormal");
    }
  }
  // T = pose_t1^-1 * pose_t
  const Eigen::Matrix3d r_inv = pose_t1.rotation.transpose();
  const Eigen::Matrix3d rotation = r_inv * pose_t.rotation;
  const Eigen::Vector3d translation = r_inv * (pose_t.translation - pose_t1.translation);

  auto project = [&](const Eigen::Vector3d& p) {
    return Vec2{intrinsics.fx * p.x() / p.z() + intrinsics.cx, intrinsics.fy * p.y() / p.z() + intrinsics.cy};
  };
  RigidFlow out;
  out.flow.resize(points.size());
  out.valid.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector3d& p = points[i];
    if (!(p.z() > 0.0)) throw std::invalid_argument("rigid_gt_flow: point with non-positive depth");
    const Eigen::Vector3d moved = rotation * p + translation;
    if (moved.z() > 0.0) {
      out.flow[i] = project(moved) - project(p);
      out.valid[i] = 1;
    } else {
      out.flow[i] = FlowMap::invalid();
      out.valid[i] = 0;
    }
  }
  return out;
}

}  // namespace trajcm
