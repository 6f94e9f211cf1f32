#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "trajcm/common.hpp"
#include "trajcm/events.hpp"
#include "trajcm/flow.hpp"

namespace trajcm {

enum class MotionKind { Constant, Circular, Bezier };

/// Scene motion over normalized time [0, 1].
struct MotionModel {
  MotionKind kind = MotionKind::Constant;
  Vec2 velocity;              ///< Constant: displacement per unit time
  Vec2 center;                ///< Circular: rotation center
  double angular_rate = 0.0;  ///< Circular: radians per unit time
  std::vector<Vec2> bezier;   ///< Bezier: control offsets 1..n (offset 0 pinned at zero)

  /// Displacement at time t of the scene point that is at p0 at time 0.
  Vec2 displacement(const Vec2& p0, double t) const;
};

struct SceneSpec {
  int width = 64;
  int height = 64;
  MotionModel motion;
  int points = 200;
  double rate = 100.0;                 ///< events per point per unit time
  double noise = 0.0;                  ///< fraction of all events that are noise
  std::optional<int> noise_count;      ///< explicit noise event count
  double region_radius = 0.0;          ///< > 0: seeds within this radius of region_center
  std::optional<Vec2> region_center;   ///< defaults to the motion center or the image center
  bool keep_inside = true;             ///< reject seeds whose curve leaves the image
  double contrast_threshold = 0.2;     ///< informational
  double t_start = 0.0;                ///< seconds
  double duration = 1.0;               ///< seconds spanned by normalized time [0, 1]
  int gt_times = 6;                    ///< ground-truth maps at k / gt_times, k = 1..gt_times
  double mask_radius = 3.0;            ///< GT valid within this distance of a seed
};

/// Parses "key=value" lines ('#' starts a comment). Throws ParseError with
/// "<source>:<line>: ..." on unknown keys or invalid values.
SceneSpec parse_scene_spec(std::istream& in, const std::string& source = "<spec>");

/// Throws std::invalid_argument for inconsistent specs.
void validate_scene_spec(const SceneSpec& spec);

struct GroundTruth {
  std::vector<FlowMap> maps;  ///< invalid pixels are NaN
};

struct SyntheticScene {
  EventSlice events;
  GroundTruth gt;
  std::vector<Vec2> seeds;                 ///< texture point positions at t = 0
  std::vector<std::int32_t> event_source;  ///< generating seed per event in slice order, -1 for noise
};

/// Each seed emits events at Poisson times along its motion curve, at the
/// rounded curve position, with a fixed polarity alternating between seeds.
/// Noise events are uniform in space and time. Throws std::invalid_argument
/// for an invalid or degenerate spec.
SyntheticScene generate_events(const SceneSpec& spec, std::uint64_t seed);

/// Dense GT displacement from 0 to t; valid near seeds and where the moved
/// pixel stays on the image.
FlowMap ground_truth_map(const SceneSpec& spec, std::span<const Vec2> seeds, double t);

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

/// Rigid transform that maps camera-frame coordinates into the object frame.
struct RigidPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

struct RigidFlow {
  std::vector<Vec2> flow;
  std::vector<std::uint8_t> valid;
};

/// pi(T P) - pi(P) with T = pose_t1^-1 * pose_t, the transform from the
/// camera frame at t to the one at t+1 through the shared object frame.
/// Points whose depth is not positive after the transform are invalid.
/// Throws std::invalid_argument for non-positive input depth or a rotation
/// that is not orthonormal to 1e-9.
RigidFlow rigid_gt_flow(std::span<const Eigen::Vector3d> points, const RigidPose& pose_t,
                        const RigidPose& pose_t1, const Intrinsics& intrinsics);

}  // namespace trajcm
