#pragma once

#include <Eigen/Geometry>

#include <span>
#include <string>
#include <vector>

namespace deskbot::sim {

using Vec3 = Eigen::Vector3d;

// A revolute joint. Its frame is parent_frame * T(mount_offset) * R(mount_rotation)
// * R(rotation_axis, angle); the link it drives extends along the local +x axis.
struct JointSpec {
  std::string name;
  int parent = -1;  // index of an earlier joint, -1 for the robot base
  Vec3 rotation_axis = Vec3::UnitZ();
  Vec3 mount_offset = Vec3::Zero();
  Eigen::Quaterniond mount_rotation = Eigen::Quaterniond::Identity();
  double limit_min = -1.5707963267948966;
  double limit_max = 1.5707963267948966;
};

struct FingertipAnchor {
  int joint = 0;
  Vec3 offset = Vec3::Zero();  // in the joint's frame
};

struct RobotModel {
  std::string name;
  std::vector<JointSpec> joints;
  std::vector<double> link_lengths;  // one per joint
  // Exactly two groups (one per end-effector).
  std::vector<std::vector<FingertipAnchor>> fingertip_groups;

  int dof() const { return static_cast<int>(joints.size()); }
  int fingertip_count() const;
  std::vector<double> home_pose() const;  // joint-range midpoints

  // Throws ConfigError when any structural invariant is broken.
  void validate() const;
};

struct JointState {
  std::vector<double> angles;

  bool operator==(const JointState&) const = default;
};

enum class Color { kBlue, kRed, kGreen };

std::string_view color_name(Color c);
// Throws ConfigError on unknown names.
Color parse_color(std::string_view name);

struct SceneObject {
  int id = 0;
  Color color = Color::kBlue;
  Vec3 center = Vec3::Zero();
  double half_extent = 0.04;
};

// Throws ConfigError on non-positive extents or overlapping cubes.
void validate_scene(std::span<const SceneObject> objects);

struct ContactReport {
  // touches[f][o]: fingertip f lies inside object o's expanded box.
  std::vector<std::vector<bool>> touches;
  std::vector<bool> tactile_bits;
};

struct KinematicPose {
  std::vector<Eigen::Isometry3d> link_frames;
  std::vector<Vec3> link_tips;   // frame origin + link_length along local x
  std::vector<Vec3> fingertips;  // group 0 first, then group 1
};

inline constexpr double kDefaultContactRadius = 0.01;

KinematicPose forward_kinematics(const RobotModel& model, const JointState& state);

// Absolute pose command, clamped into the joint limits.
JointState apply_action(const RobotModel& model, const JointState& state,
                        std::span<const double> action);

ContactReport detect_touches(std::span<const Vec3> fingertips,
                             std::span<const SceneObject> objects, double contact_radius);

ContactReport detect_touches(const RobotModel& model, const JointState& state,
                             std::span<const SceneObject> objects,
                             double contact_radius = kDefaultContactRadius);

// Two planar 3-joint arms (0.30/0.25/0.10 m) mounted at (+-0.15, 0.30, arm_height),
// pointing along +y at the home pose, three fingertips per hand.
RobotModel planar_2x3(double arm_height = 0.04);

// 26 joints with +-pi/2 limits. Geometry is a placeholder used for shape tests only.
RobotModel nao26();

// Planar chain about +z starting at the origin. Both fingertip groups sit at the tip,
// so the model satisfies the 6-tactile-bit invariant.
RobotModel planar_chain(std::span<const double> lengths);

// Throws ConfigError for unknown names. Known: "planar-2x3", "nao26".
RobotModel robot_by_name(std::string_view name);

}  // namespace deskbot::sim
