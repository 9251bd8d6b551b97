/* Copyright 2026 The kp3d Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace kp3d {

inline constexpr double kPi = 3.14159265358979323846;

enum class ObjectClass : std::uint8_t { kVehicle = 0, kPedestrian = 1, kCyclist = 2 };
inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<ObjectClass, kNumClasses> kAllClasses = {
    ObjectClass::kVehicle, ObjectClass::kPedestrian, ObjectClass::kCyclist};

enum class Difficulty : std::uint8_t { kL1 = 1, kL2 = 2 };

std::string_view class_name(ObjectClass c);
std::optional<ObjectClass> parse_class(std::string_view name);
std::string_view difficulty_name(Difficulty d);
std::optional<Difficulty> parse_difficulty(std::string_view name);

inline std::size_t class_index(ObjectClass c) { return static_cast<std::size_t>(c); }

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

/// Oriented 7-DoF box. l runs along the heading, w across it.
struct Box3D {
  double cx = 0, cy = 0, cz = 0;
  double l = 1, w = 1, h = 1;
  double yaw = 0;
  ObjectClass cls = ObjectClass::kVehicle;
  double score = 1.0;
  Difficulty difficulty = Difficulty::kL1;

  Eigen::Vector3d center() const { return {cx, cy, cz}; }
  /// BEV footprint corners, counter-clockwise.
  std::array<Eigen::Vector2d, 4> bev_corners() const;
  std::array<Eigen::Vector3d, 8> corners() const;

  bool operator==(const Box3D&) const = default;
};

/// Throws kInvalidParameter if dims are not positive/finite, score is
/// outside [0,1], or yaw is not wrapped.
void validate(const Box3D& b);

/// Proper rigid motion x -> R x + t.
class RigidTransform {
 public:
  RigidTransform() = default;
  /// Throws kInvalidParameter unless rotation is orthonormal with det +1 (1e-9).
  RigidTransform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform from_yaw(double yaw, const Eigen::Vector3d& translation);

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }
  /// (*this ∘ rhs): applies rhs first.
  RigidTransform compose(const RigidTransform& rhs) const;
  RigidTransform inverse() const;

 private:
  Eigen::Matrix3d rotation_ = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation_ = Eigen::Vector3d::Zero();
};

/// Global augmentation parameters. Application order is fixed:
/// flip (y -> -y), rotate Rz(yaw)·Ry(pitch)·Rx(roll), uniform scale,
/// then translate by (tx, ty, tz). Test-time plans only use tz.
struct TransformParams {
  double yaw = 0, pitch = 0, roll = 0;
  double scale = 1.0;
  double tx = 0, ty = 0, tz = 0;
  bool flip_y = false;

  bool is_identity() const;
  bool operator==(const TransformParams&) const = default;
};

Eigen::Matrix3d rotation_zyx(double yaw, double pitch, double roll);

/// General similarity acting on points as x -> linear·x + offset and on
/// headings as yaw -> (mirror ? -yaw : yaw) + heading_offset. Closed under
/// inversion and composition, which TransformParams is not.
struct BoxTransform {
  Eigen::Matrix3d linear = Eigen::Matrix3d::Identity();
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  double scale = 1.0;
  bool mirror = false;
  double heading_offset = 0.0;

  static BoxTransform from_params(const TransformParams& t);

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return linear * p + offset; }
  double apply_heading(double yaw) const;
  Box3D apply(const Box3D& b) const;
  /// (*this ∘ rhs): applies rhs first.
  BoxTransform compose(const BoxTransform& rhs) const;
  BoxTransform inverse() const;
};

Eigen::Vector3d apply_to_point(const TransformParams& t, const Eigen::Vector3d& p);
/// Pitch and roll move the center only; the box stays gravity-aligned.
Box3D apply_to_box(const TransformParams& t, const Box3D& b);
/// Inverse of the params as a BoxTransform. Throws kInvalidParameter on scale <= 0.
BoxTransform invert(const TransformParams& t);

/// Convex polygon area (shoelace), positive for counter-clockwise order.
double polygon_area(std::span<const Eigen::Vector2d> poly);
/// Sutherland-Hodgman clip of `subject` by convex CCW `clip`.
std::vector<Eigen::Vector2d> clip_convex(std::span<const Eigen::Vector2d> subject,
                                         std::span<const Eigen::Vector2d> clip);

/// Intersection over union of the yaw-rotated l×w footprints.
double bev_iou(const Box3D& a, const Box3D& b);

struct BoxMembership {
  std::size_t count = 0;
  std::vector<std::uint8_t> mask;
};

bool point_in_box(const Eigen::Vector3d& p, const Box3D& b);
BoxMembership points_in_box(std::span<const Eigen::Vector3d> points, const Box3D& b);

}  // namespace kp3d
