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

#include "kp3d/geom3d.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <tuple>

#include "kp3d/error.hpp"

namespace kp3d {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidParameter: return "invalid parameter";
    case ErrorKind::kSequencing: return "sequencing error";
    case ErrorKind::kConfiguration: return "configuration error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kGeneration: return "generation error";
    case ErrorKind::kIo: return "i/o error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kPipeline: return "pipeline error";
  }
  return "error";
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

}  // namespace

std::string_view class_name(ObjectClass c) {
  switch (c) {
    case ObjectClass::kVehicle: return "vehicle";
    case ObjectClass::kPedestrian: return "pedestrian";
    case ObjectClass::kCyclist: return "cyclist";
  }
  return "unknown";
}

std::optional<ObjectClass> parse_class(std::string_view name) {
  const std::string n = lower(name);
  for (ObjectClass c : kAllClasses) {
    if (n == class_name(c)) return c;
  }
  return std::nullopt;
}

std::string_view difficulty_name(Difficulty d) { return d == Difficulty::kL1 ? "L1" : "L2"; }

std::optional<Difficulty> parse_difficulty(std::string_view name) {
  const std::string n = lower(name);
  if (n == "l1") return Difficulty::kL1;
  if (n == "l2") return Difficulty::kL2;
  return std::nullopt;
}

double wrap_angle(double a) {
  if (a > -kPi && a <= kPi) return a;
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r <= 0.0) r += 2.0 * kPi;
  return r - kPi;
}

std::array<Eigen::Vector2d, 4> Box3D::bev_corners() const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double hl = 0.5 * l, hw = 0.5 * w;
  const std::array<Eigen::Vector2d, 4> local = {
      Eigen::Vector2d(hl, hw), Eigen::Vector2d(-hl, hw), Eigen::Vector2d(-hl, -hw), Eigen::Vector2d(hl, -hw)};
  std::array<Eigen::Vector2d, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {cx + c * local[i].x() - s * local[i].y(), cy + s * local[i].x() + c * local[i].y()};
  }
  return out;
}

std::array<Eigen::Vector3d, 8> Box3D::corners() const {
  const auto bev = bev_corners();
  std::array<Eigen::Vector3d, 8> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {bev[i].x(), bev[i].y(), cz - 0.5 * h};
    out[i + 4] = {bev[i].x(), bev[i].y(), cz + 0.5 * h};
  }
  return out;
}

void validate(const Box3D& b) {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(b.l) || !positive(b.w) || !positive(b.h)) {
    fail(ErrorKind::kInvalidParameter, "box dimensions must be positive");
  }
  if (!std::isfinite(b.cx) || !std::isfinite(b.cy) || !std::isfinite(b.cz)) {
    fail(ErrorKind::kInvalidParameter, "box center must be finite");
  }
  if (!(b.yaw > -kPi && b.yaw <= kPi)) fail(ErrorKind::kInvalidParameter, "box yaw not in (-pi, pi]");
  if (!(b.score >= 0.0 && b.score <= 1.0)) fail(ErrorKind::kInvalidParameter, "box score not in [0, 1]");
}

RigidTransform::RigidTransform(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
  const double ortho = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho <= 1e-9) || !(std::abs(rotation.determinant() - 1.0) <= 1e-9)) {
    fail(ErrorKind::kInvalidParameter, "rotation is not orthonormal with determinant +1");
  }
  if (!translation.allFinite()) fail(ErrorKind::kInvalidParameter, "translation must be finite");
}

RigidTransform RigidTransform::from_yaw(double yaw, const Eigen::Vector3d& translation) {
  return {rotation_zyx(yaw, 0, 0), translation};
}

RigidTransform RigidTransform::compose(const RigidTransform& rhs) const {
  RigidTransform out;
  out.rotation_ = rotation_ * rhs.rotation_;
  out.translation_ = rotation_ * rhs.translation_ + translation_;
  return out;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation_ = rotation_.transpose();
  out.translation_ = -(out.rotation_ * translation_);
  return out;
}

bool TransformParams::is_identity() const {
  return yaw == 0 && pitch == 0 && roll == 0 && scale == 1.0 && tx == 0 && ty == 0 && tz == 0 && !flip_y;
}

Eigen::Matrix3d rotation_zyx(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

BoxTransform BoxTransform::from_params(const TransformParams& t) {
  if (!(t.scale > 0.0) || !std::isfinite(t.scale)) fail(ErrorKind::kInvalidParameter, "transform scale must be > 0");
  BoxTransform out;
  Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
  if (t.flip_y) flip(1, 1) = -1.0;
  out.linear = t.scale * rotation_zyx(t.yaw, t.pitch, t.roll) * flip;
  out.offset = {t.tx, t.ty, t.tz};
  out.scale = t.scale;
  out.mirror = t.flip_y;
  out.heading_offset = t.yaw;
  return out;
}

double BoxTransform::apply_heading(double yaw) const { return wrap_angle((mirror ? -yaw : yaw) + heading_offset); }

Box3D BoxTransform::apply(const Box3D& b) const {
  Box3D out = b;
  const Eigen::Vector3d c = apply(b.center());
  out.cx = c.x();
  out.cy = c.y();
  out.cz = c.z();
  out.l = b.l * scale;
  out.w = b.w * scale;
  out.h = b.h * scale;
  out.yaw = apply_heading(b.yaw);
  return out;
}

BoxTransform BoxTransform::compose(const BoxTransform& rhs) const {
  BoxTransform out;
  out.linear = linear * rhs.linear;
  out.offset = linear * rhs.offset + offset;
  out.scale = scale * rhs.scale;
  out.mirror = mirror != rhs.mirror;
  out.heading_offset = (mirror ? -rhs.heading_offset : rhs.heading_offset) + heading_offset;
  return out;
}

BoxTransform BoxTransform::inverse() const {
  BoxTransform out;
  // linear = s·Q with Q orthogonal, so linear^-1 = linear^T / s^2.
  out.linear = linear.transpose() / (scale * scale);
  out.offset = -(out.linear * offset);
  out.scale = 1.0 / scale;
  out.mirror = mirror;
  out.heading_offset = mirror ? heading_offset : -heading_offset;
  return out;
}

Eigen::Vector3d apply_to_point(const TransformParams& t, const Eigen::Vector3d& p) {
  return BoxTransform::from_params(t).apply(p);
}

Box3D apply_to_box(const TransformParams& t, const Box3D& b) { return BoxTransform::from_params(t).apply(b); }

BoxTransform invert(const TransformParams& t) { return BoxTransform::from_params(t).inverse(); }

double polygon_area(std::span<const Eigen::Vector2d> poly) {
  if (poly.size() < 3) return 0.0;
  double twice = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) twice += cross2(poly[i], poly[(i + 1) % n]);
  return 0.5 * twice;
}

std::vector<Eigen::Vector2d> clip_convex(std::span<const Eigen::Vector2d> subject,
                                         std::span<const Eigen::Vector2d> clip) {
  std::vector<Eigen::Vector2d> out(subject.begin(), subject.end());
  std::vector<Eigen::Vector2d> input;
  for (std::size_t i = 0, n = clip.size(); i < n && !out.empty(); ++i) {
    const Eigen::Vector2d& c1 = clip[i];
    const Eigen::Vector2d edge = clip[(i + 1) % n] - c1;
    input.swap(out);
    out.clear();
    for (std::size_t j = 0, m = input.size(); j < m; ++j) {
      const Eigen::Vector2d& s = input[(j + m - 1) % m];
      const Eigen::Vector2d& e = input[j];
      const double ds = cross2(edge, s - c1);
      const double de = cross2(edge, e - c1);
      // Sign test on the same values used for t keeps ds - de nonzero.
      if (de >= 0.0) {
        if (ds < 0.0) out.push_back(s + (ds / (ds - de)) * (e - s));
        out.push_back(e);
      } else if (ds >= 0.0) {
        out.push_back(s + (ds / (ds - de)) * (e - s));
      }
    }
  }
  return out;
}

double bev_iou(const Box3D& a_in, const Box3D& b_in) {
  // Canonical argument order makes the result exactly symmetric.
  const bool swap = std::tie(b_in.cx, b_in.cy, b_in.l, b_in.w, b_in.yaw) < std::tie(a_in.cx, a_in.cy, a_in.l, a_in.w, a_in.yaw);
  const Box3D& a = swap ? b_in : a_in;
  const Box3D& b = swap ? a_in : b_in;
  if (a.cx == b.cx && a.cy == b.cy && a.l == b.l && a.w == b.w && a.yaw == b.yaw) return 1.0;
  const double area_a = a.l * a.w;
  const double area_b = b.l * b.w;
  // Cheap reject on circumscribed circles.
  const double ra = 0.5 * std::hypot(a.l, a.w), rb = 0.5 * std::hypot(b.l, b.w);
  const double dx = a.cx - b.cx, dy = a.cy - b.cy;
  if (dx * dx + dy * dy >= (ra + rb) * (ra + rb)) return 0.0;

  const auto ca = a.bev_corners();
  const auto cb = b.bev_corners();
  const auto inter_poly = clip_convex(ca, cb);
  const double inter = polygon_area(inter_poly);
  if (!(inter >= 1e-12)) return 0.0;
  const double uni = area_a + area_b - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

bool point_in_box(const Eigen::Vector3d& p, const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = p.x() - b.cx, dy = p.y() - b.cy, dz = p.z() - b.cz;
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.l && std::abs(ly) <= 0.5 * b.w && std::abs(dz) <= 0.5 * b.h;
}

BoxMembership points_in_box(std::span<const Eigen::Vector3d> points, const Box3D& b) {
  BoxMembership out;
  out.mask.resize(points.size(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (point_in_box(points[i], b)) {
      out.mask[i] = 1;
      ++out.count;
    }
  }
  return out;
}

}  // namespace kp3d
