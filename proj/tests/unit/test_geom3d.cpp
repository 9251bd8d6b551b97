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

#include <doctest.h>

#include <cmath>

#include "kp3d/error.hpp"
#include "kp3d/geom3d.hpp"
#include "oracles.hpp"

using namespace kp3d;
using kp3d::testing::iou_by_columns;
using kp3d::testing::iou_by_raster;
using kp3d::testing::random_box;
using kp3d::testing::random_params;

namespace {

Box3D square(double cx, double cy, double side, double yaw = 0) {
  Box3D b;
  b.cx = cx;
  b.cy = cy;
  b.l = b.w = side;
  b.h = 1;
  b.yaw = yaw;
  return b;
}

bool in_range(double yaw) { return yaw > -kPi && yaw <= kPi; }

}  // namespace

TEST_SUITE("geom3d") {
  TEST_CASE("wrap_angle maps into (-pi, pi]") {
    CHECK(wrap_angle(kPi) == kPi);
    CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
    CHECK(wrap_angle(3 * kPi / 2) == doctest::Approx(-kPi / 2));
    CHECK(wrap_angle(0.25) == 0.25);
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) CHECK(in_range(wrap_angle(uniform(rng, -50, 50))));
  }

  TEST_CASE("apply_to_point examples") {
    const Eigen::Vector3d p(1, 2, 3);
    CHECK(apply_to_point(TransformParams{}, p) == p);
    TransformParams q;
    q.yaw = kPi / 2;
    const Eigen::Vector3d r = apply_to_point(q, {1, 0, 0});
    CHECK(r.x() == doctest::Approx(0).epsilon(1e-12));
    CHECK(r.y() == doctest::Approx(1));
    TransformParams s;
    s.scale = 1.05;
    s.tz = 0.2;
    CHECK(apply_to_point(s, {0, 0, 1}).z() == doctest::Approx(1.25));
  }

  TEST_CASE("apply_to_point order: flip, rotate, scale, translate") {
    TransformParams t;
    t.flip_y = true;
    t.yaw = kPi / 2;
    t.scale = 2;
    t.tx = 1;
    // (0, 1, 0) -flip-> (0, -1, 0) -rot-> (1, 0, 0) -scale-> (2, 0, 0) -shift-> (3, 0, 0)
    const Eigen::Vector3d r = apply_to_point(t, {0, 1, 0});
    CHECK(r.x() == doctest::Approx(3));
    CHECK(std::abs(r.y()) < 1e-12);
  }

  TEST_CASE("apply_to_box examples") {
    Box3D b = square(1, 2, 4, 0.3);
    b.l = 4;
    CHECK(apply_to_box(TransformParams{}, b) == b);
    TransformParams half;
    half.yaw = kPi;
    CHECK(apply_to_box(half, b).yaw == doctest::Approx(0.3 - kPi));
    TransformParams shrink;
    shrink.scale = 0.95;
    CHECK(apply_to_box(shrink, b).l == doctest::Approx(3.8));
    TransformParams flip;
    flip.flip_y = true;
    const Box3D f = apply_to_box(flip, b);
    CHECK(f.yaw == doctest::Approx(-0.3));
    CHECK(f.cy == doctest::Approx(-2));
  }

  TEST_CASE("pitch and roll move only the center") {
    TransformParams t;
    t.pitch = 0.1;
    t.roll = -0.2;
    Box3D b = square(3, 0, 2, 0.7);
    const Box3D r = apply_to_box(t, b);
    CHECK(r.yaw == doctest::Approx(0.7));
    CHECK(r.l == b.l);
    CHECK((r.center() - b.center()).norm() > 0.1);
  }

  TEST_CASE("invert examples") {
    const BoxTransform id = invert(TransformParams{});
    CHECK(id.linear.isApprox(Eigen::Matrix3d::Identity()));
    CHECK(id.offset.norm() == 0.0);
    TransformParams t;
    t.yaw = 0.4;
    const BoxTransform inv = invert(t);
    CHECK(inv.heading_offset == doctest::Approx(-0.4));
    CHECK(inv.apply(Eigen::Vector3d(std::cos(0.4), std::sin(0.4), 0)).isApprox(Eigen::Vector3d(1, 0, 0), 1e-12));
    TransformParams bad;
    bad.scale = 0;
    CHECK_THROWS_AS(invert(bad), Error);
  }

  TEST_CASE("invert roundtrip on 1000 random boxes") {
    Rng rng(11);
    double worst_center = 0, worst_yaw = 0;
    for (int i = 0; i < 1000; ++i) {
      const TransformParams t = random_params(rng);
      const Box3D b = random_box(rng, 50);
      const Box3D back = invert(t).apply(apply_to_box(t, b));
      worst_center = std::max(worst_center, (back.center() - b.center()).norm());
      worst_yaw = std::max(worst_yaw, std::abs(wrap_angle(back.yaw - b.yaw)));
      CHECK(in_range(back.yaw));
    }
    CHECK(worst_center < 1e-9);
    CHECK(worst_yaw < 1e-9);
  }

  TEST_CASE("compose(invert(t), t) is identity on points") {
    Rng rng(12);
    for (int i = 0; i < 200; ++i) {
      const TransformParams t = random_params(rng);
      const BoxTransform f = BoxTransform::from_params(t);
      const BoxTransform id = invert(t).compose(f);
      const Eigen::Vector3d p(uniform(rng, -20, 20), uniform(rng, -20, 20), uniform(rng, -3, 3));
      CHECK((id.apply(p) - p).norm() < 1e-9);
      CHECK(std::abs(wrap_angle(id.apply_heading(0.3) - 0.3)) < 1e-12);
    }
  }

  TEST_CASE("RigidTransform validation and group laws") {
    Eigen::Matrix3d skew = Eigen::Matrix3d::Identity();
    skew(0, 1) = 0.1;
    CHECK_THROWS_AS(RigidTransform(skew, Eigen::Vector3d::Zero()), Error);
    CHECK_THROWS_AS(RigidTransform(-Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero()), Error);
    const RigidTransform a = RigidTransform::from_yaw(0.3, {1, 2, 3});
    const RigidTransform b = RigidTransform::from_yaw(-1.1, {0, -4, 1});
    const Eigen::Vector3d p(0.5, -0.25, 2);
    CHECK((a.compose(b).apply(p) - a.apply(b.apply(p))).norm() < 1e-12);
    CHECK((a.inverse().compose(a).apply(p) - p).norm() < 1e-12);
  }

  TEST_CASE("bev_iou examples") {
    const Box3D a = square(0, 0, 2);
    CHECK(bev_iou(a, a) == 1.0);
    CHECK(bev_iou(a, square(1, 0, 2)) == doctest::Approx(2.0 / 6.0).epsilon(1e-12));
    CHECK(bev_iou(a, square(5, 0, 2)) == 0.0);
    const Box3D rot = square(0, 0, 2, kPi / 4);
    const double corner = (std::sqrt(2.0) - 1) * (std::sqrt(2.0) - 1);
    const double inter = 4 - 4 * corner;
    const double exact = inter / (8 - inter);
    CHECK(bev_iou(a, rot) == doctest::Approx(exact).epsilon(1e-12));
    CHECK(std::abs(bev_iou(a, rot) - iou_by_raster(a, rot, 4000)) < 1e-3);
    // Touching edges share no area.
    CHECK(bev_iou(a, square(2, 0, 2)) == 0.0);
  }

  TEST_CASE("bev_iou properties on random pairs") {
    Rng rng(21);
    for (int i = 0; i < 500; ++i) {
      Box3D a = random_box(rng, 3), b = random_box(rng, 3);
      const double ab = bev_iou(a, b), ba = bev_iou(b, a);
      CHECK(std::abs(ab - ba) < 1e-12);
      CHECK(ab >= 0.0);
      CHECK(ab <= 1.0);
      CHECK(bev_iou(a, a) == 1.0);
      CHECK(std::abs(ab - iou_by_columns(a, b, 2000)) < 1e-3);
      TransformParams t;
      t.yaw = uniform(rng, -kPi, kPi);
      t.tx = uniform(rng, -10, 10);
      t.ty = uniform(rng, -10, 10);
      t.flip_y = bernoulli(rng, 0.5);
      CHECK(std::abs(bev_iou(apply_to_box(t, a), apply_to_box(t, b)) - ab) < 1e-9);
    }
  }

  TEST_CASE("points_in_box") {
    Box3D b = square(1, 1, 2, kPi / 4);
    b.l = 4;
    b.cz = 0.5;
    CHECK(point_in_box(b.center(), b));
    const Eigen::Vector3d along(std::cos(kPi / 4), std::sin(kPi / 4), 0);
    CHECK_FALSE(point_in_box(b.center() + (2 + 1e-9) * along, b));
    CHECK(point_in_box(b.center() + (2 - 1e-9) * along, b));
    // Brute force against the inverse-transform definition near a corner.
    Rng rng(5);
    std::vector<Eigen::Vector3d> pts;
    const auto corner = b.bev_corners()[0];
    for (int i = 0; i < 2000; ++i) {
      pts.emplace_back(corner.x() + uniform(rng, -0.2, 0.2), corner.y() + uniform(rng, -0.2, 0.2),
                       uniform(rng, -0.2, 1.2));
    }
    const BoxMembership m = points_in_box(pts, b);
    const RigidTransform to_world = RigidTransform::from_yaw(b.yaw, b.center());
    std::size_t expected = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Eigen::Vector3d q = to_world.inverse().apply(pts[i]);
      const bool inside = std::abs(q.x()) <= b.l / 2 && std::abs(q.y()) <= b.w / 2 && std::abs(q.z()) <= b.h / 2;
      expected += inside;
      CHECK(static_cast<bool>(m.mask[i]) == inside);
    }
    CHECK(m.count == expected);
    CHECK(expected > 0);
  }

  TEST_CASE("validate rejects bad boxes") {
    Box3D b = square(0, 0, 1);
    CHECK_NOTHROW(validate(b));
    b.l = 0;
    CHECK_THROWS_AS(validate(b), Error);
    b = square(0, 0, 1);
    b.score = 1.5;
    CHECK_THROWS_AS(validate(b), Error);
    b = square(0, 0, 1, 4.0);
    CHECK_THROWS_AS(validate(b), Error);
  }

  TEST_CASE("class and difficulty names") {
    for (ObjectClass c : kAllClasses) CHECK(parse_class(class_name(c)) == c);
    CHECK(parse_class("Vehicle") == ObjectClass::kVehicle);
    CHECK_FALSE(parse_class("truck"));
    CHECK(parse_difficulty("L2") == Difficulty::kL2);
    CHECK_FALSE(parse_difficulty("L3"));
  }
}
