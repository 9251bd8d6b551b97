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

#include "kp3d/serialize.hpp"

#include <algorithm>
#include <fstream>

#include "kp3d/error.hpp"

namespace kp3d {

void expect_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view context) {
  if (!j.is_object()) fail(ErrorKind::kConfiguration, std::string(context) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(ErrorKind::kConfiguration, "unknown key '" + key + "' in " + std::string(context));
    }
  }
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return Json::parse(f);
  } catch (const Json::exception& e) {
    fail(ErrorKind::kFormat, path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  f << j.dump(2) << '\n';
  if (!f) fail(ErrorKind::kIo, "failed writing " + path.string());
}

void to_json(Json& j, const Box3D& b) {
  j = Json{{"class", class_name(b.cls)},
           {"box", {b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw}},
           {"score", b.score},
           {"difficulty", difficulty_name(b.difficulty)}};
}

void from_json(const Json& j, Box3D& b) {
  expect_keys(j, {"class", "box", "score", "difficulty"}, "box");
  const auto cls = parse_class(j.at("class").get<std::string>());
  if (!cls) fail(ErrorKind::kFormat, "unknown class " + j.at("class").dump());
  const auto v = j.at("box").get<std::vector<double>>();
  if (v.size() != 7) fail(ErrorKind::kFormat, "box must have 7 values");
  b = Box3D{v[0], v[1], v[2], v[3], v[4], v[5], v[6], *cls, j.value("score", 1.0), Difficulty::kL1};
  if (j.contains("difficulty")) {
    const auto d = parse_difficulty(j.at("difficulty").get<std::string>());
    if (!d) fail(ErrorKind::kFormat, "unknown difficulty " + j.at("difficulty").dump());
    b.difficulty = *d;
  }
}

void to_json(Json& j, const RigidTransform& t) {
  std::vector<double> r;
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 3; ++col) r.push_back(t.rotation()(row, col));
  j = Json{{"rotation", r}, {"translation", {t.translation().x(), t.translation().y(), t.translation().z()}}};
}

void from_json(const Json& j, RigidTransform& t) {
  expect_keys(j, {"rotation", "translation"}, "transform");
  const auto r = j.at("rotation").get<std::vector<double>>();
  const auto tr = j.at("translation").get<std::vector<double>>();
  if (r.size() != 9 || tr.size() != 3) fail(ErrorKind::kFormat, "transform needs 9 rotation and 3 translation values");
  Eigen::Matrix3d rot;
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 3; ++col) rot(row, col) = r[static_cast<std::size_t>(row * 3 + col)];
  t = RigidTransform(rot, Eigen::Vector3d(tr[0], tr[1], tr[2]));
}

void to_json(Json& j, const TransformParams& t) {
  j = Json{{"yaw", t.yaw},     {"pitch", t.pitch}, {"roll", t.roll}, {"scale", t.scale},
           {"tx", t.tx},       {"ty", t.ty},       {"tz", t.tz},     {"flip_y", t.flip_y}};
}

void from_json(const Json& j, TransformParams& t) {
  expect_keys(j, {"yaw", "pitch", "roll", "scale", "tx", "ty", "tz", "flip_y"}, "transform params");
  t = TransformParams{};
  t.yaw = j.value("yaw", 0.0);
  t.pitch = j.value("pitch", 0.0);
  t.roll = j.value("roll", 0.0);
  t.scale = j.value("scale", 1.0);
  t.tx = j.value("tx", 0.0);
  t.ty = j.value("ty", 0.0);
  t.tz = j.value("tz", 0.0);
  t.flip_y = j.value("flip_y", false);
}

void to_json(Json& j, const CameraModel& c) {
  j = Json{{"fx", c.fx},         {"fy", c.fy},          {"cx", c.cx},
           {"cy", c.cy},         {"width", c.width},    {"height", c.height},
           {"extrinsic", c.extrinsic}};
}

void from_json(const Json& j, CameraModel& c) {
  expect_keys(j, {"fx", "fy", "cx", "cy", "width", "height", "extrinsic"}, "camera");
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.extrinsic = j.at("extrinsic").get<RigidTransform>();
  c.validate();
}

void to_json(Json& j, const PaintSource& s) {
  if (const auto* boxes = std::get_if<BoxPaintSource>(&s)) {
    Json list = Json::array();
    for (const Box2D& b : boxes->boxes) {
      list.push_back({{"xmin", b.xmin}, {"ymin", b.ymin}, {"xmax", b.xmax}, {"ymax", b.ymax},
                      {"class_id", b.class_id}, {"score", b.score}});
    }
    j = Json{{"type", "boxes"}, {"camera", boxes->camera}, {"boxes", list}};
  } else {
    const auto& labels = std::get<LabelPaintSource>(s);
    j = Json{{"type", "labels"}, {"camera", labels.camera}, {"labels", labels.labels}};
  }
}

void from_json(const Json& j, PaintSource& s) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "boxes") {
    expect_keys(j, {"type", "camera", "boxes"}, "box paint source");
    BoxPaintSource src;
    src.camera = j.at("camera").get<CameraModel>();
    for (const Json& b : j.at("boxes")) {
      expect_keys(b, {"xmin", "ymin", "xmax", "ymax", "class_id", "score"}, "2D box");
      src.boxes.push_back({b.at("xmin").get<double>(), b.at("ymin").get<double>(), b.at("xmax").get<double>(),
                           b.at("ymax").get<double>(), b.at("class_id").get<std::size_t>(), b.value("score", 1.0)});
    }
    s = std::move(src);
  } else if (type == "labels") {
    expect_keys(j, {"type", "camera", "labels"}, "label paint source");
    LabelPaintSource src;
    src.camera = j.at("camera").get<CameraModel>();
    src.labels = j.at("labels").get<std::vector<std::int32_t>>();
    s = std::move(src);
  } else {
    fail(ErrorKind::kFormat, "unknown paint source type '" + type + "'");
  }
}

void to_json(Json& j, const AxisRange& r) { j = Json::array({r.lo, r.hi}); }

void from_json(const Json& j, AxisRange& r) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2) fail(ErrorKind::kConfiguration, "range must be [lo, hi]");
  r = {v[0], v[1]};
}

void to_json(Json& j, const DetectionRange& r) { j = Json{{"x", r.x}, {"y", r.y}, {"z", r.z}}; }

void from_json(const Json& j, DetectionRange& r) {
  expect_keys(j, {"x", "y", "z"}, "range");
  r.x = j.at("x").get<AxisRange>();
  r.y = j.at("y").get<AxisRange>();
  r.z = j.at("z").get<AxisRange>();
  validate(r);
}

void to_json(Json& j, const SweepMeta& m) {
  j = Json{{"timestamp", m.timestamp}, {"pose", m.pose}, {"cameras", m.cameras}};
}

void from_json(const Json& j, SweepMeta& m) {
  expect_keys(j, {"timestamp", "pose", "cameras"}, "sweep sidecar");
  m.timestamp = j.at("timestamp").get<double>();
  m.pose = j.at("pose").get<RigidTransform>();
  m.cameras = j.value("cameras", std::vector<CameraModel>{});
}

std::filesystem::path sidecar_path(const std::filesystem::path& frame_path) {
  auto p = frame_path;
  p.replace_extension(".json");
  return p;
}

}  // namespace kp3d
