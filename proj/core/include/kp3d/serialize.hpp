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

#include <filesystem>
#include <initializer_list>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "kp3d/cloud.hpp"
#include "kp3d/geom3d.hpp"

namespace kp3d {

using Json = nlohmann::json;

/// Throws kConfiguration if `j` is not an object or has a key outside `allowed`.
void expect_keys(const Json& j, std::initializer_list<std::string_view> allowed, std::string_view context);

Json read_json(const std::filesystem::path& path);
/// Pretty-printed with sorted keys and a trailing newline.
void write_json(const std::filesystem::path& path, const Json& j);

void to_json(Json& j, const Box3D& b);
void from_json(const Json& j, Box3D& b);
void to_json(Json& j, const RigidTransform& t);
void from_json(const Json& j, RigidTransform& t);
void to_json(Json& j, const TransformParams& t);
void from_json(const Json& j, TransformParams& t);
void to_json(Json& j, const CameraModel& c);
void from_json(const Json& j, CameraModel& c);
void to_json(Json& j, const PaintSource& s);
void from_json(const Json& j, PaintSource& s);
void to_json(Json& j, const AxisRange& r);
void from_json(const Json& j, AxisRange& r);
void to_json(Json& j, const DetectionRange& r);
void from_json(const Json& j, DetectionRange& r);

/// Pose, timestamp and cameras for one frame file. Stored next to the frame
/// as <stem>.json.
struct SweepMeta {
  double timestamp = 0.0;
  RigidTransform pose;
  std::vector<CameraModel> cameras;
};

void to_json(Json& j, const SweepMeta& m);
void from_json(const Json& j, SweepMeta& m);
std::filesystem::path sidecar_path(const std::filesystem::path& frame_path);

}  // namespace kp3d
