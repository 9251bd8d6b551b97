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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kp3d/geom3d.hpp"

namespace kp3d {

/// Scored boxes for one frame from one model or augmentation.
struct DetectionSet {
  std::string frame_id;
  std::string source;  // origin label, in-memory only
  std::vector<Box3D> boxes;
};

// Detection files hold one whitespace-separated record per box:
//   frame_id class score cx cy cz l w h yaw [difficulty]
// with values printed to 9 significant digits. The trailing difficulty
// column is written for ground-truth label files only.

std::string format_record(std::string_view frame_id, const Box3D& box, bool with_difficulty = false);
void write_detections(const std::filesystem::path& path, std::span<const DetectionSet> sets,
                      bool with_difficulty = false);
/// Groups records by frame id in order of first appearance.
std::vector<DetectionSet> read_detections(const std::filesystem::path& path);
std::vector<DetectionSet> parse_detections(std::string_view text, std::string_view origin = "<memory>");
/// Reads every *.det file in a directory (sorted by name) and merges
/// records of the same frame.
std::vector<DetectionSet> read_detection_dir(const std::filesystem::path& dir);

}  // namespace kp3d
