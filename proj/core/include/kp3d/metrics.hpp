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

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "kp3d/detection.hpp"
#include "kp3d/geom3d.hpp"
#include "kp3d/serialize.hpp"

namespace kp3d {

struct MatchConfig {
  std::array<double, kNumClasses> iou_threshold = {0.7, 0.5, 0.5};
  /// L2 evaluates every ground-truth box; L1 ignores L2-labelled boxes.
  Difficulty difficulty = Difficulty::kL2;
  std::size_t recall_points = 101;

  double threshold(ObjectClass c) const { return iou_threshold[class_index(c)]; }
  void validate() const;
};

struct MatchRecord {
  double score = 0;
  std::optional<std::size_t> gt;  // index into the frame's ground truth
  double iou = 0;
  double heading_error = 0;  // |wrap(yaw_det - yaw_gt)| for true positives
  bool tp() const { return gt.has_value(); }
};

/// Greedy matching of one class in one frame. Detections are visited by
/// descending score; each claims the unmatched ground-truth box with the
/// highest BEV IoU at or above the class threshold. Detections claiming a
/// box excluded by the difficulty filter are dropped from the result.
std::vector<MatchRecord> match_frame(const DetectionSet& dets, std::span<const Box3D> gts, ObjectClass cls,
                                     const MatchConfig& cfg);

/// Number of ground-truth boxes of `cls` that count under the difficulty filter.
std::size_t count_gt(std::span<const Box3D> gts, ObjectClass cls, const MatchConfig& cfg);

/// max(0, 1 - Δθ/π).
inline double heading_weight(double heading_error) { return std::max(0.0, 1.0 - heading_error / kPi); }

struct PrPoint {
  double score = 0, recall = 0, precision = 0, heading_precision = 0;
};

struct ApResult {
  double ap = 0, aph = 0;
  std::size_t num_gt = 0, tp = 0, fp = 0, fn = 0;
  bool no_ground_truth = false;  // AP and APH are reported as 0
  std::vector<PrPoint> pr;       // one point per distinct detection score
};

/// Interpolated AP over cfg.recall_points evenly spaced recall levels.
/// APH replaces precision by heading-weighted precision, enveloped over
/// the same recall.
ApResult ap_aph(std::span<const MatchRecord> records, std::size_t num_gt, const MatchConfig& cfg);

struct ClassReport {
  ObjectClass cls{};
  ApResult result;
};

struct EvalReport {
  Difficulty difficulty = Difficulty::kL2;
  std::array<ClassReport, kNumClasses> classes{};
  double map = 0, maph = 0;  // means over classes with ground truth
  std::size_t frames = 0;
  std::size_t classes_with_gt = 0;
};

/// Frames are defined by the ground truth; a frame missing from the
/// predictions has no detections. Predictions for unknown frames are
/// ignored.
EvalReport evaluate(std::span<const DetectionSet> preds, std::span<const DetectionSet> gts, const MatchConfig& cfg,
                    std::size_t jobs = 1);

void to_json(Json& j, const MatchConfig& c);
void from_json(const Json& j, MatchConfig& c);
/// PR points are included only when `with_pr` is set.
Json report_to_json(const EvalReport& r, bool with_pr = false);

}  // namespace kp3d
