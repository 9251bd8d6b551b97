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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kp3d/cloud.hpp"
#include "kp3d/detection.hpp"
#include "kp3d/geom3d.hpp"
#include "kp3d/serialize.hpp"

namespace kp3d {

/// Detector input. `annotations` carries ground truth for synthetic
/// stand-in detectors and is transformed alongside the points; `tag`
/// distinguishes repeated calls on the same frame for seeded noise.
struct Frame {
  std::string id;
  PointCloud points;
  std::vector<Box3D> annotations;
  std::uint64_t tag = 0;
};

using Detector = std::function<DetectionSet(const Frame&)>;

// ---------------------------------------------------------------------------
// Test-time augmentation plan.

enum class TtaPolicy {
  kOneAtATime,  // each yaw alone, plus each yaw with one other family member
  kFullCross,   // yaw × pitch × roll × scale × tz, each family including its neutral value
  kYawOnly,
};

struct TtaFamilies {
  std::vector<double> yaw_deg = {0,     22.5,   -22.5, 45,   -45,   67.5,   -67.5, 90,   -90,
                                 112.5, -112.5, 135,   -135, 157.5, -157.5, 180};
  std::vector<double> pitch_deg = {0.5, -0.5};
  std::vector<double> roll_deg = {0.5, -0.5};
  std::vector<double> scale = {0.95, 1.05};
  std::vector<double> tz = {0.2, -0.2};
};

struct TtaPlan {
  std::vector<TransformParams> transforms;

  static TtaPlan identity();
  static TtaPlan build(const TtaFamilies& families, TtaPolicy policy = TtaPolicy::kOneAtATime);
  static TtaPlan make_default() { return build(TtaFamilies{}); }
  /// Requires the identity transform and positive scales.
  void validate() const;
};

std::string_view policy_name(TtaPolicy p);
TtaPolicy parse_policy(std::string_view name);

// ---------------------------------------------------------------------------
// Fusion thresholds.

struct ClassThresholds {
  double iou = 0.55;  // box-associating BEV IoU
  double s1 = 0.0;    // pre-fusion skip
  double s2 = 0.0;    // post-fusion skip
  bool operator==(const ClassThresholds&) const = default;
};

struct FusionThresholds {
  std::array<ClassThresholds, kNumClasses> per_class{};

  const ClassThresholds& of(ObjectClass c) const { return per_class[class_index(c)]; }
  ClassThresholds& of(ObjectClass c) { return per_class[class_index(c)]; }
  void validate() const;
  bool operator==(const FusionThresholds&) const = default;
};

/// Fusion thresholds for 3D detection.
FusionThresholds thresholds_3d();
/// Same associating and pre-fusion thresholds with the domain-adaptation post-fusion skip.
FusionThresholds thresholds_domain_adaptation();

void to_json(Json& j, const FusionThresholds& t);
void from_json(const Json& j, FusionThresholds& t);
FusionThresholds load_thresholds(const std::filesystem::path& path);
void save_thresholds(const std::filesystem::path& path, const FusionThresholds& t);

// ---------------------------------------------------------------------------
// Weighted boxes fusion with BEV IoU.

struct WbfOptions {
  std::vector<double> model_weights;  // one per input set; empty means equal
  bool scale_by_models = true;        // multiply by min(models, T) / T
};

/// Fuses detections of one frame from several models (or augmentations).
/// Clusters are formed per class in descending weighted-score order, each
/// box joining the first cluster whose running fused box reaches θ_IoU.
DetectionSet wbf_fuse(std::span<const DetectionSet> sets, const FusionThresholds& thr, const WbfOptions& opts = {});

/// Runs the detector on every transformed copy of the frame and maps each
/// output back through the inverse transform. Set i corresponds to
/// plan.transforms[i].
std::vector<DetectionSet> collect_tta_sets(const Detector& detector, const Frame& frame, const TtaPlan& plan,
                                           std::size_t jobs = 1);
/// collect_tta_sets followed by wbf_fuse, each transform acting as one model.
DetectionSet run_tta(const Detector& detector, const Frame& frame, const TtaPlan& plan, const FusionThresholds& thr,
                     const WbfOptions& opts = {}, std::size_t jobs = 1);

// ---------------------------------------------------------------------------
// Grid search over fusion thresholds.

/// Lattice lo, lo + step, ..., hi; step must divide the range.
struct GridAxis {
  double lo = 0, hi = 0, step = 1;
  std::size_t count() const;
  double value(std::size_t i) const;
};

struct GridSearchSpec {
  GridAxis iou{0.40, 0.80, 0.05};
  GridAxis s1{0.00, 0.25, 0.05};
  GridAxis s2{0.01, 0.20, 0.01};
  std::vector<ObjectClass> classes{kAllClasses.begin(), kAllClasses.end()};
  std::size_t jobs = 1;

  std::size_t lattice_size() const { return iou.count() * s1.count() * s2.count(); }
  void validate() const;
};

struct GridPoint {
  ClassThresholds thresholds;
  double objective = 0;
};

struct GridSearchResult {
  FusionThresholds best;  // classes not searched keep the start thresholds
  std::array<double, kNumClasses> best_objective{};
  std::array<std::vector<GridPoint>, kNumClasses> trace;  // lattice order: iou, s1, s2 (s2 fastest)
};

/// Objective for one class under candidate thresholds; must be deterministic
/// and safe to call concurrently.
using GridObjective = std::function<double(ObjectClass, const ClassThresholds&)>;

/// Exhaustive per-class search. Ties prefer larger θ_IoU, then larger θ_s1,
/// then larger θ_s2.
GridSearchResult grid_search(const GridObjective& objective, const GridSearchSpec& spec,
                             const FusionThresholds& start = {});

void to_json(Json& j, const GridSearchResult& r);

}  // namespace kp3d
