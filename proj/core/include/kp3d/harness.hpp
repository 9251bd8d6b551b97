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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kp3d/cloud.hpp"
#include "kp3d/ensemble.hpp"
#include "kp3d/heads.hpp"
#include "kp3d/metrics.hpp"
#include "kp3d/serialize.hpp"
#include "kp3d/voxel.hpp"

namespace kp3d {

// ---------------------------------------------------------------------------
// Synthetic scenes. Sizes are plausible priors, not measured statistics.

struct SizePrior {
  double l = 1, w = 1, h = 1;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::array<std::size_t, kNumClasses> counts = {8, 6, 4};
  std::array<SizePrior, kNumClasses> sizes = {SizePrior{4.7, 2.1, 1.7}, SizePrior{0.9, 0.9, 1.7},
                                              SizePrior{1.8, 0.8, 1.7}};
  double size_jitter = 0.2;           // uniform ± fraction of each mean
  double placement = 50.0;            // centers in [-placement, placement]^2 of the current frame
  double min_gap = 0.5;               // clearance between circumscribed footprints (m)
  double point_density = 5.0;         // surface points per m^2 of footprint, per sweep
  double clutter_density = 0.02;      // background points per m^2 of placement area, per sweep
  std::size_t sweeps = kDefaultPastSweeps + 1;
  double sweep_period = kDefaultSweepPeriod;
  std::array<double, 2> ego_velocity = {5.0, 0.0};  // world m/s
  std::size_t max_retries = 1000;     // placement attempts per box
  std::size_t paint_channels = kDefaultPaintChannels;
  bool cameras = true;

  void validate() const;
};

struct Scene {
  std::string id;
  std::vector<Sweep> sweeps;  // oldest first; the last is current
  std::vector<Box3D> boxes;   // current vehicle frame, difficulty assigned
  std::vector<CameraModel> cameras;
  std::vector<PaintSource> paint_sources;
};

/// Ground-truth boxes with at most this many interior points are L2.
inline constexpr std::size_t kL2MaxPoints = 5;

Scene generate_scene(const SceneSpec& spec, std::string id = "scene");

/// Front, left and right pinhole cameras mounted at 1.6 m.
std::vector<CameraModel> default_cameras();

// ---------------------------------------------------------------------------
// Detector stand-ins.

enum class DetectorKind { kOracle, kNoisy, kReplay };

std::string_view detector_kind_name(DetectorKind k);
DetectorKind parse_detector_kind(std::string_view name);

struct NoiseSpec {
  double drop_rate = 0.1;
  double spurious_rate = 0.2;  // probability per ground-truth box of one extra false box
  double center_sigma = 0.15;  // m
  double size_sigma = 0.05;    // relative
  double yaw_sigma = 0.1;      // rad
  double score_mean = 0.75;
  double score_jitter = 0.15;
  double spurious_score_max = 0.6;

  void validate() const;
};

struct DetectorSpec {
  std::string name = "oracle";
  DetectorKind kind = DetectorKind::kOracle;
  std::uint64_t seed = 0;
  NoiseSpec noise;
  std::filesystem::path replay_path;  // .det file or directory

  void validate() const;
};

/// Heads used by the oracle: encode the frame's annotations, decode them back.
struct OracleHeads {
  BevGeometry geometry;
  TargetConfig targets;
  DecodeOptions decode;
};

DetectionSet oracle_detect(const Frame& frame, const OracleHeads& heads);
/// Oracle output perturbed per spec; noise is seeded by (spec.seed, frame id, frame tag).
DetectionSet noisy_detect(const Frame& frame, const OracleHeads& heads, const NoiseSpec& noise, std::uint64_t seed);
/// Replay detectors ignore the points and return stored detections by frame id.
Detector make_detector(const DetectorSpec& spec, const OracleHeads& heads);

/// 64-bit FNV-1a, used for stable seeds and manifest digests.
std::uint64_t fnv1a(std::string_view bytes);

// ---------------------------------------------------------------------------
// End-to-end pipeline.

struct PlotSpec {
  bool enabled = false;
  std::size_t frames = 1;          // first N frames are exported
  std::size_t max_points = 20000;  // scatter subsampling cap
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::size_t frames = 4;
  std::filesystem::path output_dir = "kp3d_out";
  SceneSpec scene;
  DetectionRange detection_range = kInferenceRange;
  VoxelGridSpec voxel;
  std::size_t bev_downsample = 8;
  PaintOptions paint;
  TargetConfig targets;
  DecodeOptions decode;
  std::vector<DetectorSpec> detectors = {DetectorSpec{}};
  bool tta = false;
  TtaPolicy tta_policy = TtaPolicy::kOneAtATime;
  TtaFamilies tta_families;
  FusionThresholds thresholds = thresholds_3d();
  WbfOptions wbf;
  MatchConfig matching;
  PlotSpec plot;

  void validate() const;
};

/// Strict parser: unknown keys raise kConfiguration. Relative paths inside
/// the file resolve against `base_dir`.
PipelineConfig parse_pipeline_config(const Json& j, const std::filesystem::path& base_dir = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
Json pipeline_config_to_json(const PipelineConfig& c);

struct PipelineResult {
  EvalReport final_report;                     // ensemble, with TTA when enabled
  std::optional<EvalReport> ensemble_no_tta;   // present when TTA is enabled
  std::map<std::string, EvalReport> singles;   // each detector alone, no TTA
  std::vector<DetectionSet> predictions;       // final fused sets, frame order
  std::vector<DetectionSet> ground_truth;
  std::vector<std::filesystem::path> artifacts;  // relative to output_dir, sorted
};

/// densify → paint → filter → voxelize → detectors (+TTA) → fusion → eval.
/// Writes per-frame detection and label files, report.json, manifest.json
/// and optional plot data. Stage failures are raised as kPipeline with
/// the stage name and frame id.
PipelineResult run_pipeline(const PipelineConfig& cfg);

// ---------------------------------------------------------------------------
// Plot export.

/// CSV rows: `point,x,y,z` for scatter and `<set>,<class>,<score>,x0,y0,...,x3,y3`
/// for box outlines.
void write_plot_csv(const std::filesystem::path& path, const PointCloud& points,
                    const std::vector<std::pair<std::string, std::vector<Box3D>>>& layers, std::size_t max_points);
/// Top-down SVG of the same data, 1 px = 1/scale m.
void write_plot_svg(const std::filesystem::path& path, const PointCloud& points,
                    const std::vector<std::pair<std::string, std::vector<Box3D>>>& layers, std::size_t max_points,
                    double extent, double scale = 5.0);

// Serialization of harness types.
void to_json(Json& j, const SceneSpec& s);
void from_json(const Json& j, SceneSpec& s);
void to_json(Json& j, const NoiseSpec& s);
void from_json(const Json& j, NoiseSpec& s);
void to_json(Json& j, const VoxelGridSpec& s);
void from_json(const Json& j, VoxelGridSpec& s);

}  // namespace kp3d
