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
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kp3d/cloud.hpp"
#include "kp3d/geom3d.hpp"
#include "kp3d/random.hpp"

namespace kp3d {

struct LabeledFrame {
  std::string id;
  PointCloud points;
  std::vector<Box3D> boxes;
};

struct GtEntry {
  Box3D box;
  PointCloud points;  // all inside box
  std::string source_frame;

  bool operator==(const GtEntry&) const = default;
};

struct GtDatabase {
  std::size_t paint_channels = kDefaultPaintChannels;
  std::array<std::vector<GtEntry>, kNumClasses> entries;

  const std::vector<GtEntry>& of(ObjectClass c) const { return entries[class_index(c)]; }
  std::size_t total() const;
  bool operator==(const GtDatabase&) const = default;
};

/// Crops every ground-truth box's interior points. Boxes with no interior
/// points are kept with empty clouds.
GtDatabase build_gt_database(std::span<const LabeledFrame> frames);

/// Directory layout: index.json plus one frame file per entry under entries/.
void save_gt_database(const GtDatabase& db, const std::filesystem::path& dir);
GtDatabase load_gt_database(const std::filesystem::path& dir);

struct AugmentConfig {
  std::array<std::size_t, kNumClasses> samples_per_class = {6, 8, 10};
  double flip_probability = 0.5;
  AxisRange rotation{-kPi / 4, kPi / 4};
  AxisRange scale{0.95, 1.05};
  std::array<AxisRange, 3> translation = {AxisRange{-0.2, 0.2}, AxisRange{-0.2, 0.2}, AxisRange{-0.2, 0.2}};
  std::uint64_t seed = 0;

  /// Ranges may be zero-width; lo > hi is rejected.
  void validate() const;
};

struct PasteResult {
  PointCloud points;
  std::vector<Box3D> boxes;
  std::array<std::size_t, kNumClasses> placed{};
};

/// Pastes up to the configured number of database samples per class, drawn
/// without replacement. Candidates whose BEV footprint overlaps any existing
/// or already-placed box are skipped.
PasteResult sample_paste(const PointCloud& points, std::span<const Box3D> boxes, const GtDatabase& db,
                         const AugmentConfig& cfg, Rng& rng);

struct AugmentResult {
  PointCloud points;
  std::vector<Box3D> boxes;
  TransformParams applied;
};

/// Draws one flip/rotation/scale/translation tuple and applies it to every
/// point and box.
AugmentResult global_augment(const PointCloud& points, std::span<const Box3D> boxes, const AugmentConfig& cfg,
                             Rng& rng);

PointCloud transform_cloud(const PointCloud& points, const BoxTransform& t);

}  // namespace kp3d
