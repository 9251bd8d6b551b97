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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "kp3d/detection.hpp"
#include "kp3d/geom3d.hpp"
#include "kp3d/voxel.hpp"

namespace kp3d {

/// BEV lattice the heads predict on. Cell (i, j) spans
/// [x0 + i*cell_x, x0 + (i+1)*cell_x) and its center sits at i + 0.5.
struct BevGeometry {
  double x0 = 0, y0 = 0;
  double cell_x = 1, cell_y = 1;
  std::size_t width = 0, height = 0;

  static BevGeometry from_voxels(const VoxelGridSpec& spec, std::size_t downsample);
  /// Continuous position in cell units.
  double to_cell_x(double x) const { return (x - x0) / cell_x; }
  double to_cell_y(double y) const { return (y - y0) / cell_y; }
  bool operator==(const BevGeometry&) const = default;
};

/// Angular bin covering (lo, hi] with its reference heading.
struct OrientationBin {
  double center = 0, lo = 0, hi = 0;
};

struct TargetConfig {
  std::size_t num_classes = kNumClasses;
  int offset_radius = 2;  // (2r+1)^2 offset square
  std::size_t max_objects = 300;
  double weight_offset = 1.0;
  double weight_z = 1.5;
  double weight_size = 0.3;
  double weight_orientation = 1.0;
  double focal_alpha = 2.0;
  double focal_beta = 4.0;
  int min_gaussian_radius = 2;
  double gaussian_min_overlap = 0.1;
  std::vector<OrientationBin> bins = {{-kPi / 2, -kPi, 0.0}, {kPi / 2, 0.0, kPi}};

  void validate() const;
};

/// The five head outputs as planar maps; channel k of a map is the
/// row-major height × width plane starting at k * width * height.
struct HeadMaps {
  std::size_t width = 0, height = 0, num_classes = 0, num_bins = 0;
  std::vector<double> heatmap;      // num_classes planes, values in [0, 1]
  std::vector<double> offset;       // 2 planes, sub-cell (dx, dy) in cells
  std::vector<double> zmap;         // 1 plane, meters
  std::vector<double> size;         // 3 planes (l, w, h), meters
  std::vector<double> orientation_logits;    // 2 per bin: (outside, inside)
  std::vector<double> orientation_residual;  // 2 per bin: (sin, cos) of yaw - bin center

  HeadMaps() = default;
  HeadMaps(std::size_t width, std::size_t height, std::size_t num_classes, std::size_t num_bins);

  std::size_t plane() const { return width * height; }
  std::size_t at(std::size_t channel, std::size_t x, std::size_t y) const { return channel * plane() + y * width + x; }
  bool same_shape(const HeadMaps& o) const {
    return width == o.width && height == o.height && num_classes == o.num_classes && num_bins == o.num_bins;
  }
  bool operator==(const HeadMaps&) const = default;
};

struct EncodedTargets {
  HeadMaps maps;
  std::vector<std::uint8_t> offset_mask;  // cells supervised by the offset head
  std::vector<std::uint8_t> center_mask;  // object center cells (z, size, orientation)
  std::vector<Box3D> encoded;
  std::vector<Box3D> outside_grid;
  std::size_t dropped_over_limit = 0;
  std::size_t center_collisions = 0;
};

/// Index of the bin whose (lo, hi] contains yaw.
std::size_t orientation_bin(const TargetConfig& cfg, double yaw);
/// Gaussian radius in cells for a footprint of the given size in cells.
double gaussian_radius(double length_cells, double width_cells, double min_overlap);

/// Renders heatmap peaks, the offset square, and center-cell regression
/// targets. Boxes whose center falls off the grid are reported in
/// outside_grid; at most max_objects boxes are kept, preferring higher
/// score then larger footprint.
EncodedTargets encode_targets(std::span<const Box3D> boxes, const TargetConfig& cfg, const BevGeometry& geom);

struct LossBreakdown {
  double heat = 0, offset = 0, z = 0, size = 0;
  double orientation = 0;  // = orientation_cls + orientation_reg
  double orientation_cls = 0, orientation_reg = 0;
  double total = 0;
};

/// Focal heatmap loss plus L1 regression terms over supervised cells,
/// combined with the configured weights.
LossBreakdown compute_loss(const HeadMaps& pred, const EncodedTargets& target, const TargetConfig& cfg);

struct Peak {
  std::size_t x = 0, y = 0, cls = 0;
  double score = 0;
  bool operator==(const Peak&) const = default;
};

/// Cells equal to their 3×3 max-pooled value (zero padding) with value at
/// least `threshold`, ordered by score then class, row, column; truncated
/// to max_detections.
std::vector<Peak> extract_peaks(std::span<const double> heatmap, std::size_t width, std::size_t height,
                                std::size_t num_classes, double threshold, std::size_t max_detections);

struct DecodeOptions {
  double score_threshold = 0.1;
  std::size_t max_detections = 300;
  double min_size = 0.01;
};

DetectionSet decode(const HeadMaps& maps, const BevGeometry& geom, const TargetConfig& cfg,
                    const DecodeOptions& opts = {});

// "HMP1" map files: u32 width, height, classes, bins; f64 x0, y0, cell_x,
// cell_y; then every plane as little-endian f64.
void write_head_maps(const std::filesystem::path& path, const HeadMaps& maps, const BevGeometry& geom);
HeadMaps read_head_maps(const std::filesystem::path& path, BevGeometry& geom);

}  // namespace kp3d
