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

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kp3d/cloud.hpp"

namespace kp3d {

struct VoxelGridSpec {
  Eigen::Vector3d voxel_size{0.04, 0.04, 0.1};
  DetectionRange range = kInferenceRange;
  std::size_t max_points_per_voxel = 5;
  std::size_t max_voxels = 1'000'000;

  /// Grid size per axis, round(extent / size). Throws kInvalidParameter if
  /// any size is non-positive or the extent is not a whole number of cells.
  std::array<std::int64_t, 3> dims() const;
  void validate() const { (void)dims(); }
};

/// Mean-feature voxels in first-seen order. Features are stored flat:
/// voxel i occupies features[i * feature_dim .. (i+1) * feature_dim).
struct VoxelSet {
  std::size_t feature_dim = 0;
  std::vector<std::array<std::int32_t, 3>> indices;
  std::vector<std::uint32_t> counts;
  std::vector<double> features;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
  std::span<const double> feature(std::size_t i) const { return {features.data() + i * feature_dim, feature_dim}; }
};

/// floor((p - min) / size) cell of every in-range point; each voxel averages
/// the full attribute row of its first max_points_per_voxel points. Voxels
/// past max_voxels are dropped.
VoxelSet voxelize(const PointCloud& points, const VoxelGridSpec& spec);

/// Dense top-down grid; cell (x, y) values at ((y * width + x) * channels).
struct BevGrid {
  std::size_t width = 0, height = 0, channels = 0;
  std::size_t downsample = 1;
  std::vector<double> values;
  std::vector<std::uint32_t> counts;  // contributing points per cell

  double value(std::size_t x, std::size_t y, std::size_t c) const { return values[(y * width + x) * channels + c]; }
  std::uint32_t count(std::size_t x, std::size_t y) const { return counts[y * width + x]; }
};

/// BEV lattice size for a downsample factor. Throws kConfiguration if the
/// factor is not 1, 2, 4 or 8 or does not divide the x/y grid dims.
std::array<std::size_t, 2> bev_dims(const VoxelGridSpec& spec, std::size_t downsample);

/// Count-weighted mean of voxel features over z and the pooled x-y footprint.
BevGrid to_bev(const VoxelSet& voxels, const VoxelGridSpec& spec, std::size_t downsample);

/// Occupied cells as points carrying their mean attributes, for writing
/// BEV grids with the frame-file writer.
PointCloud bev_to_cloud(const BevGrid& grid);

}  // namespace kp3d
