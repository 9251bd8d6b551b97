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

#include "kp3d/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "kp3d/error.hpp"

namespace kp3d {

std::array<std::int64_t, 3> VoxelGridSpec::dims() const {
  kp3d::validate(range);
  const std::array<double, 3> extent = {range.x.extent(), range.y.extent(), range.z.extent()};
  std::array<std::int64_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    const double size = voxel_size[a];
    if (!(size > 0.0) || !std::isfinite(size)) fail(ErrorKind::kInvalidParameter, "voxel size must be positive");
    const double n = extent[static_cast<std::size_t>(a)] / size;
    const double r = std::round(n);
    if (r < 1.0 || std::abs(n - r) > 1e-6 * std::max(1.0, r)) {
      fail(ErrorKind::kInvalidParameter, "range extent is not a whole number of voxels on axis " + std::to_string(a));
    }
    out[static_cast<std::size_t>(a)] = static_cast<std::int64_t>(r);
  }
  if (max_points_per_voxel == 0 || max_voxels == 0) {
    fail(ErrorKind::kInvalidParameter, "voxel capacity limits must be positive");
  }
  return out;
}

VoxelSet voxelize(const PointCloud& points, const VoxelGridSpec& spec) {
  const auto dims = spec.dims();
  const Eigen::Vector3d lo = spec.range.min();
  VoxelSet out;
  out.feature_dim = points.stride();

  std::vector<double> sums;
  std::unordered_map<std::uint64_t, std::uint32_t> slot_of;
  slot_of.reserve(std::min(points.size(), spec.max_voxels));

  for (std::size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector3d p = points.position(i);
    if (!spec.range.contains(p)) continue;
    std::array<std::int32_t, 3> idx{};
    for (int a = 0; a < 3; ++a) {
      const auto cell = static_cast<std::int64_t>(std::floor((p[a] - lo[a]) / spec.voxel_size[a]));
      idx[static_cast<std::size_t>(a)] =
          static_cast<std::int32_t>(std::clamp<std::int64_t>(cell, 0, dims[static_cast<std::size_t>(a)] - 1));
    }
    const std::uint64_t key =
        (static_cast<std::uint64_t>(idx[2]) * static_cast<std::uint64_t>(dims[1]) + static_cast<std::uint64_t>(idx[1])) *
            static_cast<std::uint64_t>(dims[0]) +
        static_cast<std::uint64_t>(idx[0]);

    auto it = slot_of.find(key);
    if (it == slot_of.end()) {
      if (out.indices.size() >= spec.max_voxels) continue;
      it = slot_of.emplace(key, static_cast<std::uint32_t>(out.indices.size())).first;
      out.indices.push_back(idx);
      out.counts.push_back(0);
      sums.resize(sums.size() + out.feature_dim, 0.0);
    }
    const std::uint32_t slot = it->second;
    if (out.counts[slot] >= spec.max_points_per_voxel) continue;
    ++out.counts[slot];
    const auto row = points.row(i);
    double* acc = sums.data() + static_cast<std::size_t>(slot) * out.feature_dim;
    for (std::size_t k = 0; k < out.feature_dim; ++k) acc[k] += row[k];
  }

  out.features = std::move(sums);
  for (std::size_t v = 0; v < out.size(); ++v) {
    const double n = out.counts[v];
    for (std::size_t k = 0; k < out.feature_dim; ++k) out.features[v * out.feature_dim + k] /= n;
  }
  return out;
}

std::array<std::size_t, 2> bev_dims(const VoxelGridSpec& spec, std::size_t downsample) {
  if (downsample != 1 && downsample != 2 && downsample != 4 && downsample != 8) {
    fail(ErrorKind::kConfiguration, "downsample factor must be 1, 2, 4 or 8");
  }
  const auto dims = spec.dims();
  const auto ds = static_cast<std::int64_t>(downsample);
  if (dims[0] % ds != 0 || dims[1] % ds != 0) {
    fail(ErrorKind::kConfiguration, "downsample factor does not divide the voxel grid");
  }
  return {static_cast<std::size_t>(dims[0] / ds), static_cast<std::size_t>(dims[1] / ds)};
}

BevGrid to_bev(const VoxelSet& voxels, const VoxelGridSpec& spec, std::size_t downsample) {
  const auto [width, height] = bev_dims(spec, downsample);
  BevGrid grid;
  grid.width = width;
  grid.height = height;
  grid.channels = voxels.feature_dim;
  grid.downsample = downsample;
  grid.values.assign(width * height * grid.channels, 0.0);
  grid.counts.assign(width * height, 0);

  for (std::size_t v = 0; v < voxels.size(); ++v) {
    const auto& idx = voxels.indices[v];
    const std::size_t bx = static_cast<std::size_t>(idx[0]) / downsample;
    const std::size_t by = static_cast<std::size_t>(idx[1]) / downsample;
    const std::size_t cell = by * width + bx;
    const double n = voxels.counts[v];
    const auto f = voxels.feature(v);
    for (std::size_t c = 0; c < grid.channels; ++c) grid.values[cell * grid.channels + c] += n * f[c];
    grid.counts[cell] += voxels.counts[v];
  }
  for (std::size_t cell = 0; cell < width * height; ++cell) {
    if (grid.counts[cell] == 0) continue;
    const double n = grid.counts[cell];
    for (std::size_t c = 0; c < grid.channels; ++c) grid.values[cell * grid.channels + c] /= n;
  }
  return grid;
}

PointCloud bev_to_cloud(const BevGrid& grid) {
  if (grid.channels < 5) fail(ErrorKind::kConfiguration, "BEV grid does not carry point attributes");
  PointCloud cloud(grid.channels - 5);
  for (std::size_t cell = 0; cell < grid.width * grid.height; ++cell) {
    if (grid.counts[cell] == 0) continue;
    cloud.push_row({grid.values.data() + cell * grid.channels, grid.channels});
  }
  return cloud;
}

}  // namespace kp3d
