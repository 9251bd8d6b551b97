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
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "kp3d/geom3d.hpp"

namespace kp3d {

inline constexpr std::size_t kDefaultPaintChannels = 3;

/// Painted LiDAR points stored as rows of (x, y, z, reflectance,
/// painted[0..K), dt). K is fixed per cloud.
class PointCloud {
 public:
  explicit PointCloud(std::size_t paint_channels = kDefaultPaintChannels) : channels_(paint_channels) {}

  std::size_t size() const { return data_.size() / stride(); }
  bool empty() const { return data_.empty(); }
  std::size_t paint_channels() const { return channels_; }
  /// Attribute count per point: 5 + K.
  std::size_t stride() const { return channels_ + 5; }
  std::size_t dt_column() const { return channels_ + 4; }

  void reserve(std::size_t n) { data_.reserve(n * stride()); }
  void push_back(const Eigen::Vector3d& p, double reflectance, std::span<const double> painted, double dt);
  void push_back(const Eigen::Vector3d& p, double reflectance, double dt = 0.0);
  /// Appends a row with exactly stride() attributes.
  void push_row(std::span<const double> row);
  void append(const PointCloud& other);

  std::span<const double> row(std::size_t i) const { return {data_.data() + i * stride(), stride()}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * stride(), stride()}; }
  Eigen::Vector3d position(std::size_t i) const {
    const double* r = data_.data() + i * stride();
    return {r[0], r[1], r[2]};
  }
  void set_position(std::size_t i, const Eigen::Vector3d& p);
  double reflectance(std::size_t i) const { return data_[i * stride() + 3]; }
  std::span<const double> painted(std::size_t i) const { return {data_.data() + i * stride() + 4, channels_}; }
  std::span<double> painted(std::size_t i) { return {data_.data() + i * stride() + 4, channels_}; }
  double dt(std::size_t i) const { return data_[i * stride() + dt_column()]; }
  void set_dt(std::size_t i, double dt) { data_[i * stride() + dt_column()] = dt; }

  std::vector<Eigen::Vector3d> positions() const;
  const std::vector<double>& raw() const { return data_; }

  bool operator==(const PointCloud&) const = default;

 private:
  std::size_t channels_;
  std::vector<double> data_;
};

struct Sweep {
  PointCloud points;
  RigidTransform pose;  // vehicle -> world
  double timestamp = 0.0;
};

/// Time difference between consecutive sweeps of the synthetic sequences (10 Hz).
inline constexpr double kDefaultSweepPeriod = 0.1;
inline constexpr std::size_t kDefaultPastSweeps = 4;

/// Merges past sweeps into the current vehicle frame, stamping each point
/// with its age. `past` must be oldest first with strictly increasing
/// timestamps below current.timestamp (kSequencing otherwise).
PointCloud densify(const Sweep& current, std::span<const Sweep> past);

struct CameraModel {
  double fx = 1000, fy = 1000, cx = 960, cy = 640;
  int width = 1920, height = 1280;
  RigidTransform extrinsic;  // vehicle -> camera (z forward, x right, y down)

  void validate() const;
  /// Pixel coordinates, or nullopt when behind the camera or off-image.
  std::optional<Eigen::Vector2d> project(const Eigen::Vector3d& vehicle_point) const;
  /// Vehicle-frame point on the pixel's ray at depth z_cam.
  Eigen::Vector3d unproject(const Eigen::Vector2d& pixel, double z_cam) const;
};

struct Box2D {
  double xmin = 0, ymin = 0, xmax = 0, ymax = 0;
  std::size_t class_id = 0;
  double score = 1.0;
};

struct BoxPaintSource {
  CameraModel camera;
  std::vector<Box2D> boxes;
};

/// Dense per-pixel class indices, row-major, width × height of the camera.
/// Negative or out-of-range labels mean background.
struct LabelPaintSource {
  CameraModel camera;
  std::vector<std::int32_t> labels;
};

using PaintSource = std::variant<BoxPaintSource, LabelPaintSource>;

struct PaintOptions {
  std::size_t channels = kDefaultPaintChannels;
  /// Paint 1.0 instead of the 2D box score.
  bool binary_box_scores = false;
};

/// Recomputes every point's painted channels from the sources: channel-wise
/// max over cameras and enclosing boxes. Positions, reflectance and dt are
/// untouched. Throws kConfiguration on channel mismatches.
PointCloud paint(const PointCloud& points, std::span<const PaintSource> sources, const PaintOptions& opts = {});

struct AxisRange {
  double lo = 0, hi = 0;
  bool contains(double v) const { return v >= lo && v < hi; }
  double extent() const { return hi - lo; }
  bool operator==(const AxisRange&) const = default;
};

struct DetectionRange {
  AxisRange x, y, z;
  Eigen::Vector3d min() const { return {x.lo, y.lo, z.lo}; }
  bool contains(const Eigen::Vector3d& p) const { return x.contains(p.x()) && y.contains(p.y()) && z.contains(p.z()); }
  bool operator==(const DetectionRange&) const = default;
};

inline constexpr DetectionRange kTrainRange{{-76.8, 76.8}, {-51.2, 51.2}, {-1.0, 3.0}};
inline constexpr DetectionRange kInferenceRange{{-80.0, 80.0}, {-80.0, 80.0}, {-1.0, 3.0}};

void validate(const DetectionRange& r);

/// Keeps points with each coordinate in its half-open [lo, hi).
PointCloud filter_range(const PointCloud& points, const DetectionRange& range);

// Frame files: little-endian "PCF1", u32 count, u32 K, then count rows of
// (5 + K) float32 attributes.
void write_frame(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_frame(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_frame(const PointCloud& cloud);
PointCloud decode_frame(std::span<const std::uint8_t> bytes);

}  // namespace kp3d
