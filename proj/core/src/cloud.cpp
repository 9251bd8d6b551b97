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

#include "kp3d/cloud.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include "kp3d/error.hpp"

namespace kp3d {

void PointCloud::push_back(const Eigen::Vector3d& p, double reflectance, std::span<const double> painted,
                           double dt) {
  if (painted.size() != channels_) fail(ErrorKind::kConfiguration, "painted channel count mismatch");
  data_.insert(data_.end(), {p.x(), p.y(), p.z(), reflectance});
  data_.insert(data_.end(), painted.begin(), painted.end());
  data_.push_back(dt);
}

void PointCloud::push_back(const Eigen::Vector3d& p, double reflectance, double dt) {
  data_.insert(data_.end(), {p.x(), p.y(), p.z(), reflectance});
  data_.insert(data_.end(), channels_, 0.0);
  data_.push_back(dt);
}

void PointCloud::push_row(std::span<const double> row) {
  if (row.size() != stride()) fail(ErrorKind::kConfiguration, "point row has wrong attribute count");
  data_.insert(data_.end(), row.begin(), row.end());
}

void PointCloud::append(const PointCloud& other) {
  if (other.channels_ != channels_) fail(ErrorKind::kConfiguration, "cannot append clouds with different channel counts");
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
}

void PointCloud::set_position(std::size_t i, const Eigen::Vector3d& p) {
  double* r = data_.data() + i * stride();
  r[0] = p.x();
  r[1] = p.y();
  r[2] = p.z();
}

std::vector<Eigen::Vector3d> PointCloud::positions() const {
  std::vector<Eigen::Vector3d> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(position(i));
  return out;
}

PointCloud densify(const Sweep& current, std::span<const Sweep> past) {
  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < past.size(); ++i) {
    if (!(past[i].timestamp > prev)) {
      fail(ErrorKind::kSequencing, "past sweep " + std::to_string(i) + " timestamp is not increasing");
    }
    if (past[i].points.paint_channels() != current.points.paint_channels()) {
      fail(ErrorKind::kConfiguration, "past sweep " + std::to_string(i) + " has a different channel count");
    }
    prev = past[i].timestamp;
  }
  if (!past.empty() && !(current.timestamp > prev)) {
    fail(ErrorKind::kSequencing, "current sweep is not newer than the past sweeps");
  }

  PointCloud out(current.points.paint_channels());
  std::size_t total = current.points.size();
  for (const Sweep& s : past) total += s.points.size();
  out.reserve(total);

  const RigidTransform world_to_current = current.pose.inverse();
  for (const Sweep& s : past) {
    const RigidTransform to_current = world_to_current.compose(s.pose);
    const double dt = current.timestamp - s.timestamp;
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      out.push_row(s.points.row(i));
      const std::size_t j = out.size() - 1;
      out.set_position(j, to_current.apply(s.points.position(i)));
      out.set_dt(j, dt);
    }
  }
  for (std::size_t i = 0; i < current.points.size(); ++i) {
    out.push_row(current.points.row(i));
    out.set_dt(out.size() - 1, 0.0);
  }
  return out;
}

void CameraModel::validate() const {
  if (!(fx > 0) || !(fy > 0)) fail(ErrorKind::kInvalidParameter, "camera focal lengths must be positive");
  if (width <= 0 || height <= 0) fail(ErrorKind::kInvalidParameter, "camera image size must be positive");
}

std::optional<Eigen::Vector2d> CameraModel::project(const Eigen::Vector3d& vehicle_point) const {
  const Eigen::Vector3d pc = extrinsic.apply(vehicle_point);
  if (!(pc.z() > 0.0)) return std::nullopt;
  const double u = fx * pc.x() / pc.z() + cx;
  const double v = fy * pc.y() / pc.z() + cy;
  if (!(u >= 0.0 && u < width && v >= 0.0 && v < height)) return std::nullopt;
  return Eigen::Vector2d(u, v);
}

Eigen::Vector3d CameraModel::unproject(const Eigen::Vector2d& pixel, double z_cam) const {
  const Eigen::Vector3d pc((pixel.x() - cx) / fx * z_cam, (pixel.y() - cy) / fy * z_cam, z_cam);
  return extrinsic.inverse().apply(pc);
}

namespace {

void check_source(const BoxPaintSource& src, std::size_t channels) {
  src.camera.validate();
  for (const Box2D& b : src.boxes) {
    if (!(b.xmin < b.xmax) || !(b.ymin < b.ymax)) fail(ErrorKind::kInvalidParameter, "2D box has inverted extents");
    if (b.class_id >= channels) fail(ErrorKind::kConfiguration, "2D box class exceeds paint channel count");
  }
}

void check_source(const LabelPaintSource& src, std::size_t) {
  src.camera.validate();
  const auto expected = static_cast<std::size_t>(src.camera.width) * static_cast<std::size_t>(src.camera.height);
  if (src.labels.size() != expected) fail(ErrorKind::kConfiguration, "label image size does not match the camera");
}

void paint_from(const BoxPaintSource& src, const Eigen::Vector2d& px, std::span<double> out, bool binary) {
  for (const Box2D& b : src.boxes) {
    if (px.x() >= b.xmin && px.x() <= b.xmax && px.y() >= b.ymin && px.y() <= b.ymax) {
      out[b.class_id] = std::max(out[b.class_id], binary ? 1.0 : b.score);
    }
  }
}

void paint_from(const LabelPaintSource& src, const Eigen::Vector2d& px, std::span<double> out, bool) {
  const auto u = static_cast<std::size_t>(px.x());
  const auto v = static_cast<std::size_t>(px.y());
  const std::int32_t label = src.labels[v * static_cast<std::size_t>(src.camera.width) + u];
  if (label >= 0 && static_cast<std::size_t>(label) < out.size()) out[static_cast<std::size_t>(label)] = 1.0;
}

}  // namespace

PointCloud paint(const PointCloud& points, std::span<const PaintSource> sources, const PaintOptions& opts) {
  if (points.paint_channels() != opts.channels) {
    fail(ErrorKind::kConfiguration, "cloud has " + std::to_string(points.paint_channels()) +
                                        " paint channels, expected " + std::to_string(opts.channels));
  }
  for (const PaintSource& s : sources) std::visit([&](const auto& src) { check_source(src, opts.channels); }, s);

  PointCloud out = points;
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::span<double> channels = out.painted(i);
    std::fill(channels.begin(), channels.end(), 0.0);
    const Eigen::Vector3d p = out.position(i);
    for (const PaintSource& s : sources) {
      std::visit(
          [&](const auto& src) {
            if (const auto px = src.camera.project(p)) paint_from(src, *px, channels, opts.binary_box_scores);
          },
          s);
    }
  }
  return out;
}

void validate(const DetectionRange& r) {
  for (const AxisRange* a : {&r.x, &r.y, &r.z}) {
    if (!(a->lo < a->hi)) fail(ErrorKind::kInvalidParameter, "range minimum must be below maximum");
  }
}

PointCloud filter_range(const PointCloud& points, const DetectionRange& range) {
  validate(range);
  PointCloud out(points.paint_channels());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (range.contains(points.position(i))) out.push_row(points.row(i));
  }
  return out;
}

namespace {

constexpr char kFrameMagic[4] = {'P', 'C', 'F', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(in[at + k]) << (8 * k);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const PointCloud& cloud) {
  std::vector<std::uint8_t> out;
  out.reserve(12 + cloud.raw().size() * 4);
  out.insert(out.end(), std::begin(kFrameMagic), std::end(kFrameMagic));
  put_u32(out, static_cast<std::uint32_t>(cloud.size()));
  put_u32(out, static_cast<std::uint32_t>(cloud.paint_channels()));
  for (double v : cloud.raw()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

PointCloud decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || !std::equal(std::begin(kFrameMagic), std::end(kFrameMagic), bytes.begin())) {
    fail(ErrorKind::kFormat, "missing PCF1 frame header");
  }
  const std::uint32_t count = get_u32(bytes, 4);
  const std::uint32_t channels = get_u32(bytes, 8);
  PointCloud cloud(channels);
  const std::size_t values = static_cast<std::size_t>(count) * cloud.stride();
  if (bytes.size() != 12 + values * 4) fail(ErrorKind::kFormat, "frame payload size does not match its header");
  cloud.reserve(count);
  std::vector<double> row(cloud.stride());
  for (std::size_t p = 0, at = 12; p < count; ++p) {
    for (double& v : row) {
      v = std::bit_cast<float>(get_u32(bytes, at));
      at += 4;
    }
    cloud.push_row(row);
  }
  return cloud;
}

void write_frame(const std::filesystem::path& path, const PointCloud& cloud) {
  const auto bytes = encode_frame(cloud);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorKind::kIo, "failed writing " + path.string());
}

PointCloud read_frame(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_frame(bytes);
}

}  // namespace kp3d
