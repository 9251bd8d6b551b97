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

#include "kp3d/heads.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

#include "kp3d/error.hpp"

namespace kp3d {

BevGeometry BevGeometry::from_voxels(const VoxelGridSpec& spec, std::size_t downsample) {
  const auto [w, h] = bev_dims(spec, downsample);
  const double ds = static_cast<double>(downsample);
  return {spec.range.x.lo, spec.range.y.lo, spec.voxel_size.x() * ds, spec.voxel_size.y() * ds, w, h};
}

void TargetConfig::validate() const {
  if (num_classes == 0) fail(ErrorKind::kConfiguration, "target config needs at least one class");
  if (offset_radius < 0 || min_gaussian_radius < 0) fail(ErrorKind::kConfiguration, "radii must be >= 0");
  if (max_objects == 0) fail(ErrorKind::kConfiguration, "max_objects must be positive");
  for (double w : {weight_offset, weight_z, weight_size, weight_orientation}) {
    if (!(w >= 0.0)) fail(ErrorKind::kConfiguration, "loss weights must be >= 0");
  }
  if (!(gaussian_min_overlap > 0.0 && gaussian_min_overlap < 1.0)) {
    fail(ErrorKind::kConfiguration, "gaussian_min_overlap must be in (0, 1)");
  }
  if (bins.empty()) fail(ErrorKind::kConfiguration, "at least one orientation bin is required");
  std::vector<OrientationBin> sorted = bins;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.lo < b.lo; });
  double covered = sorted.front().lo;
  if (covered > -kPi) fail(ErrorKind::kConfiguration, "orientation bins leave a gap at -pi");
  for (const OrientationBin& b : sorted) {
    if (!(b.lo < b.hi)) fail(ErrorKind::kConfiguration, "orientation bin has empty range");
    if (b.lo > covered) fail(ErrorKind::kConfiguration, "orientation bins leave a gap");
    covered = std::max(covered, b.hi);
  }
  if (covered < kPi) fail(ErrorKind::kConfiguration, "orientation bins leave a gap at pi");
}

HeadMaps::HeadMaps(std::size_t w, std::size_t h, std::size_t classes, std::size_t bins)
    : width(w), height(h), num_classes(classes), num_bins(bins) {
  const std::size_t p = w * h;
  heatmap.assign(classes * p, 0.0);
  offset.assign(2 * p, 0.0);
  zmap.assign(p, 0.0);
  size.assign(3 * p, 0.0);
  orientation_logits.assign(2 * bins * p, 0.0);
  orientation_residual.assign(2 * bins * p, 0.0);
}

std::size_t orientation_bin(const TargetConfig& cfg, double yaw) {
  for (std::size_t k = 0; k < cfg.bins.size(); ++k) {
    if (yaw > cfg.bins[k].lo && yaw <= cfg.bins[k].hi) return k;
  }
  // Only reachable for yaw exactly at an open lower edge of the first bin.
  return 0;
}

double gaussian_radius(double length_cells, double width_cells, double min_overlap) {
  const double h = length_cells, w = width_cells, o = min_overlap;
  const double b1 = h + w;
  const double c1 = w * h * (1 - o) / (1 + o);
  const double r1 = (b1 + std::sqrt(b1 * b1 - 4 * c1)) / 2;
  const double b2 = 2 * (h + w);
  const double c2 = (1 - o) * w * h;
  const double r2 = (b2 + std::sqrt(b2 * b2 - 16 * c2)) / 2;
  const double a3 = 4 * o;
  const double b3 = -2 * o * (h + w);
  const double c3 = (o - 1) * w * h;
  const double r3 = (b3 + std::sqrt(b3 * b3 - 4 * a3 * c3)) / 2;
  return std::min({r1, r2, r3});
}

EncodedTargets encode_targets(std::span<const Box3D> boxes, const TargetConfig& cfg, const BevGeometry& geom) {
  cfg.validate();
  if (geom.width == 0 || geom.height == 0) fail(ErrorKind::kConfiguration, "empty BEV geometry");
  EncodedTargets t;
  t.maps = HeadMaps(geom.width, geom.height, cfg.num_classes, cfg.bins.size());
  HeadMaps& m = t.maps;
  const std::size_t plane = m.plane();
  t.offset_mask.assign(plane, 0);
  t.center_mask.assign(plane, 0);

  std::vector<Box3D> in_grid;
  for (const Box3D& b : boxes) {
    validate(b);
    if (class_index(b.cls) >= cfg.num_classes) fail(ErrorKind::kConfiguration, "box class exceeds heatmap channels");
    const double u = geom.to_cell_x(b.cx), v = geom.to_cell_y(b.cy);
    if (u >= 0 && v >= 0 && u < static_cast<double>(geom.width) && v < static_cast<double>(geom.height)) {
      in_grid.push_back(b);
    } else {
      t.outside_grid.push_back(b);
    }
  }
  if (!t.outside_grid.empty()) spdlog::debug("encode_targets: {} boxes outside the grid", t.outside_grid.size());
  if (in_grid.size() > cfg.max_objects) {
    std::stable_sort(in_grid.begin(), in_grid.end(), [](const Box3D& a, const Box3D& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.l * a.w > b.l * b.w;
    });
    t.dropped_over_limit = in_grid.size() - cfg.max_objects;
    in_grid.resize(cfg.max_objects);
    spdlog::warn("encode_targets: dropped {} boxes over the {} object limit", t.dropped_over_limit, cfg.max_objects);
  }

  std::vector<double> best_dist(plane, std::numeric_limits<double>::infinity());
  const auto W = static_cast<std::int64_t>(geom.width), H = static_cast<std::int64_t>(geom.height);
  for (const Box3D& b : in_grid) {
    const double u = geom.to_cell_x(b.cx), v = geom.to_cell_y(b.cy);
    const auto ix = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(u)), W - 1);
    const auto iy = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(v)), H - 1);
    const std::size_t cls = class_index(b.cls);

    const double radius_f = gaussian_radius(b.l / geom.cell_x, b.w / geom.cell_y, cfg.gaussian_min_overlap);
    const auto rg = std::max<std::int64_t>(cfg.min_gaussian_radius, static_cast<std::int64_t>(std::floor(radius_f)));
    const double sigma = static_cast<double>(2 * rg + 1) / 6.0;
    for (std::int64_t dy = -rg; dy <= rg; ++dy) {
      for (std::int64_t dx = -rg; dx <= rg; ++dx) {
        const std::int64_t x = ix + dx, y = iy + dy;
        if (x < 0 || y < 0 || x >= W || y >= H) continue;
        const double g = std::exp(-static_cast<double>(dx * dx + dy * dy) / (2 * sigma * sigma));
        double& cell = m.heatmap[m.at(cls, static_cast<std::size_t>(x), static_cast<std::size_t>(y))];
        cell = std::max(cell, g);
      }
    }

    // Offset square: each cell points at the nearest object center.
    const std::int64_t r = cfg.offset_radius;
    for (std::int64_t dy = -r; dy <= r; ++dy) {
      for (std::int64_t dx = -r; dx <= r; ++dx) {
        const std::int64_t x = ix + dx, y = iy + dy;
        if (x < 0 || y < 0 || x >= W || y >= H) continue;
        const double ox = u - (static_cast<double>(x) + 0.5);
        const double oy = v - (static_cast<double>(y) + 0.5);
        const std::size_t cell = static_cast<std::size_t>(y * W + x);
        const double d2 = ox * ox + oy * oy;
        if (d2 < best_dist[cell]) {
          best_dist[cell] = d2;
          m.offset[cell] = ox;
          m.offset[plane + cell] = oy;
          t.offset_mask[cell] = 1;
        }
      }
    }

    const std::size_t center = static_cast<std::size_t>(iy * W + ix);
    if (t.center_mask[center]) {
      ++t.center_collisions;
      spdlog::warn("encode_targets: two objects share center cell ({}, {})", ix, iy);
      continue;
    }
    t.center_mask[center] = 1;
    m.zmap[center] = b.cz;
    m.size[center] = b.l;
    m.size[plane + center] = b.w;
    m.size[2 * plane + center] = b.h;
    const std::size_t bin = orientation_bin(cfg, b.yaw);
    for (std::size_t k = 0; k < cfg.bins.size(); ++k) {
      const bool inside = k == bin;
      m.orientation_logits[(2 * k) * plane + center] = inside ? 0.0 : 1.0;
      m.orientation_logits[(2 * k + 1) * plane + center] = inside ? 1.0 : 0.0;
      const double res = b.yaw - cfg.bins[k].center;
      m.orientation_residual[(2 * k) * plane + center] = std::sin(res);
      m.orientation_residual[(2 * k + 1) * plane + center] = std::cos(res);
    }
    t.encoded.push_back(b);
  }
  return t;
}

LossBreakdown compute_loss(const HeadMaps& pred, const EncodedTargets& target, const TargetConfig& cfg) {
  const HeadMaps& gt = target.maps;
  if (!pred.same_shape(gt) || pred.heatmap.size() != gt.heatmap.size() ||
      target.offset_mask.size() != gt.plane() || target.center_mask.size() != gt.plane()) {
    fail(ErrorKind::kShape, "prediction and target head maps differ in shape");
  }
  const std::size_t plane = gt.plane();
  LossBreakdown L;

  constexpr double kEps = 1e-4;
  double heat = 0;
  std::size_t num_pos = 0;
  for (std::size_t i = 0; i < gt.heatmap.size(); ++i) {
    const double p = std::clamp(pred.heatmap[i], kEps, 1.0 - kEps);
    const double t = gt.heatmap[i];
    if (t == 1.0) {
      heat -= std::pow(1 - p, cfg.focal_alpha) * std::log(p);
      ++num_pos;
    } else {
      heat -= std::pow(1 - t, cfg.focal_beta) * std::pow(p, cfg.focal_alpha) * std::log(1 - p);
    }
  }
  L.heat = heat / static_cast<double>(std::max<std::size_t>(num_pos, 1));

  double off = 0;
  std::size_t num_off = 0;
  for (std::size_t c = 0; c < plane; ++c) {
    if (!target.offset_mask[c]) continue;
    off += std::abs(pred.offset[c] - gt.offset[c]) + std::abs(pred.offset[plane + c] - gt.offset[plane + c]);
    ++num_off;
  }
  L.offset = off / static_cast<double>(std::max<std::size_t>(num_off, 1));

  double z = 0, sz = 0, ori_cls = 0, ori_reg = 0;
  std::size_t num_center = 0;
  for (std::size_t c = 0; c < plane; ++c) {
    if (!target.center_mask[c]) continue;
    ++num_center;
    z += std::abs(pred.zmap[c] - gt.zmap[c]);
    for (std::size_t k = 0; k < 3; ++k) sz += std::abs(pred.size[k * plane + c] - gt.size[k * plane + c]);
    for (std::size_t k = 0; k < gt.num_bins; ++k) {
      const double out_logit = pred.orientation_logits[(2 * k) * plane + c];
      const double in_logit = pred.orientation_logits[(2 * k + 1) * plane + c];
      const bool inside = gt.orientation_logits[(2 * k + 1) * plane + c] > gt.orientation_logits[(2 * k) * plane + c];
      // log-sum-exp softmax cross entropy over the two logits.
      const double mx = std::max(out_logit, in_logit);
      const double lse = mx + std::log(std::exp(out_logit - mx) + std::exp(in_logit - mx));
      ori_cls += lse - (inside ? in_logit : out_logit);
      if (inside) {
        ori_reg += std::abs(pred.orientation_residual[(2 * k) * plane + c] - gt.orientation_residual[(2 * k) * plane + c]) +
                   std::abs(pred.orientation_residual[(2 * k + 1) * plane + c] -
                            gt.orientation_residual[(2 * k + 1) * plane + c]);
      }
    }
  }
  const double n = static_cast<double>(std::max<std::size_t>(num_center, 1));
  L.z = z / n;
  L.size = sz / n;
  L.orientation_cls = ori_cls / n;
  L.orientation_reg = ori_reg / n;
  L.orientation = L.orientation_cls + L.orientation_reg;
  L.total = L.heat + cfg.weight_offset * L.offset + cfg.weight_z * L.z + cfg.weight_size * L.size +
            cfg.weight_orientation * L.orientation;
  return L;
}

std::vector<Peak> extract_peaks(std::span<const double> heatmap, std::size_t width, std::size_t height,
                                std::size_t num_classes, double threshold, std::size_t max_detections) {
  const std::size_t plane = width * height;
  if (heatmap.size() != plane * num_classes) fail(ErrorKind::kShape, "heatmap size does not match its dims");
  std::vector<Peak> peaks;
  std::vector<double> row_max(plane), pooled(plane);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double* h = heatmap.data() + c * plane;
    // Separable 3x3 max pool, stride 1, zero padding.
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        double m = std::max(0.0, h[y * width + x]);
        if (x > 0) m = std::max(m, h[y * width + x - 1]);
        if (x + 1 < width) m = std::max(m, h[y * width + x + 1]);
        row_max[y * width + x] = m;
      }
    }
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        double m = row_max[y * width + x];
        if (y > 0) m = std::max(m, row_max[(y - 1) * width + x]);
        if (y + 1 < height) m = std::max(m, row_max[(y + 1) * width + x]);
        pooled[y * width + x] = m;
      }
    }
    for (std::size_t i = 0; i < plane; ++i) {
      if (h[i] == pooled[i] && h[i] >= threshold) peaks.push_back({i % width, i / width, c, h[i]});
    }
  }
  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.score > b.score; });
  if (peaks.size() > max_detections) peaks.resize(max_detections);
  return peaks;
}

DetectionSet decode(const HeadMaps& maps, const BevGeometry& geom, const TargetConfig& cfg, const DecodeOptions& opts) {
  if (maps.width != geom.width || maps.height != geom.height) fail(ErrorKind::kShape, "head maps do not match geometry");
  if (maps.num_bins != cfg.bins.size()) fail(ErrorKind::kShape, "head maps do not match the orientation bins");
  DetectionSet out;
  const std::size_t plane = maps.plane();
  const auto peaks = extract_peaks(maps.heatmap, maps.width, maps.height, maps.num_classes, opts.score_threshold,
                                   opts.max_detections);
  for (const Peak& p : peaks) {
    if (p.cls >= kNumClasses) continue;
    const std::size_t c = p.y * maps.width + p.x;
    Box3D b;
    b.cls = static_cast<ObjectClass>(p.cls);
    b.score = std::clamp(p.score, 0.0, 1.0);
    b.cx = geom.x0 + (static_cast<double>(p.x) + 0.5 + maps.offset[c]) * geom.cell_x;
    b.cy = geom.y0 + (static_cast<double>(p.y) + 0.5 + maps.offset[plane + c]) * geom.cell_y;
    b.cz = maps.zmap[c];
    b.l = std::max(opts.min_size, maps.size[c]);
    b.w = std::max(opts.min_size, maps.size[plane + c]);
    b.h = std::max(opts.min_size, maps.size[2 * plane + c]);
    std::size_t best = 0;
    double best_margin = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < maps.num_bins; ++k) {
      const double margin =
          maps.orientation_logits[(2 * k + 1) * plane + c] - maps.orientation_logits[(2 * k) * plane + c];
      if (margin > best_margin) {
        best_margin = margin;
        best = k;
      }
    }
    const double s = maps.orientation_residual[(2 * best) * plane + c];
    const double co = maps.orientation_residual[(2 * best + 1) * plane + c];
    b.yaw = wrap_angle(cfg.bins[best].center + std::atan2(s, co));
    out.boxes.push_back(b);
  }
  return out;
}

namespace {

constexpr char kMapMagic[4] = {'H', 'M', 'P', '1'};

template <typename T>
void put_le(std::ofstream& f, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(v);
  char buf[sizeof(U)];
  for (std::size_t k = 0; k < sizeof(U); ++k) buf[k] = static_cast<char>((bits >> (8 * k)) & 0xff);
  f.write(buf, sizeof(U));
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t& at) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  if (at + sizeof(U) > in.size()) fail(ErrorKind::kFormat, "truncated head map file");
  U bits = 0;
  for (std::size_t k = 0; k < sizeof(U); ++k) bits |= static_cast<U>(in[at + k]) << (8 * k);
  at += sizeof(U);
  return std::bit_cast<T>(bits);
}

template <typename Maps>
auto planes_of(Maps& m) {
  return std::array{&m.heatmap, &m.offset, &m.zmap, &m.size, &m.orientation_logits, &m.orientation_residual};
}

}  // namespace

void write_head_maps(const std::filesystem::path& path, const HeadMaps& maps, const BevGeometry& geom) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  f.write(kMapMagic, 4);
  for (std::size_t v : {maps.width, maps.height, maps.num_classes, maps.num_bins}) put_le(f, static_cast<std::uint32_t>(v));
  for (double v : {geom.x0, geom.y0, geom.cell_x, geom.cell_y}) put_le(f, v);
  for (const auto* plane : planes_of(maps)) {
    for (double v : *plane) put_le(f, v);
  }
  if (!f) fail(ErrorKind::kIo, "failed writing " + path.string());
}

HeadMaps read_head_maps(const std::filesystem::path& path, BevGeometry& geom) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || !std::equal(kMapMagic, kMapMagic + 4, bytes.begin())) {
    fail(ErrorKind::kFormat, "missing HMP1 header in " + path.string());
  }
  std::size_t at = 4;
  const auto w = get_le<std::uint32_t>(bytes, at);
  const auto h = get_le<std::uint32_t>(bytes, at);
  const auto classes = get_le<std::uint32_t>(bytes, at);
  const auto bins = get_le<std::uint32_t>(bytes, at);
  geom.x0 = get_le<double>(bytes, at);
  geom.y0 = get_le<double>(bytes, at);
  geom.cell_x = get_le<double>(bytes, at);
  geom.cell_y = get_le<double>(bytes, at);
  geom.width = w;
  geom.height = h;
  HeadMaps maps(w, h, classes, bins);
  for (auto* plane : planes_of(maps)) {
    for (double& v : *plane) v = get_le<double>(bytes, at);
  }
  if (at != bytes.size()) fail(ErrorKind::kFormat, "trailing bytes in head map file " + path.string());
  return maps;
}

}  // namespace kp3d
