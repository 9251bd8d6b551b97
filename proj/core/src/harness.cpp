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

#include "kp3d/harness.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kp3d/augment.hpp"
#include "kp3d/error.hpp"
#include "kp3d/parallel.hpp"
#include "kp3d/random.hpp"

namespace kp3d {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Scenes

void SceneSpec::validate() const {
  for (const SizePrior& s : sizes) {
    if (!(s.l > 0 && s.w > 0 && s.h > 0)) fail(ErrorKind::kConfiguration, "scene size priors must be positive");
  }
  if (!(size_jitter >= 0 && size_jitter < 1)) fail(ErrorKind::kConfiguration, "size_jitter must be in [0, 1)");
  if (!(placement > 0)) fail(ErrorKind::kConfiguration, "placement must be positive");
  if (!(min_gap >= 0)) fail(ErrorKind::kConfiguration, "min_gap must be >= 0");
  if (!(point_density >= 0 && clutter_density >= 0)) fail(ErrorKind::kConfiguration, "densities must be >= 0");
  if (sweeps == 0) fail(ErrorKind::kConfiguration, "a scene needs at least one sweep");
  if (!(sweep_period > 0)) fail(ErrorKind::kConfiguration, "sweep_period must be positive");
  if (max_retries == 0) fail(ErrorKind::kConfiguration, "max_retries must be positive");
  if (!std::isfinite(ego_velocity[0]) || !std::isfinite(ego_velocity[1])) {
    fail(ErrorKind::kConfiguration, "ego_velocity must be finite");
  }
}

std::vector<CameraModel> default_cameras() {
  std::vector<CameraModel> cams;
  const Eigen::Vector3d mount(0.0, 0.0, 1.6);
  for (double heading : {0.0, kPi / 2, -kPi / 2}) {
    const Eigen::Vector3d fwd(std::cos(heading), std::sin(heading), 0.0);
    const Eigen::Vector3d right(std::sin(heading), -std::cos(heading), 0.0);
    const Eigen::Vector3d down(0.0, 0.0, -1.0);
    Eigen::Matrix3d r;
    r.row(0) = right;
    r.row(1) = down;
    r.row(2) = fwd;
    CameraModel c;
    c.fx = c.fy = 500.0;
    c.width = 960;
    c.height = 640;
    c.cx = 480.0;
    c.cy = 320.0;
    c.extrinsic = RigidTransform(r, -(r * mount));
    cams.push_back(c);
  }
  return cams;
}

namespace {

// Point on the surface of the box shrunk by 2%, in the box's frame.
Eigen::Vector3d surface_sample(Rng& rng, const Box3D& b) {
  const double l = 0.98 * b.l, w = 0.98 * b.w, h = 0.98 * b.h;
  const double faces[3] = {l * w, w * h, l * h};  // top/bottom, front/back, sides
  const double pick = uniform(rng, 0.0, 2 * (faces[0] + faces[1] + faces[2]));
  const double side = bernoulli(rng, 0.5) ? 0.5 : -0.5;
  const double u = uniform(rng, -0.5, 0.5), v = uniform(rng, -0.5, 0.5);
  if (pick < 2 * faces[0]) return {u * l, v * w, side * h};
  if (pick < 2 * (faces[0] + faces[1])) return {side * l, u * w, v * h};
  return {u * l, side * w, v * h};
}

Eigen::Vector3d box_to_vehicle(const Box3D& b, const Eigen::Vector3d& local) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  return {b.cx + c * local.x() - s * local.y(), b.cy + s * local.x() + c * local.y(), b.cz + local.z()};
}

std::optional<Box2D> project_box(const CameraModel& cam, const Box3D& b) {
  double umin = 1e300, vmin = 1e300, umax = -1e300, vmax = -1e300;
  for (const Eigen::Vector3d& p : b.corners()) {
    const Eigen::Vector3d pc = cam.extrinsic.apply(p);
    if (pc.z() <= 0.1) return std::nullopt;
    const double u = cam.fx * pc.x() / pc.z() + cam.cx;
    const double v = cam.fy * pc.y() / pc.z() + cam.cy;
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  Box2D out{std::max(umin, 0.0), std::max(vmin, 0.0), std::min(umax, static_cast<double>(cam.width)),
            std::min(vmax, static_cast<double>(cam.height)), class_index(b.cls), 1.0};
  if (!(out.xmin < out.xmax && out.ymin < out.ymax)) return std::nullopt;
  return out;
}

}  // namespace

Scene generate_scene(const SceneSpec& spec, std::string id) {
  spec.validate();
  Rng rng(spec.seed);
  Scene scene;
  scene.id = std::move(id);

  // Boxes in the current vehicle frame, bottoms on z = 0.
  std::vector<double> radius;
  for (ObjectClass cls : kAllClasses) {
    const SizePrior& prior = spec.sizes[class_index(cls)];
    for (std::size_t n = 0; n < spec.counts[class_index(cls)]; ++n) {
      Box3D b;
      b.cls = cls;
      b.l = prior.l * (1 + uniform(rng, -spec.size_jitter, spec.size_jitter));
      b.w = prior.w * (1 + uniform(rng, -spec.size_jitter, spec.size_jitter));
      b.h = prior.h * (1 + uniform(rng, -spec.size_jitter, spec.size_jitter));
      b.cz = b.h / 2;
      const double r = 0.5 * std::hypot(b.l, b.w);
      bool placed = false;
      for (std::size_t attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
        b.cx = uniform(rng, -spec.placement, spec.placement);
        b.cy = uniform(rng, -spec.placement, spec.placement);
        placed = true;
        for (std::size_t k = 0; k < scene.boxes.size() && placed; ++k) {
          const double d = std::hypot(b.cx - scene.boxes[k].cx, b.cy - scene.boxes[k].cy);
          placed = d >= r + radius[k] + spec.min_gap;
        }
      }
      if (!placed) {
        fail(ErrorKind::kGeneration, "scene '" + scene.id + "': cannot place " + std::string(class_name(cls)) + " " +
                                         std::to_string(n) + " after " + std::to_string(spec.max_retries) +
                                         " attempts");
      }
      b.yaw = wrap_angle(uniform(rng, -kPi, kPi));
      scene.boxes.push_back(b);
      radius.push_back(r);
    }
  }

  const std::size_t S = spec.sweeps;
  const double area = 4 * spec.placement * spec.placement;
  const auto clutter = static_cast<std::size_t>(std::floor(spec.clutter_density * area));
  auto pose_at = [&](std::size_t k) {
    const double t = static_cast<double>(k) * spec.sweep_period;
    return RigidTransform::from_yaw(0.0, {spec.ego_velocity[0] * t, spec.ego_velocity[1] * t, 0.0});
  };
  const RigidTransform current_pose = pose_at(S - 1);
  std::vector<std::size_t> interior(scene.boxes.size(), 0);
  for (std::size_t k = 0; k < S; ++k) {
    Sweep sw{PointCloud(spec.paint_channels), pose_at(k), static_cast<double>(k) * spec.sweep_period};
    // current vehicle -> sweep k vehicle
    const RigidTransform to_sweep = sw.pose.inverse().compose(current_pose);
    for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
      const Box3D& b = scene.boxes[i];
      const auto n = static_cast<std::size_t>(std::floor(b.l * b.w * spec.point_density));
      for (std::size_t p = 0; p < n; ++p) {
        const Eigen::Vector3d v = box_to_vehicle(b, surface_sample(rng, b));
        sw.points.push_back(to_sweep.apply(v), uniform01(rng));
      }
      if (k + 1 == S) interior[i] += n;
    }
    for (std::size_t p = 0; p < clutter; ++p) {
      const Eigen::Vector3d v(uniform(rng, -spec.placement, spec.placement),
                              uniform(rng, -spec.placement, spec.placement), uniform(rng, 0.0, 2.5));
      const double refl = uniform01(rng);
      const bool inside = std::any_of(scene.boxes.begin(), scene.boxes.end(),
                                      [&](const Box3D& b) { return point_in_box(v, b); });
      if (!inside) sw.points.push_back(to_sweep.apply(v), refl);
    }
    scene.sweeps.push_back(std::move(sw));
  }
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    scene.boxes[i].difficulty = interior[i] <= kL2MaxPoints ? Difficulty::kL2 : Difficulty::kL1;
  }

  if (spec.cameras) {
    scene.cameras = default_cameras();
    for (const CameraModel& cam : scene.cameras) {
      BoxPaintSource src{cam, {}};
      for (const Box3D& b : scene.boxes) {
        if (class_index(b.cls) >= spec.paint_channels) continue;
        if (auto box = project_box(cam, b)) src.boxes.push_back(*box);
      }
      scene.paint_sources.emplace_back(std::move(src));
    }
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Detectors

std::string_view detector_kind_name(DetectorKind k) {
  switch (k) {
    case DetectorKind::kOracle: return "oracle";
    case DetectorKind::kNoisy: return "noisy";
    case DetectorKind::kReplay: return "replay";
  }
  return "?";
}

DetectorKind parse_detector_kind(std::string_view name) {
  for (DetectorKind k : {DetectorKind::kOracle, DetectorKind::kNoisy, DetectorKind::kReplay}) {
    if (detector_kind_name(k) == name) return k;
  }
  fail(ErrorKind::kConfiguration, "unknown detector kind '" + std::string(name) + "'");
}

void NoiseSpec::validate() const {
  for (double r : {drop_rate, spurious_rate}) {
    if (!(r >= 0 && r <= 1)) fail(ErrorKind::kConfiguration, "noise rates must be in [0, 1]");
  }
  for (double s : {center_sigma, size_sigma, yaw_sigma, score_jitter}) {
    if (!(s >= 0)) fail(ErrorKind::kConfiguration, "noise sigmas must be >= 0");
  }
  if (!(score_mean >= 0 && score_mean <= 1)) fail(ErrorKind::kConfiguration, "score_mean must be in [0, 1]");
  if (!(spurious_score_max > 0 && spurious_score_max <= 1)) {
    fail(ErrorKind::kConfiguration, "spurious_score_max must be in (0, 1]");
  }
}

void DetectorSpec::validate() const {
  if (name.empty() || name.find_first_not_of("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-") !=
                          std::string::npos) {
    fail(ErrorKind::kConfiguration, "detector name '" + name + "' must be non-empty [A-Za-z0-9_-]");
  }
  noise.validate();
  if (kind == DetectorKind::kReplay && replay_path.empty()) {
    fail(ErrorKind::kConfiguration, "replay detector '" + name + "' needs a replay path");
  }
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

DetectionSet oracle_detect(const Frame& frame, const OracleHeads& heads) {
  const EncodedTargets enc = encode_targets(frame.annotations, heads.targets, heads.geometry);
  DetectionSet det = decode(enc.maps, heads.geometry, heads.targets, heads.decode);
  det.frame_id = frame.id;
  det.source = "oracle";
  return det;
}

DetectionSet noisy_detect(const Frame& frame, const OracleHeads& heads, const NoiseSpec& noise, std::uint64_t seed) {
  DetectionSet base = oracle_detect(frame, heads);
  Rng rng(mix_seed(mix_seed(seed, fnv1a(frame.id)), frame.tag));
  DetectionSet out{frame.id, "noisy", {}};
  const SceneSpec priors;
  const BevGeometry& g = heads.geometry;
  for (const Box3D& b : base.boxes) {
    // Every box consumes the same draws so drops do not shift later noise.
    const bool drop = bernoulli(rng, noise.drop_rate);
    Box3D n = b;
    n.cx += normal(rng, 0.0, noise.center_sigma);
    n.cy += normal(rng, 0.0, noise.center_sigma);
    n.cz += normal(rng, 0.0, noise.center_sigma);
    n.l *= std::max(0.1, 1 + normal(rng, 0.0, noise.size_sigma));
    n.w *= std::max(0.1, 1 + normal(rng, 0.0, noise.size_sigma));
    n.h *= std::max(0.1, 1 + normal(rng, 0.0, noise.size_sigma));
    n.yaw = wrap_angle(n.yaw + normal(rng, 0.0, noise.yaw_sigma));
    n.score = std::clamp(normal(rng, noise.score_mean, noise.score_jitter), 0.01, 1.0);
    const bool spurious = bernoulli(rng, noise.spurious_rate);
    Box3D fake;
    fake.cls = kAllClasses[uniform_index(rng, kNumClasses)];
    const SizePrior& p = priors.sizes[class_index(fake.cls)];
    fake.l = p.l;
    fake.w = p.w;
    fake.h = p.h;
    fake.cx = g.x0 + uniform(rng, 0.0, g.cell_x * static_cast<double>(g.width));
    fake.cy = g.y0 + uniform(rng, 0.0, g.cell_y * static_cast<double>(g.height));
    fake.cz = p.h / 2;
    fake.yaw = wrap_angle(uniform(rng, -kPi, kPi));
    fake.score = uniform(rng, 0.01, noise.spurious_score_max);
    if (!drop) out.boxes.push_back(n);
    if (spurious) out.boxes.push_back(fake);
  }
  return out;
}

Detector make_detector(const DetectorSpec& spec, const OracleHeads& heads) {
  spec.validate();
  switch (spec.kind) {
    case DetectorKind::kOracle:
      return [heads](const Frame& f) { return oracle_detect(f, heads); };
    case DetectorKind::kNoisy:
      return [heads, noise = spec.noise, seed = spec.seed](const Frame& f) {
        return noisy_detect(f, heads, noise, seed);
      };
    case DetectorKind::kReplay: {
      const auto sets =
          fs::is_directory(spec.replay_path) ? read_detection_dir(spec.replay_path) : read_detections(spec.replay_path);
      auto table = std::make_shared<std::map<std::string, DetectionSet>>();
      for (const DetectionSet& s : sets) (*table)[s.frame_id] = s;
      return [table, name = spec.name](const Frame& f) {
        if (f.tag != 0) fail(ErrorKind::kConfiguration, "replay detector '" + name + "' cannot run on transformed frames");
        auto it = table->find(f.id);
        DetectionSet out = it == table->end() ? DetectionSet{f.id, "replay", {}} : it->second;
        out.source = "replay";
        return out;
      };
    }
  }
  fail(ErrorKind::kConfiguration, "unknown detector kind");
}

// ---------------------------------------------------------------------------
// Plot export

namespace {

std::vector<std::size_t> subsample(std::size_t n, std::size_t cap) {
  std::vector<std::size_t> idx;
  if (n == 0 || cap == 0) return idx;
  const std::size_t step = (n + cap - 1) / cap;
  for (std::size_t i = 0; i < n; i += step) idx.push_back(i);
  return idx;
}

std::string g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  f << text;
  if (!f) fail(ErrorKind::kIo, "failed writing " + path.string());
}

}  // namespace

void write_plot_csv(const fs::path& path, const PointCloud& points,
                    const std::vector<std::pair<std::string, std::vector<Box3D>>>& layers, std::size_t max_points) {
  std::string out = "kind,a,b,c,x0,y0,x1,y1,x2,y2,x3,y3\n";
  for (std::size_t i : subsample(points.size(), max_points)) {
    const Eigen::Vector3d p = points.position(i);
    out += "point," + g9(p.x()) + "," + g9(p.y()) + "," + g9(p.z()) + ",,,,,,,,\n";
  }
  for (const auto& [name, boxes] : layers) {
    for (const Box3D& b : boxes) {
      out += name + "," + std::string(class_name(b.cls)) + "," + g9(b.score) + ",";
      for (const Eigen::Vector2d& c : b.bev_corners()) out += "," + g9(c.x()) + "," + g9(c.y());
      out += "\n";
    }
  }
  write_text(path, out);
}

void write_plot_svg(const fs::path& path, const PointCloud& points,
                    const std::vector<std::pair<std::string, std::vector<Box3D>>>& layers, std::size_t max_points,
                    double extent, double scale) {
  if (!(extent > 0 && scale > 0)) fail(ErrorKind::kInvalidParameter, "plot extent and scale must be positive");
  const double size = 2 * extent * scale;
  // Vehicle x points up the page, y to the left.
  auto px = [&](double y) { return g9((extent - y) * scale); };
  auto py = [&](double x) { return g9((extent - x) * scale); };
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + g9(size) + "\" height=\"" + g9(size) +
                    "\" viewBox=\"0 0 " + g9(size) + " " + g9(size) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<g fill=\"#888\">\n";
  for (std::size_t i : subsample(points.size(), max_points)) {
    const Eigen::Vector3d p = points.position(i);
    out += "<circle cx=\"" + px(p.y()) + "\" cy=\"" + py(p.x()) + "\" r=\"0.6\"/>\n";
  }
  out += "</g>\n";
  static const char* kColors[] = {"#2a7", "#d33", "#36c", "#c80", "#a3c"};
  std::size_t layer = 0;
  for (const auto& [name, boxes] : layers) {
    out += "<g fill=\"none\" stroke=\"" + std::string(kColors[layer++ % 5]) + "\" stroke-width=\"1\" class=\"" + name +
           "\">\n";
    for (const Box3D& b : boxes) {
      out += "<polygon points=\"";
      for (const Eigen::Vector2d& c : b.bev_corners()) out += px(c.y()) + "," + py(c.x()) + " ";
      out += "\"/>\n";
    }
    out += "</g>\n";
  }
  out += "</svg>\n";
  write_text(path, out);
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

template <typename T>
void maybe(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::array<double, 3> vec3(const Json& j, std::string_view what) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) fail(ErrorKind::kConfiguration, std::string(what) + " needs 3 values");
  return {v[0], v[1], v[2]};
}

}  // namespace

void to_json(Json& j, const SceneSpec& s) {
  Json counts = Json::object(), sizes = Json::object();
  for (ObjectClass c : kAllClasses) {
    const std::string n(class_name(c));
    counts[n] = s.counts[class_index(c)];
    const SizePrior& p = s.sizes[class_index(c)];
    sizes[n] = {p.l, p.w, p.h};
  }
  j = {{"seed", s.seed},
       {"counts", counts},
       {"sizes", sizes},
       {"size_jitter", s.size_jitter},
       {"placement", s.placement},
       {"min_gap", s.min_gap},
       {"point_density", s.point_density},
       {"clutter_density", s.clutter_density},
       {"sweeps", s.sweeps},
       {"sweep_period", s.sweep_period},
       {"ego_velocity", s.ego_velocity},
       {"max_retries", s.max_retries},
       {"paint_channels", s.paint_channels},
       {"cameras", s.cameras}};
}

void from_json(const Json& j, SceneSpec& s) {
  expect_keys(j,
              {"seed", "counts", "sizes", "size_jitter", "placement", "min_gap", "point_density", "clutter_density",
               "sweeps", "sweep_period", "ego_velocity", "max_retries", "paint_channels", "cameras"},
              "scene");
  maybe(j, "seed", s.seed);
  if (j.contains("counts")) {
    expect_keys(j.at("counts"), {"vehicle", "pedestrian", "cyclist"}, "scene.counts");
    for (ObjectClass c : kAllClasses) maybe(j.at("counts"), std::string(class_name(c)).c_str(), s.counts[class_index(c)]);
  }
  if (j.contains("sizes")) {
    expect_keys(j.at("sizes"), {"vehicle", "pedestrian", "cyclist"}, "scene.sizes");
    for (ObjectClass c : kAllClasses) {
      const std::string n(class_name(c));
      if (!j.at("sizes").contains(n)) continue;
      const auto v = vec3(j.at("sizes").at(n), "scene.sizes." + n);
      s.sizes[class_index(c)] = {v[0], v[1], v[2]};
    }
  }
  maybe(j, "size_jitter", s.size_jitter);
  maybe(j, "placement", s.placement);
  maybe(j, "min_gap", s.min_gap);
  maybe(j, "point_density", s.point_density);
  maybe(j, "clutter_density", s.clutter_density);
  maybe(j, "sweeps", s.sweeps);
  maybe(j, "sweep_period", s.sweep_period);
  maybe(j, "ego_velocity", s.ego_velocity);
  maybe(j, "max_retries", s.max_retries);
  maybe(j, "paint_channels", s.paint_channels);
  maybe(j, "cameras", s.cameras);
  s.validate();
}

void to_json(Json& j, const NoiseSpec& s) {
  j = {{"drop_rate", s.drop_rate},       {"spurious_rate", s.spurious_rate}, {"center_sigma", s.center_sigma},
       {"size_sigma", s.size_sigma},     {"yaw_sigma", s.yaw_sigma},         {"score_mean", s.score_mean},
       {"score_jitter", s.score_jitter}, {"spurious_score_max", s.spurious_score_max}};
}

void from_json(const Json& j, NoiseSpec& s) {
  expect_keys(j,
              {"drop_rate", "spurious_rate", "center_sigma", "size_sigma", "yaw_sigma", "score_mean", "score_jitter",
               "spurious_score_max"},
              "noise");
  maybe(j, "drop_rate", s.drop_rate);
  maybe(j, "spurious_rate", s.spurious_rate);
  maybe(j, "center_sigma", s.center_sigma);
  maybe(j, "size_sigma", s.size_sigma);
  maybe(j, "yaw_sigma", s.yaw_sigma);
  maybe(j, "score_mean", s.score_mean);
  maybe(j, "score_jitter", s.score_jitter);
  maybe(j, "spurious_score_max", s.spurious_score_max);
  s.validate();
}

void to_json(Json& j, const VoxelGridSpec& s) {
  j = {{"voxel_size", {s.voxel_size.x(), s.voxel_size.y(), s.voxel_size.z()}},
       {"range", s.range},
       {"max_points_per_voxel", s.max_points_per_voxel},
       {"max_voxels", s.max_voxels}};
}

void from_json(const Json& j, VoxelGridSpec& s) {
  expect_keys(j, {"voxel_size", "range", "max_points_per_voxel", "max_voxels"}, "voxel");
  if (j.contains("voxel_size")) {
    const auto v = vec3(j.at("voxel_size"), "voxel.voxel_size");
    s.voxel_size = {v[0], v[1], v[2]};
  }
  maybe(j, "range", s.range);
  maybe(j, "max_points_per_voxel", s.max_points_per_voxel);
  maybe(j, "max_voxels", s.max_voxels);
  s.validate();
}

namespace {

Json targets_to_json(const TargetConfig& t) {
  return {{"offset_radius", t.offset_radius},
          {"max_objects", t.max_objects},
          {"min_gaussian_radius", t.min_gaussian_radius},
          {"gaussian_min_overlap", t.gaussian_min_overlap},
          {"focal_alpha", t.focal_alpha},
          {"focal_beta", t.focal_beta},
          {"weights", {{"offset", t.weight_offset}, {"z", t.weight_z}, {"size", t.weight_size}, {"orientation", t.weight_orientation}}}};
}

void targets_from_json(const Json& j, TargetConfig& t) {
  expect_keys(j,
              {"offset_radius", "max_objects", "min_gaussian_radius", "gaussian_min_overlap", "focal_alpha",
               "focal_beta", "weights"},
              "targets");
  maybe(j, "offset_radius", t.offset_radius);
  maybe(j, "max_objects", t.max_objects);
  maybe(j, "min_gaussian_radius", t.min_gaussian_radius);
  maybe(j, "gaussian_min_overlap", t.gaussian_min_overlap);
  maybe(j, "focal_alpha", t.focal_alpha);
  maybe(j, "focal_beta", t.focal_beta);
  if (j.contains("weights")) {
    const Json& w = j.at("weights");
    expect_keys(w, {"offset", "z", "size", "orientation"}, "targets.weights");
    maybe(w, "offset", t.weight_offset);
    maybe(w, "z", t.weight_z);
    maybe(w, "size", t.weight_size);
    maybe(w, "orientation", t.weight_orientation);
  }
  t.validate();
}

}  // namespace

PipelineConfig parse_pipeline_config(const Json& j, const fs::path& base_dir) {
  PipelineConfig c;
  try {
    expect_keys(j,
                {"seed", "jobs", "frames", "output_dir", "scene", "detection_range", "voxel", "bev_downsample",
                 "paint", "targets", "decode", "detectors", "tta", "thresholds", "wbf", "matching", "plot"},
                "pipeline");
    maybe(j, "seed", c.seed);
    maybe(j, "jobs", c.jobs);
    maybe(j, "frames", c.frames);
    if (j.contains("output_dir")) {
      const fs::path out = j.at("output_dir").get<std::string>();
      c.output_dir = out.is_relative() && !base_dir.empty() ? base_dir / out : out;
    }
    maybe(j, "scene", c.scene);
    maybe(j, "detection_range", c.detection_range);
    c.voxel.range = c.detection_range;
    if (j.contains("voxel")) {
      c.voxel = j.at("voxel").get<VoxelGridSpec>();
      if (!j.at("voxel").contains("range")) c.voxel.range = c.detection_range;
    }
    maybe(j, "bev_downsample", c.bev_downsample);
    if (j.contains("paint")) {
      expect_keys(j.at("paint"), {"binary_box_scores"}, "paint");
      maybe(j.at("paint"), "binary_box_scores", c.paint.binary_box_scores);
    }
    if (j.contains("targets")) targets_from_json(j.at("targets"), c.targets);
    if (j.contains("decode")) {
      const Json& d = j.at("decode");
      expect_keys(d, {"score_threshold", "max_detections", "min_size"}, "decode");
      maybe(d, "score_threshold", c.decode.score_threshold);
      maybe(d, "max_detections", c.decode.max_detections);
      maybe(d, "min_size", c.decode.min_size);
    }
    if (j.contains("detectors")) {
      c.detectors.clear();
      for (const Json& d : j.at("detectors")) {
        expect_keys(d, {"name", "kind", "seed", "noise", "replay"}, "detectors[]");
        DetectorSpec s;
        maybe(d, "name", s.name);
        if (d.contains("kind")) s.kind = parse_detector_kind(d.at("kind").get<std::string>());
        maybe(d, "seed", s.seed);
        maybe(d, "noise", s.noise);
        if (d.contains("replay")) {
          const fs::path p = d.at("replay").get<std::string>();
          s.replay_path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
        }
        c.detectors.push_back(std::move(s));
      }
    }
    if (j.contains("tta")) {
      const Json& t = j.at("tta");
      expect_keys(t, {"enabled", "policy", "yaw_deg", "pitch_deg", "roll_deg", "scale", "tz"}, "tta");
      maybe(t, "enabled", c.tta);
      if (t.contains("policy")) c.tta_policy = parse_policy(t.at("policy").get<std::string>());
      maybe(t, "yaw_deg", c.tta_families.yaw_deg);
      maybe(t, "pitch_deg", c.tta_families.pitch_deg);
      maybe(t, "roll_deg", c.tta_families.roll_deg);
      maybe(t, "scale", c.tta_families.scale);
      maybe(t, "tz", c.tta_families.tz);
    }
    if (j.contains("thresholds")) {
      const Json& t = j.at("thresholds");
      if (t.is_string()) {
        const std::string s = t.get<std::string>();
        if (s == "preset:3d") {
          c.thresholds = thresholds_3d();
        } else if (s == "preset:domain_adaptation") {
          c.thresholds = thresholds_domain_adaptation();
        } else {
          const fs::path p = s;
          c.thresholds = load_thresholds(p.is_relative() && !base_dir.empty() ? base_dir / p : p);
        }
      } else {
        c.thresholds = t.get<FusionThresholds>();
      }
    }
    if (j.contains("wbf")) {
      expect_keys(j.at("wbf"), {"scale_by_models"}, "wbf");
      maybe(j.at("wbf"), "scale_by_models", c.wbf.scale_by_models);
    }
    maybe(j, "matching", c.matching);
    if (j.contains("plot")) {
      const Json& p = j.at("plot");
      expect_keys(p, {"enabled", "frames", "max_points"}, "plot");
      maybe(p, "enabled", c.plot.enabled);
      maybe(p, "frames", c.plot.frames);
      maybe(p, "max_points", c.plot.max_points);
    }
  } catch (const Json::exception& e) {
    fail(ErrorKind::kConfiguration, std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  return parse_pipeline_config(read_json(path), path.parent_path());
}

Json pipeline_config_to_json(const PipelineConfig& c) {
  Json dets = Json::array();
  for (const DetectorSpec& d : c.detectors) {
    Json e = {{"name", d.name}, {"kind", detector_kind_name(d.kind)}, {"seed", d.seed}, {"noise", d.noise}};
    if (!d.replay_path.empty()) e["replay"] = d.replay_path.generic_string();
    dets.push_back(std::move(e));
  }
  return {{"seed", c.seed},
          {"jobs", c.jobs},
          {"frames", c.frames},
          {"output_dir", c.output_dir.generic_string()},
          {"scene", c.scene},
          {"detection_range", c.detection_range},
          {"voxel", c.voxel},
          {"bev_downsample", c.bev_downsample},
          {"paint", {{"binary_box_scores", c.paint.binary_box_scores}}},
          {"targets", targets_to_json(c.targets)},
          {"decode",
           {{"score_threshold", c.decode.score_threshold},
            {"max_detections", c.decode.max_detections},
            {"min_size", c.decode.min_size}}},
          {"detectors", dets},
          {"tta",
           {{"enabled", c.tta},
            {"policy", policy_name(c.tta_policy)},
            {"yaw_deg", c.tta_families.yaw_deg},
            {"pitch_deg", c.tta_families.pitch_deg},
            {"roll_deg", c.tta_families.roll_deg},
            {"scale", c.tta_families.scale},
            {"tz", c.tta_families.tz}}},
          {"thresholds", c.thresholds},
          {"wbf", {{"scale_by_models", c.wbf.scale_by_models}}},
          {"matching", c.matching},
          {"plot", {{"enabled", c.plot.enabled}, {"frames", c.plot.frames}, {"max_points", c.plot.max_points}}}};
}

void PipelineConfig::validate() const {
  if (jobs == 0) fail(ErrorKind::kConfiguration, "jobs must be positive");
  scene.validate();
  kp3d::validate(detection_range);
  voxel.validate();
  if (!(voxel.range == detection_range)) fail(ErrorKind::kConfiguration, "voxel range must equal the detection range");
  (void)bev_dims(voxel, bev_downsample);
  targets.validate();
  if (detectors.empty()) fail(ErrorKind::kConfiguration, "at least one detector is required");
  for (std::size_t i = 0; i < detectors.size(); ++i) {
    detectors[i].validate();
    for (std::size_t k = 0; k < i; ++k) {
      if (detectors[k].name == detectors[i].name) fail(ErrorKind::kConfiguration, "duplicate detector name " + detectors[i].name);
    }
    if (tta && detectors[i].kind == DetectorKind::kReplay) {
      fail(ErrorKind::kConfiguration, "replay detector '" + detectors[i].name + "' cannot be combined with TTA");
    }
  }
  if (tta) TtaPlan::build(tta_families, tta_policy).validate();
  thresholds.validate();
  if (!wbf.model_weights.empty()) fail(ErrorKind::kConfiguration, "pipeline fusion uses equal model weights");
  matching.validate();
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

struct FrameOutput {
  std::string id;
  std::vector<Box3D> gt;
  std::vector<DetectionSet> singles;  // per detector, thresholded by fusion
  DetectionSet ensemble;              // no TTA
  DetectionSet final_set;
  std::size_t points = 0, voxels = 0, bev_cells = 0;
};

template <typename Fn>
auto stage(const char* name, const std::string& frame_id, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    fail(ErrorKind::kPipeline, std::string("stage '") + name + "' failed on frame '" + frame_id + "': " + e.what());
  }
}

std::string frame_name(std::size_t f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu", f);
  return buf;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  const fs::path root = cfg.output_dir;
  fs::create_directories(root / "predictions");
  fs::create_directories(root / "labels");
  for (const DetectorSpec& d : cfg.detectors) fs::create_directories(root / "singles" / d.name);
  if (cfg.plot.enabled) fs::create_directories(root / "plots");

  OracleHeads heads{BevGeometry::from_voxels(cfg.voxel, cfg.bev_downsample), cfg.targets, cfg.decode};
  std::vector<Detector> detectors;
  for (const DetectorSpec& d : cfg.detectors) detectors.push_back(make_detector(d, heads));
  const TtaPlan plan = cfg.tta ? TtaPlan::build(cfg.tta_families, cfg.tta_policy) : TtaPlan::identity();
  std::size_t identity_index = 0;
  while (!plan.transforms[identity_index].is_identity()) ++identity_index;

  PaintOptions paint_opts = cfg.paint;
  paint_opts.channels = cfg.scene.paint_channels;

  spdlog::info("pipeline: {} frames, {} detectors, {} TTA transforms", cfg.frames, detectors.size(),
               plan.transforms.size());
  std::vector<FrameOutput> frames(cfg.frames);
  parallel_for(cfg.frames, cfg.jobs, [&](std::size_t f) {
    FrameOutput& out = frames[f];
    out.id = frame_name(f);
    SceneSpec spec = cfg.scene;
    spec.seed = mix_seed(mix_seed(cfg.seed, cfg.scene.seed), f);
    const Scene scene = stage("simulate", out.id, [&] { return generate_scene(spec, out.id); });
    // Ground truth is what the detection range can see.
    for (const Box3D& b : scene.boxes) {
      if (cfg.detection_range.x.contains(b.cx) && cfg.detection_range.y.contains(b.cy)) out.gt.push_back(b);
    }
    PointCloud points = stage("densify", out.id, [&] {
      return densify(scene.sweeps.back(), std::span<const Sweep>(scene.sweeps.data(), scene.sweeps.size() - 1));
    });
    points = stage("paint", out.id, [&] { return paint(points, scene.paint_sources, paint_opts); });
    points = stage("filter", out.id, [&] { return filter_range(points, cfg.detection_range); });
    stage("voxelize", out.id, [&] {
      const VoxelSet vox = voxelize(points, cfg.voxel);
      const BevGrid bev = to_bev(vox, cfg.voxel, cfg.bev_downsample);
      out.points = points.size();
      out.voxels = vox.size();
      out.bev_cells = static_cast<std::size_t>(std::count_if(bev.counts.begin(), bev.counts.end(), [](auto n) { return n > 0; }));
      return 0;
    });
    const Frame frame{out.id, std::move(points), out.gt, 0};
    std::vector<DetectionSet> all_sets;
    stage("detect", out.id, [&] {
      for (std::size_t d = 0; d < detectors.size(); ++d) {
        auto sets = collect_tta_sets(detectors[d], frame, plan, 1);
        for (DetectionSet& s : sets) s.source = cfg.detectors[d].name + "/" + s.source;
        out.singles.push_back(sets[identity_index]);
        all_sets.insert(all_sets.end(), std::make_move_iterator(sets.begin()), std::make_move_iterator(sets.end()));
      }
      return 0;
    });
    stage("fuse", out.id, [&] {
      for (DetectionSet& s : out.singles) {
        s = wbf_fuse(std::span<const DetectionSet>(&s, 1), cfg.thresholds, cfg.wbf);
      }
      std::vector<DetectionSet> plain;
      for (std::size_t d = 0; d < detectors.size(); ++d) plain.push_back(all_sets[d * plan.transforms.size() + identity_index]);
      out.ensemble = wbf_fuse(plain, cfg.thresholds, cfg.wbf);
      out.final_set = cfg.tta ? wbf_fuse(all_sets, cfg.thresholds, cfg.wbf) : out.ensemble;
      for (DetectionSet* s : {&out.ensemble, &out.final_set}) s->frame_id = out.id;
      return 0;
    });
    stage("write", out.id, [&] {
      write_detections(root / "predictions" / (out.id + ".det"), std::span<const DetectionSet>(&out.final_set, 1));
      const DetectionSet gt{out.id, "gt", out.gt};
      write_detections(root / "labels" / (out.id + ".det"), std::span<const DetectionSet>(&gt, 1), true);
      for (std::size_t d = 0; d < detectors.size(); ++d) {
        write_detections(root / "singles" / cfg.detectors[d].name / (out.id + ".det"),
                         std::span<const DetectionSet>(&out.singles[d], 1));
      }
      if (cfg.plot.enabled && f < cfg.plot.frames) {
        const std::vector<std::pair<std::string, std::vector<Box3D>>> layers = {{"gt", out.gt},
                                                                                {"pred", out.final_set.boxes}};
        const double extent = std::max({std::abs(cfg.detection_range.x.lo), std::abs(cfg.detection_range.x.hi),
                                        std::abs(cfg.detection_range.y.lo), std::abs(cfg.detection_range.y.hi)});
        write_plot_csv(root / "plots" / (out.id + ".csv"), frame.points, layers, cfg.plot.max_points);
        write_plot_svg(root / "plots" / (out.id + ".svg"), frame.points, layers, cfg.plot.max_points, extent);
      }
      return 0;
    });
  });

  PipelineResult res;
  for (const FrameOutput& f : frames) {
    res.ground_truth.push_back({f.id, "gt", f.gt});
    res.predictions.push_back(f.final_set);
  }
  res.final_report = evaluate(res.predictions, res.ground_truth, cfg.matching, cfg.jobs);
  Json report = {{"final", report_to_json(res.final_report, true)}};
  if (cfg.tta) {
    std::vector<DetectionSet> ens;
    for (const FrameOutput& f : frames) ens.push_back(f.ensemble);
    res.ensemble_no_tta = evaluate(ens, res.ground_truth, cfg.matching, cfg.jobs);
    report["ensemble_no_tta"] = report_to_json(*res.ensemble_no_tta);
  }
  Json singles = Json::object();
  for (std::size_t d = 0; d < cfg.detectors.size(); ++d) {
    std::vector<DetectionSet> sets;
    for (const FrameOutput& f : frames) sets.push_back(f.singles[d]);
    const EvalReport r = evaluate(sets, res.ground_truth, cfg.matching, cfg.jobs);
    singles[cfg.detectors[d].name] = report_to_json(r);
    res.singles.emplace(cfg.detectors[d].name, r);
  }
  report["singles"] = std::move(singles);
  write_json(root / "report.json", report);

  // Manifest: everything but itself, sorted, with sizes and digests.
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), root);
    if (rel == "manifest.json") continue;
    files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  Json artifacts = Json::array();
  for (const fs::path& rel : files) {
    const std::string bytes = read_bytes(root / rel);
    char digest[17];
    std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
    artifacts.push_back({{"path", rel.generic_string()}, {"bytes", bytes.size()}, {"fnv1a", digest}});
  }
  Json frame_stats = Json::array();
  for (const FrameOutput& f : frames) {
    frame_stats.push_back({{"id", f.id},
                           {"points", f.points},
                           {"voxels", f.voxels},
                           {"bev_cells", f.bev_cells},
                           {"gt", f.gt.size()},
                           {"predictions", f.final_set.boxes.size()}});
  }
  Json config = pipeline_config_to_json(cfg);
  config.erase("output_dir");
  config.erase("jobs");
  write_json(root / "manifest.json", {{"config", config}, {"frames", frame_stats}, {"artifacts", artifacts}});
  files.push_back("manifest.json");
  std::sort(files.begin(), files.end());
  res.artifacts = std::move(files);
  spdlog::info("pipeline: mAP {:.4f} mAPH {:.4f} ({})", res.final_report.map, res.final_report.maph,
               difficulty_name(res.final_report.difficulty));
  return res;
}

}  // namespace kp3d
