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

#include "kp3d/augment.hpp"

#include <spdlog/spdlog.h>

#include <numeric>

#include "kp3d/error.hpp"
#include "kp3d/serialize.hpp"

namespace kp3d {

std::size_t GtDatabase::total() const {
  std::size_t n = 0;
  for (const auto& list : entries) n += list.size();
  return n;
}

GtDatabase build_gt_database(std::span<const LabeledFrame> frames) {
  GtDatabase db;
  if (!frames.empty()) db.paint_channels = frames.front().points.paint_channels();
  for (const LabeledFrame& frame : frames) {
    if (frame.points.paint_channels() != db.paint_channels) {
      fail(ErrorKind::kConfiguration, "frame " + frame.id + " has a different paint channel count");
    }
    for (const Box3D& box : frame.boxes) {
      validate(box);
      GtEntry entry{box, PointCloud(db.paint_channels), frame.id};
      for (std::size_t i = 0; i < frame.points.size(); ++i) {
        if (point_in_box(frame.points.position(i), box)) entry.points.push_row(frame.points.row(i));
      }
      db.entries[class_index(box.cls)].push_back(std::move(entry));
    }
  }
  return db;
}

void save_gt_database(const GtDatabase& db, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "entries");
  Json index = Json::array();
  for (ObjectClass c : kAllClasses) {
    const auto& list = db.of(c);
    for (std::size_t i = 0; i < list.size(); ++i) {
      const GtEntry& e = list[i];
      const std::string rel = "entries/" + std::string(class_name(c)) + "_" + std::to_string(i) + ".pcf";
      write_frame(dir / rel, e.points);
      const Box3D& b = e.box;
      index.push_back({{"class", class_name(c)},
                       {"box", {b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw}},
                       {"score", b.score},
                       {"difficulty", difficulty_name(b.difficulty)},
                       {"points", e.points.size()},
                       {"path", rel},
                       {"source_frame", e.source_frame}});
    }
  }
  write_json(dir / "index.json", Json{{"paint_channels", db.paint_channels}, {"entries", index}});
}

GtDatabase load_gt_database(const std::filesystem::path& dir) {
  const Json root = read_json(dir / "index.json");
  expect_keys(root, {"paint_channels", "entries"}, "gt database index");
  GtDatabase db;
  db.paint_channels = root.at("paint_channels").get<std::size_t>();
  for (const Json& item : root.at("entries")) {
    expect_keys(item, {"class", "box", "score", "difficulty", "points", "path", "source_frame"}, "gt database entry");
    Json box_json{{"class", item.at("class")}, {"box", item.at("box")}, {"score", item.at("score")},
                  {"difficulty", item.at("difficulty")}};
    GtEntry e{box_json.get<Box3D>(), read_frame(dir / item.at("path").get<std::string>()),
              item.at("source_frame").get<std::string>()};
    if (e.points.size() != item.at("points").get<std::size_t>()) {
      fail(ErrorKind::kFormat, "gt database entry " + item.at("path").get<std::string>() + " point count mismatch");
    }
    if (e.points.paint_channels() != db.paint_channels) {
      fail(ErrorKind::kFormat, "gt database entry channel count mismatch");
    }
    db.entries[class_index(e.box.cls)].push_back(std::move(e));
  }
  return db;
}

void AugmentConfig::validate() const {
  auto ordered = [](const AxisRange& r) { return r.lo <= r.hi; };
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    fail(ErrorKind::kInvalidParameter, "flip probability must be in [0, 1]");
  }
  if (!ordered(rotation) || !ordered(scale)) fail(ErrorKind::kInvalidParameter, "augment range is inverted");
  if (!(scale.lo > 0.0)) fail(ErrorKind::kInvalidParameter, "augment scale must be positive");
  for (const AxisRange& r : translation) {
    if (!ordered(r)) fail(ErrorKind::kInvalidParameter, "augment translation range is inverted");
  }
}

PasteResult sample_paste(const PointCloud& points, std::span<const Box3D> boxes, const GtDatabase& db,
                         const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (db.total() > 0 && db.paint_channels != points.paint_channels()) {
    fail(ErrorKind::kConfiguration, "gt database channel count differs from the frame");
  }
  PasteResult out{points, {boxes.begin(), boxes.end()}, {}};
  for (ObjectClass c : kAllClasses) {
    const std::size_t want = cfg.samples_per_class[class_index(c)];
    const auto& pool = db.of(c);
    if (want == 0 || pool.empty()) continue;
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(std::span<std::size_t>(order), rng);

    std::size_t& placed = out.placed[class_index(c)];
    for (std::size_t idx : order) {
      if (placed == want) break;
      const GtEntry& cand = pool[idx];
      bool collides = false;
      for (const Box3D& existing : out.boxes) {
        if (bev_iou(cand.box, existing) > 0.0) {
          collides = true;
          break;
        }
      }
      if (collides) continue;
      out.boxes.push_back(cand.box);
      out.points.append(cand.points);
      ++placed;
    }
    if (placed < want) {
      spdlog::debug("sample_paste: placed {} of {} {} samples", placed, want, class_name(c));
    }
  }
  return out;
}

PointCloud transform_cloud(const PointCloud& points, const BoxTransform& t) {
  PointCloud out = points;
  for (std::size_t i = 0; i < out.size(); ++i) out.set_position(i, t.apply(points.position(i)));
  return out;
}

AugmentResult global_augment(const PointCloud& points, std::span<const Box3D> boxes, const AugmentConfig& cfg,
                             Rng& rng) {
  cfg.validate();
  TransformParams t;
  // Fixed draw order keeps streams reproducible when ranges change width.
  t.flip_y = bernoulli(rng, cfg.flip_probability);
  t.yaw = uniform(rng, cfg.rotation.lo, cfg.rotation.hi);
  t.scale = uniform(rng, cfg.scale.lo, cfg.scale.hi);
  t.tx = uniform(rng, cfg.translation[0].lo, cfg.translation[0].hi);
  t.ty = uniform(rng, cfg.translation[1].lo, cfg.translation[1].hi);
  t.tz = uniform(rng, cfg.translation[2].lo, cfg.translation[2].hi);

  const BoxTransform bt = BoxTransform::from_params(t);
  AugmentResult out{transform_cloud(points, bt), {}, t};
  out.boxes.reserve(boxes.size());
  for (const Box3D& b : boxes) out.boxes.push_back(bt.apply(b));
  return out;
}

}  // namespace kp3d
