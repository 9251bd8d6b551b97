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

#include "kp3d/ensemble.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "kp3d/augment.hpp"
#include "kp3d/error.hpp"
#include "kp3d/parallel.hpp"
#include "kp3d/random.hpp"

namespace kp3d {

namespace {

constexpr double kDeg = kPi / 180.0;

// Lattice values are snapped to 1e-9 so 0.40 + 8 * 0.05 prints and compares as 0.8.
double snap(double v) { return std::round(v * 1e9) / 1e9; }

}  // namespace

// ---------------------------------------------------------------------------
// TtaPlan

TtaPlan TtaPlan::identity() { return {{TransformParams{}}}; }

TtaPlan TtaPlan::build(const TtaFamilies& f, TtaPolicy policy) {
  TtaPlan plan;
  std::vector<double> yaws = f.yaw_deg;
  if (yaws.empty()) yaws.push_back(0.0);
  for (double y : yaws) {
    TransformParams base;
    base.yaw = y * kDeg;
    if (policy == TtaPolicy::kFullCross) {
      auto with_neutral = [](std::vector<double> v, double neutral) {
        v.insert(v.begin(), neutral);
        return v;
      };
      for (double p : with_neutral(f.pitch_deg, 0.0)) {
        for (double r : with_neutral(f.roll_deg, 0.0)) {
          for (double s : with_neutral(f.scale, 1.0)) {
            for (double z : with_neutral(f.tz, 0.0)) {
              TransformParams t = base;
              t.pitch = p * kDeg;
              t.roll = r * kDeg;
              t.scale = s;
              t.tz = z;
              plan.transforms.push_back(t);
            }
          }
        }
      }
      continue;
    }
    plan.transforms.push_back(base);
    if (policy == TtaPolicy::kYawOnly) continue;
    for (double p : f.pitch_deg) {
      TransformParams t = base;
      t.pitch = p * kDeg;
      plan.transforms.push_back(t);
    }
    for (double r : f.roll_deg) {
      TransformParams t = base;
      t.roll = r * kDeg;
      plan.transforms.push_back(t);
    }
    for (double s : f.scale) {
      TransformParams t = base;
      t.scale = s;
      plan.transforms.push_back(t);
    }
    for (double z : f.tz) {
      TransformParams t = base;
      t.tz = z;
      plan.transforms.push_back(t);
    }
  }
  // Degenerate family values can repeat a transform; keep first occurrences.
  std::vector<TransformParams> unique;
  for (const auto& t : plan.transforms) {
    if (std::find(unique.begin(), unique.end(), t) == unique.end()) unique.push_back(t);
  }
  plan.transforms = std::move(unique);
  plan.validate();
  return plan;
}

void TtaPlan::validate() const {
  bool has_identity = false;
  for (const TransformParams& t : transforms) {
    if (!(t.scale > 0.0) || !std::isfinite(t.scale)) fail(ErrorKind::kConfiguration, "TTA transform scale must be positive");
    for (double v : {t.yaw, t.pitch, t.roll, t.tx, t.ty, t.tz}) {
      if (!std::isfinite(v)) fail(ErrorKind::kConfiguration, "TTA transform has a non-finite parameter");
    }
    has_identity = has_identity || t.is_identity();
  }
  if (!has_identity) fail(ErrorKind::kConfiguration, "TTA plan must contain the identity transform");
}

std::string_view policy_name(TtaPolicy p) {
  switch (p) {
    case TtaPolicy::kOneAtATime: return "one_at_a_time";
    case TtaPolicy::kFullCross: return "full_cross";
    case TtaPolicy::kYawOnly: return "yaw_only";
  }
  return "?";
}

TtaPolicy parse_policy(std::string_view name) {
  for (TtaPolicy p : {TtaPolicy::kOneAtATime, TtaPolicy::kFullCross, TtaPolicy::kYawOnly}) {
    if (policy_name(p) == name) return p;
  }
  fail(ErrorKind::kConfiguration, "unknown TTA policy '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Thresholds

void FusionThresholds::validate() const {
  for (ObjectClass c : kAllClasses) {
    const ClassThresholds& t = of(c);
    const std::string name(class_name(c));
    if (!(t.iou > 0.0 && t.iou <= 1.0)) fail(ErrorKind::kConfiguration, name + ": iou threshold must be in (0, 1]");
    if (!(t.s1 >= 0.0 && t.s1 <= 1.0)) fail(ErrorKind::kConfiguration, name + ": s1 must be in [0, 1]");
    if (!(t.s2 >= 0.0 && t.s2 <= 1.0)) fail(ErrorKind::kConfiguration, name + ": s2 must be in [0, 1]");
  }
}

FusionThresholds thresholds_3d() {
  FusionThresholds t;
  t.of(ObjectClass::kVehicle) = {0.80, 0.10, 0.03};
  t.of(ObjectClass::kPedestrian) = {0.70, 0.15, 0.03};
  t.of(ObjectClass::kCyclist) = {0.65, 0.25, 0.03};
  return t;
}

FusionThresholds thresholds_domain_adaptation() {
  FusionThresholds t = thresholds_3d();
  for (auto& c : t.per_class) c.s2 = 0.05;
  return t;
}

void to_json(Json& j, const FusionThresholds& t) {
  j = Json::object();
  for (ObjectClass c : kAllClasses) {
    const ClassThresholds& v = t.of(c);
    j[std::string(class_name(c))] = {{"iou", v.iou}, {"s1", v.s1}, {"s2", v.s2}};
  }
}

void from_json(const Json& j, FusionThresholds& t) {
  expect_keys(j, {"vehicle", "pedestrian", "cyclist"}, "thresholds");
  for (ObjectClass c : kAllClasses) {
    const std::string name(class_name(c));
    if (!j.contains(name)) fail(ErrorKind::kConfiguration, "thresholds: missing class '" + name + "'");
    const Json& e = j.at(name);
    expect_keys(e, {"iou", "s1", "s2"}, "thresholds." + name);
    for (const char* k : {"iou", "s1", "s2"}) {
      if (!e.contains(k)) fail(ErrorKind::kConfiguration, "thresholds." + name + ": missing '" + k + "'");
    }
    t.of(c) = {e.at("iou").get<double>(), e.at("s1").get<double>(), e.at("s2").get<double>()};
  }
  t.validate();
}

FusionThresholds load_thresholds(const std::filesystem::path& path) { return read_json(path).get<FusionThresholds>(); }

void save_thresholds(const std::filesystem::path& path, const FusionThresholds& t) { write_json(path, Json(t)); }

// ---------------------------------------------------------------------------
// WBF

namespace {

struct Member {
  Box3D box;
  double weighted = 0;  // effective score
  std::size_t model = 0;
};

struct Cluster {
  std::vector<Member> members;
  Box3D fused;

  void refresh() {
    double sw = 0, cx = 0, cy = 0, cz = 0, l = 0, w = 0, h = 0, sn = 0, cs = 0;
    for (const Member& m : members) {
      const double e = m.weighted;
      sw += e;
      cx += e * m.box.cx;
      cy += e * m.box.cy;
      cz += e * m.box.cz;
      l += e * m.box.l;
      w += e * m.box.w;
      h += e * m.box.h;
      sn += e * std::sin(m.box.yaw);
      cs += e * std::cos(m.box.yaw);
    }
    fused = members.front().box;
    if (sw > 0) {
      fused.cx = cx / sw;
      fused.cy = cy / sw;
      fused.cz = cz / sw;
      fused.l = l / sw;
      fused.w = w / sw;
      fused.h = h / sw;
      fused.yaw = std::atan2(sn, cs);
    }
    // A single member is its own fused box, bit-exactly.
    if (members.size() == 1) fused = members.front().box;
  }
};

}  // namespace

DetectionSet wbf_fuse(std::span<const DetectionSet> sets, const FusionThresholds& thr, const WbfOptions& opts) {
  thr.validate();
  DetectionSet out;
  if (sets.empty()) return out;
  out.frame_id = sets.front().frame_id;
  out.source = "wbf";
  for (const DetectionSet& s : sets) {
    if (s.frame_id != out.frame_id) {
      fail(ErrorKind::kInvalidParameter, "wbf_fuse: sets mix frames '" + out.frame_id + "' and '" + s.frame_id + "'");
    }
  }
  const std::size_t T = sets.size();
  std::vector<double> weights = opts.model_weights;
  if (weights.empty()) weights.assign(T, 1.0);
  if (weights.size() != T) fail(ErrorKind::kInvalidParameter, "wbf_fuse: one model weight per set is required");
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) fail(ErrorKind::kInvalidParameter, "wbf_fuse: model weights must be positive");
  }
  const double mean_w = std::accumulate(weights.begin(), weights.end(), 0.0) / static_cast<double>(T);

  for (ObjectClass cls : kAllClasses) {
    const ClassThresholds& t = thr.of(cls);
    std::vector<Member> pool;
    for (std::size_t m = 0; m < T; ++m) {
      for (const Box3D& b : sets[m].boxes) {
        if (b.cls != cls || b.score < t.s1) continue;
        pool.push_back({b, b.score * weights[m] / mean_w, m});
      }
    }
    std::stable_sort(pool.begin(), pool.end(),
                     [](const Member& a, const Member& b) { return a.weighted > b.weighted; });
    std::vector<Cluster> clusters;
    for (const Member& m : pool) {
      Cluster* home = nullptr;
      for (Cluster& c : clusters) {
        if (bev_iou(c.fused, m.box) >= t.iou) {
          home = &c;
          break;
        }
      }
      if (!home) {
        clusters.emplace_back();
        home = &clusters.back();
      }
      home->members.push_back(m);
      home->refresh();
    }
    for (const Cluster& c : clusters) {
      double sum = 0;
      std::set<std::size_t> models;
      for (const Member& m : c.members) {
        sum += m.weighted;
        models.insert(m.model);
      }
      double score = sum / static_cast<double>(c.members.size());
      if (opts.scale_by_models) {
        score *= static_cast<double>(std::min(models.size(), T)) / static_cast<double>(T);
      }
      if (score < t.s2) continue;
      Box3D b = c.fused;
      b.score = std::min(score, 1.0);
      out.boxes.push_back(b);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// TTA

std::vector<DetectionSet> collect_tta_sets(const Detector& detector, const Frame& frame, const TtaPlan& plan,
                                           std::size_t jobs) {
  plan.validate();
  if (!detector) fail(ErrorKind::kInvalidParameter, "collect_tta_sets: no detector");
  std::vector<DetectionSet> sets(plan.transforms.size());
  parallel_for(plan.transforms.size(), jobs, [&](std::size_t i) {
    const TransformParams& tp = plan.transforms[i];
    try {
      DetectionSet det;
      if (tp.is_identity()) {
        det = detector(frame);
      } else {
        const BoxTransform fwd = BoxTransform::from_params(tp);
        Frame moved;
        moved.id = frame.id;
        moved.tag = mix_seed(frame.tag, i);
        moved.points = transform_cloud(frame.points, fwd);
        moved.annotations.reserve(frame.annotations.size());
        for (const Box3D& b : frame.annotations) moved.annotations.push_back(fwd.apply(b));
        det = detector(moved);
        const BoxTransform back = invert(tp);
        for (Box3D& b : det.boxes) b = back.apply(b);
      }
      det.frame_id = frame.id;
      det.source = "tta" + std::to_string(i);
      sets[i] = std::move(det);
    } catch (const std::exception& e) {
      fail(ErrorKind::kPipeline, "frame '" + frame.id + "': detector failed on TTA transform " + std::to_string(i) +
                                     " (yaw " + std::to_string(tp.yaw) + " rad, scale " + std::to_string(tp.scale) +
                                     "): " + e.what());
    }
  });
  return sets;
}

DetectionSet run_tta(const Detector& detector, const Frame& frame, const TtaPlan& plan, const FusionThresholds& thr,
                     const WbfOptions& opts, std::size_t jobs) {
  const auto sets = collect_tta_sets(detector, frame, plan, jobs);
  DetectionSet fused = wbf_fuse(sets, thr, opts);
  fused.frame_id = frame.id;
  return fused;
}

// ---------------------------------------------------------------------------
// Grid search

std::size_t GridAxis::count() const {
  if (!(step > 0.0) || !(hi >= lo)) fail(ErrorKind::kConfiguration, "grid axis needs step > 0 and hi >= lo");
  const double n = (hi - lo) / step;
  const double r = std::round(n);
  if (std::abs(n - r) > 1e-9 * std::max(1.0, r)) fail(ErrorKind::kConfiguration, "grid axis step does not divide its range");
  return static_cast<std::size_t>(r) + 1;
}

double GridAxis::value(std::size_t i) const { return snap(lo + static_cast<double>(i) * step); }

void GridSearchSpec::validate() const {
  (void)lattice_size();
  if (!(iou.lo > 0.0 && iou.hi <= 1.0)) fail(ErrorKind::kConfiguration, "iou axis must lie in (0, 1]");
  for (const GridAxis* a : {&s1, &s2}) {
    if (!(a->lo >= 0.0 && a->hi <= 1.0)) fail(ErrorKind::kConfiguration, "score axes must lie in [0, 1]");
  }
}

GridSearchResult grid_search(const GridObjective& objective, const GridSearchSpec& spec, const FusionThresholds& start) {
  spec.validate();
  if (!objective) fail(ErrorKind::kInvalidParameter, "grid_search: no objective");
  GridSearchResult result;
  result.best = start;
  const std::size_t ni = spec.iou.count(), n1 = spec.s1.count(), n2 = spec.s2.count();
  const std::size_t total = ni * n1 * n2;
  for (ObjectClass cls : spec.classes) {
    auto& trace = result.trace[class_index(cls)];
    trace.resize(total);
    for (std::size_t k = 0; k < total; ++k) {
      trace[k].thresholds = {spec.iou.value(k / (n1 * n2)), spec.s1.value((k / n2) % n1), spec.s2.value(k % n2)};
    }
    parallel_for(total, spec.jobs, [&](std::size_t k) { trace[k].objective = objective(cls, trace[k].thresholds); });
    // Sequential reduction; the lattice is visited in ascending order so
    // ">=" keeps the lexicographically largest point among ties.
    std::size_t best = 0;
    for (std::size_t k = 0; k < total; ++k) {
      if (trace[k].objective >= trace[best].objective) best = k;
    }
    result.best.of(cls) = trace[best].thresholds;
    result.best_objective[class_index(cls)] = trace[best].objective;
    spdlog::debug("grid_search {}: best {:.4f} at iou {} s1 {} s2 {}", class_name(cls), trace[best].objective,
                  trace[best].thresholds.iou, trace[best].thresholds.s1, trace[best].thresholds.s2);
  }
  return result;
}

void to_json(Json& j, const GridSearchResult& r) {
  j = Json::object();
  j["thresholds"] = r.best;
  Json objectives = Json::object();
  Json traces = Json::object();
  for (ObjectClass c : kAllClasses) {
    const auto& tr = r.trace[class_index(c)];
    if (tr.empty()) continue;
    objectives[std::string(class_name(c))] = r.best_objective[class_index(c)];
    Json rows = Json::array();
    for (const GridPoint& p : tr) rows.push_back({p.thresholds.iou, p.thresholds.s1, p.thresholds.s2, p.objective});
    traces[std::string(class_name(c))] = std::move(rows);
  }
  j["objective"] = std::move(objectives);
  j["trace"] = std::move(traces);
}

}  // namespace kp3d
