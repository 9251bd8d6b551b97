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

#include "kp3d/metrics.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <unordered_map>

#include "kp3d/error.hpp"
#include "kp3d/parallel.hpp"

namespace kp3d {

void MatchConfig::validate() const {
  for (double t : iou_threshold) {
    if (!(t > 0.0 && t <= 1.0)) fail(ErrorKind::kConfiguration, "matching IoU thresholds must be in (0, 1]");
  }
  if (recall_points < 2) fail(ErrorKind::kConfiguration, "recall_points must be at least 2");
}

namespace {

bool counts(const Box3D& g, const MatchConfig& cfg) {
  return cfg.difficulty == Difficulty::kL2 || g.difficulty == Difficulty::kL1;
}

}  // namespace

std::size_t count_gt(std::span<const Box3D> gts, ObjectClass cls, const MatchConfig& cfg) {
  return static_cast<std::size_t>(
      std::count_if(gts.begin(), gts.end(), [&](const Box3D& g) { return g.cls == cls && counts(g, cfg); }));
}

std::vector<MatchRecord> match_frame(const DetectionSet& dets, std::span<const Box3D> gts, ObjectClass cls,
                                     const MatchConfig& cfg) {
  std::vector<const Box3D*> order;
  for (const Box3D& d : dets.boxes) {
    if (d.cls == cls) order.push_back(&d);
  }
  std::stable_sort(order.begin(), order.end(), [](const Box3D* a, const Box3D* b) { return a->score > b->score; });
  std::vector<bool> taken(gts.size(), false);
  const double thr = cfg.threshold(cls);
  std::vector<MatchRecord> out;
  out.reserve(order.size());
  for (const Box3D* d : order) {
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].cls != cls) continue;
      const double iou = bev_iou(*d, gts[g]);
      if (iou >= thr && iou > best_iou) {
        best_iou = iou;
        best = g;
      }
    }
    MatchRecord r;
    r.score = d->score;
    if (best) {
      taken[*best] = true;
      if (!counts(gts[*best], cfg)) continue;
      r.gt = best;
      r.iou = best_iou;
      r.heading_error = std::abs(wrap_angle(d->yaw - gts[*best].yaw));
    }
    out.push_back(r);
  }
  return out;
}

ApResult ap_aph(std::span<const MatchRecord> records, std::size_t num_gt, const MatchConfig& cfg) {
  ApResult res;
  res.num_gt = num_gt;
  std::vector<MatchRecord> sorted(records.begin(), records.end());
  // Total order so the cumulative sums are independent of input order.
  std::sort(sorted.begin(), sorted.end(), [](const MatchRecord& a, const MatchRecord& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.tp() != b.tp()) return a.tp();
    return a.heading_error < b.heading_error;
  });
  std::size_t tp = 0, fp = 0;
  double htp = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i].tp()) {
      ++tp;
      htp += heading_weight(sorted[i].heading_error);
    } else {
      ++fp;
    }
    const bool group_end = i + 1 == sorted.size() || sorted[i + 1].score != sorted[i].score;
    if (!group_end) continue;
    const double n = static_cast<double>(tp + fp);
    PrPoint p;
    p.score = sorted[i].score;
    p.recall = num_gt > 0 ? static_cast<double>(tp) / static_cast<double>(num_gt) : 0.0;
    p.precision = static_cast<double>(tp) / n;
    p.heading_precision = htp / n;
    res.pr.push_back(p);
  }
  res.tp = tp;
  res.fp = fp;
  res.fn = num_gt - std::min(num_gt, tp);
  if (num_gt == 0) {
    res.no_ground_truth = true;
    return res;
  }
  // Envelope: best precision among points reaching each recall level.
  double ap = 0, aph = 0;
  const std::size_t R = cfg.recall_points;
  std::vector<double> env(res.pr.size()), env_h(res.pr.size());
  double run = 0, run_h = 0;
  for (std::size_t k = res.pr.size(); k-- > 0;) {
    run = std::max(run, res.pr[k].precision);
    run_h = std::max(run_h, res.pr[k].heading_precision);
    env[k] = run;
    env_h[k] = run_h;
  }
  // Recall is nondecreasing along pr, so a forward cursor finds the first point reaching r.
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < R; ++i) {
    const double r = static_cast<double>(i) / static_cast<double>(R - 1);
    while (cursor < res.pr.size() && res.pr[cursor].recall < r - 1e-12) ++cursor;
    if (cursor == res.pr.size()) break;
    ap += env[cursor];
    aph += env_h[cursor];
  }
  res.ap = ap / static_cast<double>(R);
  res.aph = aph / static_cast<double>(R);
  return res;
}

EvalReport evaluate(std::span<const DetectionSet> preds, std::span<const DetectionSet> gts, const MatchConfig& cfg,
                    std::size_t jobs) {
  cfg.validate();
  EvalReport rep;
  rep.difficulty = cfg.difficulty;
  rep.frames = gts.size();
  std::unordered_map<std::string, std::vector<const DetectionSet*>> by_frame;
  for (const DetectionSet& p : preds) by_frame[p.frame_id].push_back(&p);
  std::unordered_map<std::string, int> gt_ids;
  for (const DetectionSet& g : gts) {
    if (!gt_ids.emplace(g.frame_id, 0).second) fail(ErrorKind::kInvalidParameter, "duplicate ground-truth frame " + g.frame_id);
  }
  std::size_t unknown = 0;
  for (const auto& [id, sets] : by_frame) unknown += gt_ids.count(id) ? 0 : 1;
  if (unknown) spdlog::warn("evaluate: ignoring predictions for {} frames without ground truth", unknown);

  using PerClass = std::array<std::vector<MatchRecord>, kNumClasses>;
  std::vector<PerClass> per_frame(gts.size());
  std::vector<std::array<std::size_t, kNumClasses>> gt_counts(gts.size());
  parallel_for(gts.size(), jobs, [&](std::size_t f) {
    DetectionSet merged;
    merged.frame_id = gts[f].frame_id;
    if (auto it = by_frame.find(gts[f].frame_id); it != by_frame.end()) {
      for (const DetectionSet* s : it->second) merged.boxes.insert(merged.boxes.end(), s->boxes.begin(), s->boxes.end());
    }
    for (ObjectClass c : kAllClasses) {
      per_frame[f][class_index(c)] = match_frame(merged, gts[f].boxes, c, cfg);
      gt_counts[f][class_index(c)] = count_gt(gts[f].boxes, c, cfg);
    }
  });

  double sum_ap = 0, sum_aph = 0;
  for (ObjectClass c : kAllClasses) {
    const std::size_t k = class_index(c);
    std::vector<MatchRecord> all;
    std::size_t num_gt = 0;
    for (std::size_t f = 0; f < gts.size(); ++f) {
      all.insert(all.end(), per_frame[f][k].begin(), per_frame[f][k].end());
      num_gt += gt_counts[f][k];
    }
    rep.classes[k].cls = c;
    rep.classes[k].result = ap_aph(all, num_gt, cfg);
    if (num_gt > 0) {
      ++rep.classes_with_gt;
      sum_ap += rep.classes[k].result.ap;
      sum_aph += rep.classes[k].result.aph;
    }
  }
  if (rep.classes_with_gt > 0) {
    rep.map = sum_ap / static_cast<double>(rep.classes_with_gt);
    rep.maph = sum_aph / static_cast<double>(rep.classes_with_gt);
  }
  return rep;
}

void to_json(Json& j, const MatchConfig& c) {
  Json thr = Json::object();
  for (ObjectClass k : kAllClasses) thr[std::string(class_name(k))] = c.threshold(k);
  j = {{"iou_threshold", thr}, {"difficulty", difficulty_name(c.difficulty)}, {"recall_points", c.recall_points}};
}

void from_json(const Json& j, MatchConfig& c) {
  expect_keys(j, {"iou_threshold", "difficulty", "recall_points"}, "matching");
  if (j.contains("iou_threshold")) {
    const Json& t = j.at("iou_threshold");
    expect_keys(t, {"vehicle", "pedestrian", "cyclist"}, "matching.iou_threshold");
    for (ObjectClass k : kAllClasses) {
      const std::string name(class_name(k));
      if (t.contains(name)) c.iou_threshold[class_index(k)] = t.at(name).get<double>();
    }
  }
  if (j.contains("difficulty")) {
    const auto d = parse_difficulty(j.at("difficulty").get<std::string>());
    if (!d) fail(ErrorKind::kConfiguration, "matching.difficulty must be L1 or L2");
    c.difficulty = *d;
  }
  if (j.contains("recall_points")) c.recall_points = j.at("recall_points").get<std::size_t>();
  c.validate();
}

Json report_to_json(const EvalReport& r, bool with_pr) {
  Json classes = Json::object();
  for (const ClassReport& c : r.classes) {
    const ApResult& a = c.result;
    Json e = {{"ap", a.ap},        {"aph", a.aph}, {"num_gt", a.num_gt},
              {"tp", a.tp},        {"fp", a.fp},   {"fn", a.fn},
              {"no_ground_truth", a.no_ground_truth}};
    if (with_pr) {
      Json pr = Json::array();
      for (const PrPoint& p : a.pr) pr.push_back({p.score, p.recall, p.precision, p.heading_precision});
      e["pr"] = std::move(pr);
    }
    classes[std::string(class_name(c.cls))] = std::move(e);
  }
  return {{"difficulty", difficulty_name(r.difficulty)},
          {"frames", r.frames},
          {"map", r.map},
          {"maph", r.maph},
          {"classes_with_gt", r.classes_with_gt},
          {"classes", std::move(classes)}};
}

}  // namespace kp3d
