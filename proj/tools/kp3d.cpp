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

// kp3d command-line tool. Every subcommand reads the same JSON config
// (the pipeline schema) for parameters it does not take as flags.

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kp3d/cloud.hpp"
#include "kp3d/detection.hpp"
#include "kp3d/ensemble.hpp"
#include "kp3d/error.hpp"
#include "kp3d/harness.hpp"
#include "kp3d/heads.hpp"
#include "kp3d/metrics.hpp"
#include "kp3d/netspec.hpp"
#include "kp3d/parallel.hpp"
#include "kp3d/random.hpp"
#include "kp3d/serialize.hpp"
#include "kp3d/voxel.hpp"

using namespace kp3d;
namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  bool verbose = false;
};

PipelineConfig load_config(const GlobalOptions& g) {
  PipelineConfig c = g.config.empty() ? PipelineConfig{} : load_pipeline_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.jobs) c.jobs = std::max<std::size_t>(1, *g.jobs);
  return c;
}

FusionThresholds thresholds_from(const std::string& spec) {
  if (spec == "preset:3d") return thresholds_3d();
  if (spec == "preset:domain_adaptation") return thresholds_domain_adaptation();
  return load_thresholds(spec);
}

std::string frame_dir_name(std::size_t f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu", f);
  return buf;
}

/// Models under a prediction directory: each subdirectory, or else each
/// .det file, is one model.
std::vector<std::vector<DetectionSet>> read_models(const fs::path& dir) {
  std::vector<fs::path> subdirs, files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) subdirs.push_back(e.path());
    if (e.is_regular_file() && e.path().extension() == ".det") files.push_back(e.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  std::sort(files.begin(), files.end());
  std::vector<std::vector<DetectionSet>> models;
  if (!subdirs.empty()) {
    for (const fs::path& d : subdirs) models.push_back(read_detection_dir(d));
  } else {
    for (const fs::path& f : files) models.push_back(read_detections(f));
  }
  if (models.empty()) fail(ErrorKind::kIo, "no predictions under '" + dir.string() + "'");
  return models;
}

/// Per frame id of `gts`, the matching set of every model (empty if absent).
std::vector<std::vector<DetectionSet>> align_frames(const std::vector<std::vector<DetectionSet>>& models,
                                                    const std::vector<DetectionSet>& gts) {
  std::vector<std::vector<DetectionSet>> out;
  for (const DetectionSet& g : gts) {
    std::vector<DetectionSet> sets;
    for (const auto& m : models) {
      DetectionSet s{g.frame_id, "", {}};
      for (const DetectionSet& x : m) {
        if (x.frame_id == g.frame_id) s.boxes.insert(s.boxes.end(), x.boxes.begin(), x.boxes.end());
      }
      sets.push_back(std::move(s));
    }
    out.push_back(std::move(sets));
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const GlobalOptions& g, const fs::path& out, std::optional<std::size_t> frames) {
  const PipelineConfig cfg = load_config(g);
  const std::size_t n = frames.value_or(cfg.frames);
  parallel_for(n, cfg.jobs, [&](std::size_t f) {
    SceneSpec spec = cfg.scene;
    spec.seed = mix_seed(mix_seed(cfg.seed, cfg.scene.seed), f);
    const std::string id = frame_dir_name(f);
    const Scene scene = generate_scene(spec, id);
    const fs::path dir = out / id;
    fs::create_directories(dir);
    for (std::size_t k = 0; k < scene.sweeps.size(); ++k) {
      const fs::path file = dir / ("sweep_" + std::to_string(k) + ".pcf");
      write_frame(file, scene.sweeps[k].points);
      write_json(sidecar_path(file), SweepMeta{scene.sweeps[k].timestamp, scene.sweeps[k].pose, scene.cameras});
    }
    const DetectionSet gt{id, "gt", scene.boxes};
    write_detections(dir / "labels.det", std::span(&gt, 1), true);
    write_json(dir / "paint_sources.json", Json(scene.paint_sources));
  });
  spdlog::info("simulate: wrote {} frames to {}", n, out.string());
  return 0;
}

int cmd_densify(const std::vector<fs::path>& sweeps, const fs::path& out) {
  std::vector<Sweep> loaded;
  for (const fs::path& p : sweeps) {
    const SweepMeta meta = read_json(sidecar_path(p)).get<SweepMeta>();
    loaded.push_back({read_frame(p), meta.pose, meta.timestamp});
  }
  const PointCloud dense = densify(loaded.back(), std::span<const Sweep>(loaded.data(), loaded.size() - 1));
  write_frame(out, dense);
  SweepMeta meta = read_json(sidecar_path(sweeps.back())).get<SweepMeta>();
  write_json(sidecar_path(out), meta);
  std::printf("%zu points from %zu sweeps\n", dense.size(), loaded.size());
  return 0;
}

int cmd_paint(const GlobalOptions& g, const fs::path& frame, const fs::path& sources, const fs::path& out) {
  const PipelineConfig cfg = load_config(g);
  const PointCloud points = read_frame(frame);
  const auto srcs = read_json(sources).get<std::vector<PaintSource>>();
  PaintOptions opts = cfg.paint;
  opts.channels = points.paint_channels();
  const PointCloud painted = paint(points, srcs, opts);
  write_frame(out, painted);
  if (fs::exists(sidecar_path(frame))) fs::copy_file(sidecar_path(frame), sidecar_path(out), fs::copy_options::overwrite_existing);
  std::size_t lit = 0;
  for (std::size_t i = 0; i < painted.size(); ++i) {
    lit += std::any_of(painted.painted(i).begin(), painted.painted(i).end(), [](double v) { return v > 0; });
  }
  std::printf("%zu of %zu points painted\n", lit, painted.size());
  return 0;
}

int cmd_encode(const GlobalOptions& g, const fs::path& labels, const std::string& frame_id, const fs::path& out) {
  const PipelineConfig cfg = load_config(g);
  const auto sets = read_detections(labels);
  const DetectionSet* chosen = nullptr;
  for (const DetectionSet& s : sets) {
    if (frame_id.empty() || s.frame_id == frame_id) {
      chosen = &s;
      break;
    }
  }
  if (!chosen) fail(ErrorKind::kInvalidParameter, "frame '" + frame_id + "' not in " + labels.string());
  const BevGeometry geom = BevGeometry::from_voxels(cfg.voxel, cfg.bev_downsample);
  const EncodedTargets t = encode_targets(chosen->boxes, cfg.targets, geom);
  write_head_maps(out, t.maps, geom);
  std::printf("frame %s: %zu encoded, %zu outside grid, %zu over limit, %zu center collisions (%zux%zu grid)\n",
              chosen->frame_id.c_str(), t.encoded.size(), t.outside_grid.size(), t.dropped_over_limit,
              t.center_collisions, geom.width, geom.height);
  return 0;
}

int cmd_decode(const GlobalOptions& g, const fs::path& maps_path, const std::string& frame_id, const fs::path& out) {
  const PipelineConfig cfg = load_config(g);
  BevGeometry geom;
  const HeadMaps maps = read_head_maps(maps_path, geom);
  DetectionSet d = decode(maps, geom, cfg.targets, cfg.decode);
  d.frame_id = frame_id;
  write_detections(out, std::span(&d, 1));
  std::printf("%zu detections\n", d.boxes.size());
  return 0;
}

int cmd_ensemble(const GlobalOptions& g, const std::vector<fs::path>& inputs, const std::string& thresholds,
                 const std::vector<double>& weights, bool no_scale, const fs::path& out) {
  const PipelineConfig cfg = load_config(g);
  const FusionThresholds thr = thresholds.empty() ? cfg.thresholds : thresholds_from(thresholds);
  WbfOptions opts = cfg.wbf;
  if (!weights.empty()) opts.model_weights = weights;
  if (no_scale) opts.scale_by_models = false;
  std::vector<std::vector<DetectionSet>> models;
  std::vector<std::string> frames;
  for (const fs::path& p : inputs) {
    models.push_back(read_detections(p));
    for (const DetectionSet& s : models.back()) {
      if (std::find(frames.begin(), frames.end(), s.frame_id) == frames.end()) frames.push_back(s.frame_id);
    }
  }
  std::vector<DetectionSet> gts;
  for (const std::string& f : frames) gts.push_back({f, "", {}});
  const auto aligned = align_frames(models, gts);
  std::vector<DetectionSet> fused(aligned.size());
  parallel_for(aligned.size(), cfg.jobs, [&](std::size_t i) {
    fused[i] = wbf_fuse(aligned[i], thr, opts);
    fused[i].frame_id = frames[i];
  });
  write_detections(out, fused);
  std::size_t n = 0;
  for (const DetectionSet& s : fused) n += s.boxes.size();
  std::printf("%zu frames, %zu models, %zu fused boxes\n", fused.size(), models.size(), n);
  return 0;
}

int cmd_gridsearch(const GlobalOptions& g, const fs::path& pred_dir, const fs::path& gt_dir,
                   const std::vector<std::string>& classes, const fs::path& out, const fs::path& trace) {
  const PipelineConfig cfg = load_config(g);
  const auto gts = read_detection_dir(gt_dir);
  const auto aligned = align_frames(read_models(pred_dir), gts);
  GridSearchSpec spec;
  spec.jobs = cfg.jobs;
  if (!classes.empty()) {
    spec.classes.clear();
    for (const std::string& name : classes) {
      const auto c = parse_class(name);
      if (!c) fail(ErrorKind::kConfiguration, "unknown class '" + name + "'");
      spec.classes.push_back(*c);
    }
  }
  const GridObjective objective = [&](ObjectClass c, const ClassThresholds& t) {
    FusionThresholds thr = cfg.thresholds;
    thr.of(c) = t;
    std::vector<DetectionSet> fused, class_gt;
    for (std::size_t f = 0; f < aligned.size(); ++f) {
      std::vector<DetectionSet> sets = aligned[f];
      for (DetectionSet& s : sets) std::erase_if(s.boxes, [&](const Box3D& b) { return b.cls != c; });
      fused.push_back(wbf_fuse(sets, thr, cfg.wbf));
    }
    return evaluate(fused, gts, cfg.matching).classes[class_index(c)].result.aph;
  };
  const GridSearchResult r = grid_search(objective, spec, cfg.thresholds);
  save_thresholds(out, r.best);
  if (!trace.empty()) write_json(trace, Json(r));
  for (ObjectClass c : spec.classes) {
    const ClassThresholds& t = r.best.of(c);
    std::printf("%-10s iou %.2f s1 %.2f s2 %.2f  APH %.6f\n", std::string(class_name(c)).c_str(), t.iou, t.s1, t.s2,
                r.best_objective[class_index(c)]);
  }
  return 0;
}

int cmd_eval(const GlobalOptions& g, const fs::path& pred, const fs::path& gt, const std::string& difficulty,
             const fs::path& out, const fs::path& pr_csv) {
  const PipelineConfig cfg = load_config(g);
  MatchConfig mc = cfg.matching;
  if (!difficulty.empty()) {
    const auto d = parse_difficulty(difficulty);
    if (!d) fail(ErrorKind::kConfiguration, "unknown difficulty '" + difficulty + "'");
    mc.difficulty = *d;
  }
  const auto preds = fs::is_directory(pred) ? read_detection_dir(pred) : read_detections(pred);
  const auto gts = fs::is_directory(gt) ? read_detection_dir(gt) : read_detections(gt);
  const EvalReport r = evaluate(preds, gts, mc, cfg.jobs);
  if (!out.empty()) write_json(out, report_to_json(r, !pr_csv.empty()));
  if (!pr_csv.empty()) {
    std::ofstream f(pr_csv);
    if (!f) fail(ErrorKind::kIo, "cannot write " + pr_csv.string());
    f << "class,score,recall,precision,heading_precision\n";
    f.precision(9);
    for (const ClassReport& c : r.classes) {
      for (const PrPoint& p : c.result.pr) {
        f << class_name(c.cls) << ',' << p.score << ',' << p.recall << ',' << p.precision << ','
          << p.heading_precision << '\n';
      }
    }
  }
  std::printf("%s over %zu frames: mAP %.6f mAPH %.6f\n", std::string(difficulty_name(r.difficulty)).c_str(),
              r.frames, r.map, r.maph);
  for (const ClassReport& c : r.classes) {
    std::printf("  %-10s AP %.6f APH %.6f  gt %zu tp %zu fp %zu%s\n", std::string(class_name(c.cls)).c_str(),
                c.result.ap, c.result.aph, c.result.num_gt, c.result.tp, c.result.fp,
                c.result.no_ground_truth ? "  (no ground truth)" : "");
  }
  return 0;
}

int cmd_netspec_check(const std::string& name) {
  netspec::Backbone b{};
  if (!netspec::parse_backbone(name, b)) fail(ErrorKind::kConfiguration, "unknown backbone '" + name + "'");
  const netspec::BackboneGraphs graphs = netspec::backbone_graphs(b);
  std::printf("%s", netspec::format_table(graphs.combined, netspec::propagate(graphs.combined)).c_str());
  const int factor = netspec::check_backbone(b);
  const int expected = netspec::expected_downsample(b);
  std::printf("%s: downsample %d (expected %d)\n", std::string(netspec::backbone_name(b)).c_str(), factor, expected);
  return factor == expected ? 0 : 1;
}

int cmd_pipeline(const GlobalOptions& g, const fs::path& out, bool print_config) {
  PipelineConfig cfg = load_config(g);
  if (!out.empty()) cfg.output_dir = out;
  if (print_config) {
    std::printf("%s\n", pipeline_config_to_json(cfg).dump(2).c_str());
    return 0;
  }
  const PipelineResult r = run_pipeline(cfg);
  std::printf("final (%s): mAP %.6f mAPH %.6f\n", std::string(difficulty_name(r.final_report.difficulty)).c_str(),
              r.final_report.map, r.final_report.maph);
  if (r.ensemble_no_tta) std::printf("ensemble without TTA: mAP %.6f mAPH %.6f\n", r.ensemble_no_tta->map, r.ensemble_no_tta->maph);
  for (const auto& [name, rep] : r.singles) std::printf("single %s: mAP %.6f mAPH %.6f\n", name.c_str(), rep.map, rep.maph);
  std::printf("%zu artifacts in %s\n", r.artifacts.size(), cfg.output_dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kp3d: LiDAR 3D detection pipeline tools"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON config (pipeline schema); unknown keys are errors")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--jobs", g.jobs, "Worker threads");
  app.add_flag("-v,--verbose", g.verbose, "Log progress");

  std::function<int()> run;

  auto* simulate = app.add_subcommand("simulate", "Generate synthetic scenes: sweeps, labels, paint sources");
  fs::path sim_out;
  std::optional<std::size_t> sim_frames;
  simulate->add_option("--out", sim_out, "Output directory")->required();
  simulate->add_option("--frames", sim_frames, "Frame count (default: config frames)");
  simulate->callback([&] { run = [&] { return cmd_simulate(g, sim_out, sim_frames); }; });

  auto* densify_cmd = app.add_subcommand("densify", "Merge sweeps into the last one's frame");
  std::vector<fs::path> sweeps;
  fs::path dens_out;
  densify_cmd->add_option("--sweeps", sweeps, "Frame files, oldest first; the last is current")->required()->check(CLI::ExistingFile);
  densify_cmd->add_option("--out", dens_out, "Output frame file")->required();
  densify_cmd->callback([&] { run = [&] { return cmd_densify(sweeps, dens_out); }; });

  auto* paint_cmd = app.add_subcommand("paint", "Append camera class scores to a frame");
  fs::path paint_frame, paint_sources, paint_out;
  paint_cmd->add_option("--frame", paint_frame, "Input frame file")->required()->check(CLI::ExistingFile);
  paint_cmd->add_option("--sources", paint_sources, "Paint sources JSON")->required()->check(CLI::ExistingFile);
  paint_cmd->add_option("--out", paint_out, "Output frame file")->required();
  paint_cmd->callback([&] { run = [&] { return cmd_paint(g, paint_frame, paint_sources, paint_out); }; });

  auto* encode_cmd = app.add_subcommand("encode", "Render head targets for labelled boxes");
  fs::path enc_labels, enc_out;
  std::string enc_frame;
  encode_cmd->add_option("--labels", enc_labels, "Detection file with ground truth")->required()->check(CLI::ExistingFile);
  encode_cmd->add_option("--frame", enc_frame, "Frame id (default: first)");
  encode_cmd->add_option("--out", enc_out, "Output head map file")->required();
  encode_cmd->callback([&] { run = [&] { return cmd_encode(g, enc_labels, enc_frame, enc_out); }; });

  auto* decode_cmd = app.add_subcommand("decode", "Extract boxes from head maps");
  fs::path dec_maps, dec_out;
  std::string dec_frame = "frame";
  decode_cmd->add_option("--maps", dec_maps, "Head map file")->required()->check(CLI::ExistingFile);
  decode_cmd->add_option("--frame", dec_frame, "Frame id written to the records");
  decode_cmd->add_option("--out", dec_out, "Output detection file")->required();
  decode_cmd->callback([&] { run = [&] { return cmd_decode(g, dec_maps, dec_frame, dec_out); }; });

  auto* ens_cmd = app.add_subcommand("ensemble", "Fuse detections of several models per frame");
  std::vector<fs::path> ens_inputs;
  std::string ens_thr;
  std::vector<double> ens_weights;
  bool ens_no_scale = false;
  fs::path ens_out;
  ens_cmd->add_option("--inputs", ens_inputs, "Detection files, one per model")->required()->check(CLI::ExistingFile);
  ens_cmd->add_option("--thresholds", ens_thr, "Threshold file or preset:3d / preset:domain_adaptation");
  ens_cmd->add_option("--weights", ens_weights, "Model weights");
  ens_cmd->add_flag("--no-scale", ens_no_scale, "Disable model-count score scaling");
  ens_cmd->add_option("--out", ens_out, "Output detection file")->required();
  ens_cmd->callback([&] { run = [&] { return cmd_ensemble(g, ens_inputs, ens_thr, ens_weights, ens_no_scale, ens_out); }; });

  auto* grid_cmd = app.add_subcommand("gridsearch", "Search fusion thresholds per class");
  fs::path grid_pred, grid_gt, grid_out, grid_trace;
  std::vector<std::string> grid_classes;
  grid_cmd->add_option("--pred-dir", grid_pred, "One subdirectory (or .det file) per model")->required()->check(CLI::ExistingDirectory);
  grid_cmd->add_option("--gt-dir", grid_gt, "Ground-truth detection files")->required()->check(CLI::ExistingDirectory);
  grid_cmd->add_option("--class", grid_classes, "Classes to search (default: all)");
  grid_cmd->add_option("--out", grid_out, "Output threshold file")->required();
  grid_cmd->add_option("--trace", grid_trace, "Optional JSON with every lattice point");
  grid_cmd->callback([&] { run = [&] { return cmd_gridsearch(g, grid_pred, grid_gt, grid_classes, grid_out, grid_trace); }; });

  auto* eval_cmd = app.add_subcommand("eval", "Compute AP and APH");
  fs::path eval_pred, eval_gt, eval_out, eval_pr;
  std::string eval_diff;
  eval_cmd->add_option("--pred", eval_pred, "Prediction file or directory")->required()->check(CLI::ExistingPath);
  eval_cmd->add_option("--gt", eval_gt, "Ground-truth file or directory")->required()->check(CLI::ExistingPath);
  eval_cmd->add_option("--difficulty", eval_diff, "L1 or L2 (default: config)");
  eval_cmd->add_option("--out", eval_out, "Report JSON");
  eval_cmd->add_option("--pr-csv", eval_pr, "PR curve CSV for plotting");
  eval_cmd->callback([&] { run = [&] { return cmd_eval(g, eval_pred, eval_gt, eval_diff, eval_out, eval_pr); }; });

  auto* net_cmd = app.add_subcommand("netspec", "Network shape tools");
  auto* net_check = net_cmd->add_subcommand("check", "Print the stride/channel table of a backbone");
  net_cmd->require_subcommand(1);
  std::string backbone;
  net_check->add_option("backbone", backbone, "B1, B2 or B3")->required();
  net_check->callback([&] { run = [&] { return cmd_netspec_check(backbone); }; });

  auto* pipe_cmd = app.add_subcommand("pipeline", "Run simulate through eval end to end");
  fs::path pipe_out;
  pipe_cmd->add_option("--out", pipe_out, "Output directory (default: config output_dir)");
  bool pipe_print = false;
  pipe_cmd->add_flag("--print-config", pipe_print, "Print the effective config and exit");
  pipe_cmd->callback([&] { run = [&] { return cmd_pipeline(g, pipe_out, pipe_print); }; });

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(g.verbose ? spdlog::level::info : spdlog::level::warn);
  try {
    return run();
  } catch (const Error& e) {
    std::fprintf(stderr, "kp3d: %s\n", e.what());
    return e.kind() == ErrorKind::kConfiguration ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "kp3d: %s\n", e.what());
    return 1;
  }
}
