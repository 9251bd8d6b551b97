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

#include <benchmark/benchmark.h>

#include <vector>

#include "kp3d/ensemble.hpp"
#include "kp3d/geom3d.hpp"
#include "kp3d/heads.hpp"
#include "kp3d/random.hpp"
#include "kp3d/voxel.hpp"

using namespace kp3d;

namespace {

Box3D random_box(Rng& rng, double extent) {
  Box3D b;
  b.cx = uniform(rng, -extent, extent);
  b.cy = uniform(rng, -extent, extent);
  b.cz = uniform(rng, 0.0, 2.0);
  b.l = uniform(rng, 0.5, 5.0);
  b.w = uniform(rng, 0.5, 2.5);
  b.h = uniform(rng, 0.5, 2.0);
  b.yaw = wrap_angle(uniform(rng, -kPi, kPi));
  b.cls = kAllClasses[uniform_index(rng, kNumClasses)];
  b.score = uniform01(rng);
  return b;
}

void BM_BevIou(benchmark::State& state) {
  Rng rng(1);
  std::vector<std::pair<Box3D, Box3D>> pairs;
  for (int i = 0; i < 1024; ++i) {
    Box3D a = random_box(rng, 3), b = random_box(rng, 3);
    pairs.emplace_back(a, b);
  }
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& [a, b] = pairs[i++ & 1023];
    benchmark::DoNotOptimize(bev_iou(a, b));
  }
}
BENCHMARK(BM_BevIou);

void BM_Voxelize(benchmark::State& state) {
  Rng rng(2);
  PointCloud cloud(3);
  for (std::int64_t i = 0; i < state.range(0); ++i) {
    cloud.push_back({uniform(rng, -50, 50), uniform(rng, -50, 50), uniform(rng, -1, 3)}, uniform01(rng));
  }
  VoxelGridSpec spec;
  for (auto _ : state) benchmark::DoNotOptimize(voxelize(cloud, spec));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Voxelize)->Arg(10'000)->Arg(100'000);

void BM_ExtractPeaks(benchmark::State& state) {
  Rng rng(3);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::vector<double> heat(3 * n * n);
  for (double& v : heat) v = uniform01(rng) < 0.05 ? uniform01(rng) : 0.0;
  for (auto _ : state) benchmark::DoNotOptimize(extract_peaks(heat, n, n, 3, 0.1, 300));
}
BENCHMARK(BM_ExtractPeaks)->Arg(200)->Arg(500);

void BM_EncodeTargets(benchmark::State& state) {
  Rng rng(4);
  const BevGeometry geom{-80, -80, 0.32, 0.32, 500, 500};
  std::vector<Box3D> boxes;
  for (int i = 0; i < 100; ++i) boxes.push_back(random_box(rng, 75));
  const TargetConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(encode_targets(boxes, cfg, geom));
}
BENCHMARK(BM_EncodeTargets);

void BM_WbfFuse(benchmark::State& state) {
  Rng rng(5);
  std::vector<Box3D> truth;
  for (int i = 0; i < 60; ++i) truth.push_back(random_box(rng, 70));
  std::vector<DetectionSet> sets(static_cast<std::size_t>(state.range(0)));
  for (DetectionSet& s : sets) {
    s.frame_id = "f";
    for (Box3D b : truth) {
      b.cx += normal(rng, 0, 0.1);
      b.cy += normal(rng, 0, 0.1);
      b.score = uniform01(rng);
      s.boxes.push_back(b);
    }
  }
  const FusionThresholds thr = thresholds_3d();
  for (auto _ : state) benchmark::DoNotOptimize(wbf_fuse(sets, thr));
  state.SetItemsProcessed(state.iterations() * state.range(0) * 60);
}
BENCHMARK(BM_WbfFuse)->Arg(3)->Arg(144);

}  // namespace
BENCHMARK_MAIN();
