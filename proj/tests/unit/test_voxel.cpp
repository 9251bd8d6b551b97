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

#include <doctest.h>

#include <cmath>

#include "kp3d/error.hpp"
#include "kp3d/random.hpp"
#include "kp3d/voxel.hpp"

using namespace kp3d;

namespace {

VoxelGridSpec origin_spec() {
  VoxelGridSpec s;
  s.range = {{0, 8}, {0, 8}, {0, 4}};
  return s;
}

PointCloud random_cloud(Rng& rng, std::size_t n, const DetectionRange& r) {
  PointCloud c(3);
  for (std::size_t i = 0; i < n; ++i) {
    const double painted[3] = {uniform01(rng), 0, uniform01(rng)};
    c.push_back({uniform(rng, r.x.lo, r.x.hi), uniform(rng, r.y.lo, r.y.hi), uniform(rng, r.z.lo, r.z.hi)},
                uniform01(rng), painted, 0.1 * static_cast<double>(uniform_index(rng, 5)));
  }
  return c;
}

}  // namespace

TEST_SUITE("voxel") {
  TEST_CASE("two points share a voxel and average") {
    PointCloud c(3);
    c.push_back({0.01, 0.01, 0.05}, 0.2);
    c.push_back({0.03, 0.03, 0.05}, 0.4);
    const VoxelSet v = voxelize(c, origin_spec());
    REQUIRE(v.size() == 1);
    CHECK(v.indices[0] == std::array<std::int32_t, 3>{0, 0, 0});
    CHECK(v.counts[0] == 2);
    CHECK(v.feature(0)[0] == doctest::Approx(0.02));
    CHECK(v.feature(0)[3] == doctest::Approx(0.3));
  }

  TEST_CASE("overflowing voxel keeps the first points") {
    PointCloud c(3);
    for (int i = 0; i < 7; ++i) c.push_back({0.005 * (i + 1), 0.01, 0.01}, static_cast<double>(i));
    const VoxelSet v = voxelize(c, origin_spec());
    REQUIRE(v.size() == 1);
    CHECK(v.counts[0] == 5);
    CHECK(v.feature(0)[3] == doctest::Approx(2.0));  // mean of 0..4
    CHECK(v.feature(0)[0] == doctest::Approx(0.015));
  }

  TEST_CASE("empty input") { CHECK(voxelize(PointCloud(3), origin_spec()).empty()); }

  TEST_CASE("out-of-range points are dropped and the voxel cap applies") {
    PointCloud c(3);
    c.push_back({-1, 0, 0}, 0);
    c.push_back({1, 1, 1}, 0);
    c.push_back({2, 2, 2}, 0);
    VoxelGridSpec s = origin_spec();
    s.max_voxels = 1;
    const VoxelSet v = voxelize(c, s);
    REQUIRE(v.size() == 1);
    CHECK(v.feature(0)[0] == doctest::Approx(1.0));
  }

  TEST_CASE("grid dims") {
    VoxelGridSpec s;
    CHECK(s.dims() == std::array<std::int64_t, 3>{4000, 4000, 40});
    CHECK(bev_dims(s, 8) == std::array<std::size_t, 2>{500, 500});
    CHECK(bev_dims(s, 4) == std::array<std::size_t, 2>{1000, 1000});
    CHECK_THROWS_AS(bev_dims(s, 3), Error);
    s.voxel_size.x() = 0.07;
    CHECK_THROWS_AS(s.dims(), Error);
  }

  TEST_CASE("downsample must divide the grid") {
    VoxelGridSpec s = origin_spec();
    s.range.x = {0, 0.12};  // 3 cells
    try {
      bev_dims(s, 2);
      FAIL("expected configuration error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kConfiguration);
    }
  }

  TEST_CASE("single voxel gives one BEV cell") {
    PointCloud c(3);
    c.push_back({1.0, 2.0, 0.5}, 0.7);
    const VoxelGridSpec s = origin_spec();
    const BevGrid g = to_bev(voxelize(c, s), s, 1);
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < g.width * g.height; ++i) nonzero += g.counts[i] > 0;
    CHECK(nonzero == 1);
    CHECK(g.count(25, 50) == 1);
    CHECK(g.value(25, 50, 3) == doctest::Approx(0.7));
  }

  TEST_CASE("voxel invariants on random clouds") {
    Rng rng(31);
    VoxelGridSpec s = origin_spec();
    s.voxel_size = {0.5, 0.5, 0.5};
    for (int trial = 0; trial < 20; ++trial) {
      const PointCloud c = random_cloud(rng, 400, s.range);
      const VoxelSet v = voxelize(c, s);
      CHECK(voxelize(c, s).features == v.features);
      std::size_t total = 0;
      bool overflow = false;
      for (std::size_t i = 0; i < v.size(); ++i) {
        total += v.counts[i];
        overflow = overflow || v.counts[i] == s.max_points_per_voxel;
        CHECK(v.counts[i] <= s.max_points_per_voxel);
        for (int a = 0; a < 3; ++a) {
          const double lo = s.range.min()[a] + v.indices[i][static_cast<std::size_t>(a)] * s.voxel_size[a];
          CHECK(v.feature(i)[static_cast<std::size_t>(a)] >= lo - 1e-12);
          CHECK(v.feature(i)[static_cast<std::size_t>(a)] <= lo + s.voxel_size[a] + 1e-12);
        }
      }
      CHECK(total <= c.size());
      if (!overflow) CHECK(total == c.size());
      for (std::size_t ds : {1u, 2u, 4u}) {
        const BevGrid g = to_bev(v, s, ds);
        for (std::size_t ch = 0; ch < g.channels; ++ch) {
          double voxel_mass = 0, cell_mass = 0;
          for (std::size_t i = 0; i < v.size(); ++i) voxel_mass += v.feature(i)[ch] * v.counts[i];
          for (std::size_t k = 0; k < g.width * g.height; ++k) cell_mass += g.values[k * g.channels + ch] * g.counts[k];
          CHECK(std::abs(cell_mass - voxel_mass) <= 1e-6 * std::max(1.0, std::abs(voxel_mass)));
        }
      }
    }
  }

  TEST_CASE("bev_to_cloud emits occupied cells") {
    PointCloud c(3);
    c.push_back({1.0, 2.0, 0.5}, 0.7);
    c.push_back({5.0, 5.0, 0.5}, 0.1);
    const VoxelGridSpec s = origin_spec();
    const PointCloud cells = bev_to_cloud(to_bev(voxelize(c, s), s, 2));
    CHECK(cells.size() == 2);
    CHECK(cells.paint_channels() == 3);
  }
}
