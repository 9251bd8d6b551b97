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

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace kp3d::netspec {

enum class LayerKind {
  kInput,
  kSubmanifoldConv3D,
  kSparseConv3D,
  kToBev,  // 3D volume flattened into BEV channels
  kConv2D,
  kTransposedConv2D,
  kConcat,
  kBiFPNBlock,
};

std::string_view kind_name(LayerKind k);

/// Spatial (x-y) stride as a reduced positive rational: 2 downsamples,
/// 1/2 upsamples.
class Stride {
 public:
  Stride() = default;
  Stride(std::int64_t num, std::int64_t den = 1);

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  bool is_integer() const { return den_ == 1; }
  Stride operator*(const Stride& o) const { return {num_ * o.num_, den_ * o.den_}; }
  bool operator==(const Stride&) const = default;
  std::string str() const;

 private:
  std::int64_t num_ = 1, den_ = 1;
};

/// `repeat` stacked layers; the first maps in_channels -> out_channels, the
/// rest keep out_channels. Only the first applies the stride.
struct LayerSpec {
  LayerKind kind = LayerKind::kConv2D;
  Stride stride;
  int in_channels = 0;
  int out_channels = 0;
  int repeat = 1;
};

struct NetNode {
  std::string name;
  LayerSpec layer;
  std::vector<std::string> inputs;
};

struct NetGraph {
  std::string name;
  std::vector<NetNode> nodes;
  std::string input;
  std::string output;

  NetGraph& add(std::string node, LayerSpec layer, std::vector<std::string> inputs);
  const NetNode* find(std::string_view node) const;
};

struct NodeShape {
  Stride stride;
  int channels = 0;
};

struct Propagation {
  std::vector<std::string> order;  // topological
  std::map<std::string, NodeShape> shapes;
  NodeShape output;
};

/// Multiplies strides along edges and tracks channel counts. Concat sums
/// channels and requires equal strides; BiFPN blocks keep the stride of
/// their first input and need uniform channels. Throws kShape on any
/// violation (cycles, unreachable nodes, channel or stride mismatch).
Propagation propagate(const NetGraph& g, Stride input_stride = Stride(1));

NetGraph fe_v1(int in_channels = 8);
NetGraph fe_v2(int in_channels = 8);
NetGraph rpn_v1(int in_channels);
NetGraph rpn_v2(int in_channels);
NetGraph rpn_v3(int in_channels);

/// Feeds `first`'s output into `second` in place of its input node.
NetGraph chain(const NetGraph& first, const NetGraph& second);

enum class Backbone { kB1, kB2, kB3 };
std::string_view backbone_name(Backbone b);
bool parse_backbone(std::string_view name, Backbone& out);

struct BackboneGraphs {
  NetGraph feature_extractor;
  NetGraph rpn;
  NetGraph combined;
};
BackboneGraphs backbone_graphs(Backbone b, int in_channels = 8);
/// Reference overall downsample factors: B1 8, B2 8, B3 4.
int expected_downsample(Backbone b);

/// FE stride × RPN stride. Throws kShape if the composed graph disagrees
/// with the product or the result is not an integer factor.
int check_backbone(Backbone b);

struct ChannelReport {
  std::vector<int> rpn_v1_blocks;  // down blocks then up blocks
  std::vector<int> rpn_v2_blocks;
  std::vector<int> rpn_v3_blocks;
  std::vector<int> bifpn_channels;  // per scale
  int bifpn_repeats = 0;
};
ChannelReport rpn_v3_channels();

std::string format_table(const NetGraph& g, const Propagation& p);

}  // namespace kp3d::netspec
