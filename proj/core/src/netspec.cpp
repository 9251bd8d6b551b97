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

#include "kp3d/netspec.hpp"

#include <algorithm>
#include <array>
#include <deque>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "kp3d/error.hpp"

namespace kp3d::netspec {

std::string_view kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kInput: return "Input";
    case LayerKind::kSubmanifoldConv3D: return "SubMConv3D";
    case LayerKind::kSparseConv3D: return "SparseConv3D";
    case LayerKind::kToBev: return "ToBEV";
    case LayerKind::kConv2D: return "Conv2D";
    case LayerKind::kTransposedConv2D: return "TConv2D";
    case LayerKind::kConcat: return "Concat";
    case LayerKind::kBiFPNBlock: return "BiFPN";
  }
  return "?";
}

Stride::Stride(std::int64_t num, std::int64_t den) {
  if (num <= 0 || den <= 0) fail(ErrorKind::kShape, "stride must be a positive rational");
  const std::int64_t g = std::gcd(num, den);
  num_ = num / g;
  den_ = den / g;
}

std::string Stride::str() const {
  return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
}

NetGraph& NetGraph::add(std::string node, LayerSpec layer, std::vector<std::string> inputs) {
  nodes.push_back({std::move(node), layer, std::move(inputs)});
  return *this;
}

const NetNode* NetGraph::find(std::string_view node) const {
  for (const NetNode& n : nodes) {
    if (n.name == node) return &n;
  }
  return nullptr;
}

namespace {

bool is_single_input(LayerKind k) {
  return k == LayerKind::kSubmanifoldConv3D || k == LayerKind::kSparseConv3D || k == LayerKind::kToBev ||
         k == LayerKind::kConv2D || k == LayerKind::kTransposedConv2D;
}

[[noreturn]] void shape_error(const NetGraph& g, const std::string& msg) {
  fail(ErrorKind::kShape, g.name + ": " + msg);
}

}  // namespace

Propagation propagate(const NetGraph& g, Stride input_stride) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (!index.emplace(g.nodes[i].name, i).second) shape_error(g, "duplicate node '" + g.nodes[i].name + "'");
  }
  if (!index.contains(g.input)) shape_error(g, "input node '" + g.input + "' missing");
  if (!index.contains(g.output)) shape_error(g, "output node '" + g.output + "' missing");

  std::vector<std::vector<std::size_t>> consumers(g.nodes.size());
  std::vector<std::size_t> pending(g.nodes.size(), 0);
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const NetNode& n = g.nodes[i];
    if (n.layer.kind == LayerKind::kInput) {
      if (!n.inputs.empty()) shape_error(g, "input node '" + n.name + "' has predecessors");
      if (n.name != g.input) shape_error(g, "unexpected second input node '" + n.name + "'");
    }
    for (const std::string& in : n.inputs) {
      const auto it = index.find(in);
      if (it == index.end()) shape_error(g, "node '" + n.name + "' reads unknown node '" + in + "'");
      consumers[it->second].push_back(i);
      ++pending[i];
    }
  }

  // Kahn's algorithm from the designated input; anything left is either on
  // a cycle or unreachable.
  Propagation out;
  std::deque<std::size_t> ready;
  ready.push_back(index.at(g.input));
  if (pending[ready.front()] != 0) shape_error(g, "input node has predecessors");
  while (!ready.empty()) {
    const std::size_t i = ready.front();
    ready.pop_front();
    const NetNode& n = g.nodes[i];
    const LayerSpec& L = n.layer;
    if (L.repeat < 1) shape_error(g, "node '" + n.name + "' has repeat < 1");
    NodeShape shape;
    std::vector<const NodeShape*> ins;
    for (const std::string& in : n.inputs) ins.push_back(&out.shapes.at(in));

    if (L.kind == LayerKind::kInput) {
      if (L.out_channels <= 0) shape_error(g, "input node needs positive channels");
      shape = {input_stride, L.out_channels};
    } else if (is_single_input(L.kind)) {
      if (ins.size() != 1) shape_error(g, "node '" + n.name + "' needs exactly one input");
      if (L.in_channels != ins[0]->channels) {
        shape_error(g, "node '" + n.name + "' expects " + std::to_string(L.in_channels) + " channels but '" +
                           n.inputs[0] + "' provides " + std::to_string(ins[0]->channels));
      }
      if (L.out_channels <= 0) shape_error(g, "node '" + n.name + "' needs positive output channels");
      if (L.kind == LayerKind::kSubmanifoldConv3D && !(L.stride == Stride(1))) {
        shape_error(g, "submanifold node '" + n.name + "' cannot change resolution");
      }
      shape = {ins[0]->stride * L.stride, L.out_channels};
    } else if (L.kind == LayerKind::kConcat) {
      if (ins.size() < 2) shape_error(g, "concat '" + n.name + "' needs at least two inputs");
      shape = {ins[0]->stride, 0};
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (!(ins[k]->stride == ins[0]->stride)) {
          shape_error(g, "concat '" + n.name + "' stride mismatch between '" + n.inputs[0] + "' (" +
                             ins[0]->stride.str() + ") and '" + n.inputs[k] + "' (" + ins[k]->stride.str() + ")");
        }
        shape.channels += ins[k]->channels;
      }
    } else {  // BiFPN
      if (ins.empty()) shape_error(g, "BiFPN node '" + n.name + "' has no inputs");
      if (L.in_channels != L.out_channels) shape_error(g, "BiFPN node '" + n.name + "' must preserve channels");
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (ins[k]->channels != L.in_channels) {
          shape_error(g, "BiFPN node '" + n.name + "' input '" + n.inputs[k] + "' has " +
                             std::to_string(ins[k]->channels) + " channels, expected " +
                             std::to_string(L.in_channels));
        }
      }
      shape = {ins[0]->stride, L.out_channels};
    }
    out.shapes[n.name] = shape;
    out.order.push_back(n.name);
    for (std::size_t c : consumers[i]) {
      if (--pending[c] == 0) ready.push_back(c);
    }
  }
  if (out.order.size() != g.nodes.size()) {
    for (const NetNode& n : g.nodes) {
      if (!out.shapes.contains(n.name)) shape_error(g, "node '" + n.name + "' is unreachable or on a cycle");
    }
  }
  out.output = out.shapes.at(g.output);
  return out;
}

namespace {

LayerSpec layer(LayerKind kind, Stride stride, int in, int out, int repeat = 1) {
  return {kind, stride, in, out, repeat};
}

NetGraph rpn_cascade(const std::string& name, int in_channels, std::array<int, 3> down_strides,
                     std::array<int, 3> down_ch, std::array<int, 3> up_ch) {
  // Three cascaded downsample blocks, one upsample per block back to the
  // first block's resolution, concatenated.
  NetGraph g{name, {}, "input", "concat"};
  g.add("input", layer(LayerKind::kInput, 1, in_channels, in_channels), {});
  g.add("down1", layer(LayerKind::kConv2D, down_strides[0], in_channels, down_ch[0], 6), {"input"});
  g.add("down2", layer(LayerKind::kConv2D, down_strides[1], down_ch[0], down_ch[1], 6), {"down1"});
  g.add("down3", layer(LayerKind::kConv2D, down_strides[2], down_ch[1], down_ch[2], 6), {"down2"});
  const std::int64_t s2 = down_strides[1], s3 = static_cast<std::int64_t>(down_strides[1]) * down_strides[2];
  g.add("up1", layer(LayerKind::kTransposedConv2D, 1, down_ch[0], up_ch[0]), {"down1"});
  g.add("up2", layer(LayerKind::kTransposedConv2D, Stride(1, s2), down_ch[1], up_ch[1]), {"down2"});
  g.add("up3", layer(LayerKind::kTransposedConv2D, Stride(1, s3), down_ch[2], up_ch[2]), {"down3"});
  g.add("concat", layer(LayerKind::kConcat, 1, 0, 0), {"up1", "up2", "up3"});
  return g;
}

}  // namespace

NetGraph fe_v1(int in_channels) {
  // Four phases of submanifold layers, each closed by a sparse conv; the
  // first two halve x-y, the last two only compress z.
  NetGraph g{"FE-v1", {}, "input", "to_bev"};
  g.add("input", layer(LayerKind::kInput, 1, in_channels, in_channels), {});
  g.add("phase1.subm", layer(LayerKind::kSubmanifoldConv3D, 1, in_channels, 16, 2), {"input"});
  g.add("phase1.down", layer(LayerKind::kSparseConv3D, 2, 16, 32), {"phase1.subm"});
  g.add("phase2.subm", layer(LayerKind::kSubmanifoldConv3D, 1, 32, 32, 2), {"phase1.down"});
  g.add("phase2.down", layer(LayerKind::kSparseConv3D, 2, 32, 64), {"phase2.subm"});
  g.add("phase3.subm", layer(LayerKind::kSubmanifoldConv3D, 1, 64, 64, 3), {"phase2.down"});
  g.add("phase3.down", layer(LayerKind::kSparseConv3D, 1, 64, 64), {"phase3.subm"});
  g.add("phase4.subm", layer(LayerKind::kSubmanifoldConv3D, 1, 64, 64, 3), {"phase3.down"});
  g.add("phase4.down", layer(LayerKind::kSparseConv3D, 1, 64, 64), {"phase4.subm"});
  g.add("to_bev", layer(LayerKind::kToBev, 1, 64, 128), {"phase4.down"});
  return g;
}

NetGraph fe_v2(int in_channels) {
  NetGraph g{"FE-v2", {}, "input", "bev.conv"};
  g.add("input", layer(LayerKind::kInput, 1, in_channels, in_channels), {});
  g.add("block1.subm", layer(LayerKind::kSubmanifoldConv3D, 1, in_channels, 16, 2), {"input"});
  g.add("block2.down", layer(LayerKind::kSparseConv3D, 2, 16, 32), {"block1.subm"});
  g.add("block2.subm", layer(LayerKind::kSubmanifoldConv3D, 1, 32, 32, 2), {"block2.down"});
  g.add("block3.down", layer(LayerKind::kSparseConv3D, 2, 32, 64), {"block2.subm"});
  g.add("block3.subm", layer(LayerKind::kSubmanifoldConv3D, 1, 64, 64, 2), {"block3.down"});
  g.add("block4.down", layer(LayerKind::kSparseConv3D, 2, 64, 64), {"block3.subm"});
  g.add("block4.subm", layer(LayerKind::kSubmanifoldConv3D, 1, 64, 64, 2), {"block4.down"});
  g.add("to_bev", layer(LayerKind::kToBev, 1, 64, 320), {"block4.subm"});
  g.add("bev.conv", layer(LayerKind::kConv2D, 1, 320, 256, 8), {"to_bev"});
  return g;
}

NetGraph rpn_v1(int in_channels) { return rpn_cascade("RPN-v1", in_channels, {2, 2, 2}, {128, 128, 256}, {256, 256, 256}); }

NetGraph rpn_v2(int in_channels) { return rpn_cascade("RPN-v2", in_channels, {1, 2, 2}, {256, 256, 512}, {512, 512, 512}); }

NetGraph rpn_v3(int in_channels) {
  constexpr int kLateral = 96;
  constexpr int kRepeats = 4;
  NetGraph g = rpn_cascade("RPN-v3", in_channels, {1, 2, 2}, {96, 96, 192}, {192, 192, 192});
  // Rewire: lateral 1x1 projections to a uniform width, a BiFPN stack per
  // scale, then the upsample branches read the BiFPN outputs.
  std::vector<NetNode> nodes;
  for (NetNode& n : g.nodes) {
    if (n.name.rfind("up", 0) == 0 || n.name == "concat") continue;
    nodes.push_back(n);
  }
  g.nodes = std::move(nodes);
  g.add("lateral1", layer(LayerKind::kConv2D, 1, 96, kLateral), {"down1"});
  g.add("lateral2", layer(LayerKind::kConv2D, 1, 96, kLateral), {"down2"});
  g.add("lateral3", layer(LayerKind::kConv2D, 1, 192, kLateral), {"down3"});
  g.add("bifpn.p1", layer(LayerKind::kBiFPNBlock, 1, kLateral, kLateral, kRepeats), {"lateral1", "lateral2", "lateral3"});
  g.add("bifpn.p2", layer(LayerKind::kBiFPNBlock, 1, kLateral, kLateral, kRepeats), {"lateral2", "lateral1", "lateral3"});
  g.add("bifpn.p3", layer(LayerKind::kBiFPNBlock, 1, kLateral, kLateral, kRepeats), {"lateral3", "lateral1", "lateral2"});
  g.add("up1", layer(LayerKind::kTransposedConv2D, 1, kLateral, 192), {"bifpn.p1"});
  g.add("up2", layer(LayerKind::kTransposedConv2D, Stride(1, 2), kLateral, 192), {"bifpn.p2"});
  g.add("up3", layer(LayerKind::kTransposedConv2D, Stride(1, 4), kLateral, 192), {"bifpn.p3"});
  g.add("concat", layer(LayerKind::kConcat, 1, 0, 0), {"up1", "up2", "up3"});
  return g;
}

NetGraph chain(const NetGraph& first, const NetGraph& second) {
  NetGraph g{first.name + "+" + second.name, {}, "fe." + first.input, "rpn." + second.output};
  for (const NetNode& n : first.nodes) {
    NetNode copy = n;
    copy.name = "fe." + n.name;
    for (auto& in : copy.inputs) in = "fe." + in;
    g.nodes.push_back(std::move(copy));
  }
  for (const NetNode& n : second.nodes) {
    if (n.name == second.input) continue;
    NetNode copy = n;
    copy.name = "rpn." + n.name;
    for (auto& in : copy.inputs) in = in == second.input ? "fe." + first.output : "rpn." + in;
    g.nodes.push_back(std::move(copy));
  }
  return g;
}

std::string_view backbone_name(Backbone b) {
  switch (b) {
    case Backbone::kB1: return "B1";
    case Backbone::kB2: return "B2";
    case Backbone::kB3: return "B3";
  }
  return "?";
}

bool parse_backbone(std::string_view name, Backbone& out) {
  for (Backbone b : {Backbone::kB1, Backbone::kB2, Backbone::kB3}) {
    if (name == backbone_name(b)) {
      out = b;
      return true;
    }
  }
  return false;
}

BackboneGraphs backbone_graphs(Backbone b, int in_channels) {
  NetGraph fe = b == Backbone::kB2 ? fe_v2(in_channels) : fe_v1(in_channels);
  const int fe_out = propagate(fe).output.channels;
  NetGraph rpn = b == Backbone::kB1 ? rpn_v1(fe_out) : b == Backbone::kB2 ? rpn_v2(fe_out) : rpn_v3(fe_out);
  NetGraph combined = chain(fe, rpn);
  combined.name = std::string(backbone_name(b));
  return {std::move(fe), std::move(rpn), std::move(combined)};
}

int expected_downsample(Backbone b) { return b == Backbone::kB3 ? 4 : 8; }

int check_backbone(Backbone b) {
  const BackboneGraphs graphs = backbone_graphs(b);
  const Stride fe = propagate(graphs.feature_extractor).output.stride;
  const Stride rpn = propagate(graphs.rpn).output.stride;
  const Stride total = propagate(graphs.combined).output.stride;
  if (!(total == fe * rpn)) {
    fail(ErrorKind::kShape, std::string(backbone_name(b)) + ": composed stride " + total.str() +
                                " differs from FE x RPN " + (fe * rpn).str());
  }
  if (!total.is_integer()) fail(ErrorKind::kShape, std::string(backbone_name(b)) + ": non-integer downsample factor");
  return static_cast<int>(total.num());
}

namespace {

std::vector<int> block_channels(const NetGraph& g) {
  std::vector<int> out;
  for (const char* name : {"down1", "down2", "down3", "up1", "up2", "up3"}) out.push_back(g.find(name)->layer.out_channels);
  return out;
}

}  // namespace

ChannelReport rpn_v3_channels() {
  ChannelReport r;
  r.rpn_v1_blocks = block_channels(rpn_v1(128));
  r.rpn_v2_blocks = block_channels(rpn_v2(256));
  const NetGraph v3 = rpn_v3(128);
  r.rpn_v3_blocks = block_channels(v3);
  const Propagation p = propagate(v3);
  for (const NetNode& n : v3.nodes) {
    if (n.layer.kind != LayerKind::kBiFPNBlock) continue;
    r.bifpn_channels.push_back(p.shapes.at(n.name).channels);
    if (r.bifpn_repeats != 0 && r.bifpn_repeats != n.layer.repeat) {
      fail(ErrorKind::kShape, "BiFPN scales disagree on repeat count");
    }
    r.bifpn_repeats = n.layer.repeat;
  }
  return r;
}

std::string format_table(const NetGraph& g, const Propagation& p) {
  std::ostringstream os;
  os << g.name << '\n';
  os << std::left << std::setw(24) << "node" << std::setw(14) << "kind" << std::setw(8) << "repeat" << std::setw(8)
     << "stride" << "channels\n";
  for (const std::string& name : p.order) {
    const NetNode* n = g.find(name);
    const NodeShape& s = p.shapes.at(name);
    os << std::left << std::setw(24) << name << std::setw(14) << kind_name(n->layer.kind) << std::setw(8)
       << n->layer.repeat << std::setw(8) << s.stride.str() << s.channels << '\n';
  }
  return os.str();
}

}  // namespace kp3d::netspec
