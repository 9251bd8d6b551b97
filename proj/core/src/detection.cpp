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

#include "kp3d/detection.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "kp3d/error.hpp"

namespace kp3d {

namespace {

void append_g9(std::string& out, double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.9g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

double parse_number(std::string_view tok, std::string_view origin, std::size_t line) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    fail(ErrorKind::kFormat, std::string(origin) + ":" + std::to_string(line) + ": bad number '" + std::string(tok) + "'");
  }
  return v;
}

}  // namespace

std::string format_record(std::string_view frame_id, const Box3D& b, bool with_difficulty) {
  if (frame_id.empty() || frame_id.find_first_of(" \t\n") != std::string_view::npos) {
    fail(ErrorKind::kFormat, "frame id must be a non-empty token without whitespace");
  }
  std::string out(frame_id);
  out += ' ';
  out += class_name(b.cls);
  for (double v : {b.score, b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw}) {
    out += ' ';
    append_g9(out, v);
  }
  if (with_difficulty) {
    out += ' ';
    out += difficulty_name(b.difficulty);
  }
  return out;
}

void write_detections(const std::filesystem::path& path, std::span<const DetectionSet> sets, bool with_difficulty) {
  std::string text;
  for (const DetectionSet& s : sets) {
    for (const Box3D& b : s.boxes) {
      text += format_record(s.frame_id, b, with_difficulty);
      text += '\n';
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  f << text;
  if (!f) fail(ErrorKind::kIo, "failed writing " + path.string());
}

std::vector<DetectionSet> parse_detections(std::string_view text, std::string_view origin) {
  std::vector<DetectionSet> out;
  std::map<std::string, std::size_t, std::less<>> slot;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<std::string> tok;
    for (std::string t; fields >> t;) tok.push_back(std::move(t));
    if (tok.empty() || tok[0][0] == '#') continue;
    if (tok.size() != 10 && tok.size() != 11) {
      fail(ErrorKind::kFormat, std::string(origin) + ":" + std::to_string(line_no) + ": expected 10 or 11 fields");
    }
    const auto cls = parse_class(tok[1]);
    if (!cls) fail(ErrorKind::kFormat, std::string(origin) + ":" + std::to_string(line_no) + ": unknown class " + tok[1]);
    double v[8];
    for (int k = 0; k < 8; ++k) v[k] = parse_number(tok[static_cast<std::size_t>(k) + 2], origin, line_no);
    Box3D b{v[1], v[2], v[3], v[4], v[5], v[6], v[7], *cls, v[0], Difficulty::kL1};
    if (tok.size() == 11) {
      const auto d = parse_difficulty(tok[10]);
      if (!d) fail(ErrorKind::kFormat, std::string(origin) + ":" + std::to_string(line_no) + ": bad difficulty");
      b.difficulty = *d;
    }
    auto [it, inserted] = slot.try_emplace(tok[0], out.size());
    if (inserted) out.push_back({tok[0], std::string(origin), {}});
    out[it->second].boxes.push_back(b);
  }
  return out;
}

std::vector<DetectionSet> read_detections(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_detections(ss.str(), path.filename().string());
}

std::vector<DetectionSet> read_detection_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::kIo, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".det") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<DetectionSet> out;
  std::map<std::string, std::size_t> slot;
  for (const auto& file : files) {
    for (DetectionSet& s : read_detections(file)) {
      auto [it, inserted] = slot.try_emplace(s.frame_id, out.size());
      if (inserted) {
        out.push_back(std::move(s));
      } else {
        auto& dst = out[it->second].boxes;
        dst.insert(dst.end(), s.boxes.begin(), s.boxes.end());
      }
    }
  }
  return out;
}

}  // namespace kp3d
