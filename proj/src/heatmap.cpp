// SPDX-License-Identifier: Apache-2.0
#include "dskd/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "dskd/error.hpp"

namespace fs = std::filesystem;

namespace dskd {

std::array<std::uint8_t, 3> jet(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const auto ch = [&](double centre) {
    const double v = std::clamp(1.5 - std::abs(4.0 * t - centre), 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(v * 255.0));
  };
  return {ch(3.0), ch(2.0), ch(1.0)};
}

Image8 colorize(const ScoreMap& map, double lo, double hi) {
  Image8 img(map.h, map.w, 3);
  const double range = hi - lo;
  for (int y = 0; y < map.h; ++y) {
    for (int x = 0; x < map.w; ++x) {
      const double t = range > 0.0 ? (map.at(y, x) - lo) / range : 0.0;
      const auto rgb = jet(t);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
    }
  }
  return img;
}

namespace {

Image8 side_by_side(const std::vector<Image8>& panels) {
  int w = 0;
  for (const auto& p : panels) w += p.w;
  Image8 out(panels.front().h, w, 3);
  int x0 = 0;
  for (const auto& p : panels) {
    for (int y = 0; y < p.h; ++y) {
      std::copy_n(&p.data[static_cast<std::size_t>(y) * p.w * 3], p.w * 3, &out.at(y, x0, 0));
    }
    x0 += p.w;
  }
  return out;
}

std::string html_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> export_heatmaps(std::span<const FusedResult> results,
                                         const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw IoError("cannot create output directory '" + out_dir + "'");
  }

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  const auto widen = [&](const ScoreMap& m) {
    for (double v : m.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  };
  for (const auto& r : results) {
    if (r.local) widen(*r.local);
    if (r.global) widen(*r.global);
    widen(r.fused);
  }

  std::vector<std::string> files;
  std::string rows;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const FusedResult& r = results[i];
    char prefix[24];
    std::snprintf(prefix, sizeof prefix, "%04zu_", i);
    const std::string stem = prefix + to_string(r.label) + "_" + r.name;
    const std::string input = stem + "_input.png";
    const std::string students = stem + "_students.png";
    const std::string fused = stem + "_fused.png";

    write_png((fs::path(out_dir) / input).string(), to_image8(r.image));
    std::vector<Image8> panels;
    if (r.local) panels.push_back(colorize(*r.local, lo, hi));
    if (r.global) panels.push_back(colorize(*r.global, lo, hi));
    if (panels.empty()) panels.push_back(colorize(r.fused, lo, hi));
    write_png((fs::path(out_dir) / students).string(), side_by_side(panels));
    write_png((fs::path(out_dir) / fused).string(), colorize(r.fused, lo, hi));
    files.insert(files.end(), {input, students, fused});

    char score[32];
    std::snprintf(score, sizeof score, "%.6f", r.score);
    rows += "<tr><td>" + html_escape(r.name) + "</td><td>" + to_string(r.label) + "</td><td>" +
            score + "</td>";
    for (const auto* f : {&input, &students, &fused}) {
      rows += "<td><img src=\"" + html_escape(*f) + "\"></td>";
    }
    rows += "</tr>\n";
  }

  char scale[96];
  std::snprintf(scale, sizeof scale, "%.6f to %.6f", results.empty() ? 0.0 : lo,
                results.empty() ? 0.0 : hi);
  std::ofstream html(fs::path(out_dir) / "index.html");
  html << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>anomaly maps</title></head>\n"
       << "<body>\n<p>shared colour scale: " << scale << " (jet)</p>\n"
       << "<table>\n<tr><th>image</th><th>label</th><th>score</th><th>input</th>"
       << "<th>local | global</th><th>fused</th></tr>\n"
       << rows << "</table>\n</body></html>\n";
  if (!html) throw IoError("cannot write index.html in '" + out_dir + "'");
  files.push_back("index.html");
  return files;
}

}  // namespace dskd
