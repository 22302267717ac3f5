// SPDX-License-Identifier: Apache-2.0
#include "dskd/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "dskd/error.hpp"

namespace dskd {

ScoreMap resize_bilinear(const ScoreMap& map, int h, int w) {
  if (map.h <= 0 || map.w <= 0) throw InputError("resize: empty map");
  if (h <= 0 || w <= 0) throw InputError("resize: non-positive target size");
  if (map.h == h && map.w == w) return map;
  ScoreMap out(h, w, map.kind);
  const double sy = static_cast<double>(map.h) / h;
  const double sx = static_cast<double>(map.w) / w;
  for (int y = 0; y < h; ++y) {
    const double fy = std::max((y + 0.5) * sy - 0.5, 0.0);
    const int y0 = std::min(static_cast<int>(fy), map.h - 1);
    const int y1 = std::min(y0 + 1, map.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = std::max((x + 0.5) * sx - 0.5, 0.0);
      const int x0 = std::min(static_cast<int>(fx), map.w - 1);
      const int x1 = std::min(x0 + 1, map.w - 1);
      const double wx = fx - x0;
      const double top = (1.0 - wx) * map.at(y0, x0) + wx * map.at(y0, x1);
      const double bottom = (1.0 - wx) * map.at(y1, x0) + wx * map.at(y1, x1);
      out.at(y, x) = (1.0 - wy) * top + wy * bottom;
    }
  }
  return out;
}

ScoreMap accumulate_maps(std::span<const ScoreMap> level_maps, int h, int w) {
  if (level_maps.empty()) throw ContractError("accumulate_maps: no level maps given");
  ScoreMap total(h, w, level_maps.front().kind);
  for (const ScoreMap& m : level_maps) {
    const ScoreMap up = resize_bilinear(m, h, w);
    for (std::size_t i = 0; i < total.values.size(); ++i) total.values[i] += up.values[i];
  }
  return total;
}

namespace {

void pooled_stats(std::span<const ScoreMap> maps, const char* who, double& mu, double& sigma,
                  std::vector<std::string>& warnings) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const ScoreMap& m : maps) {
    for (double v : m.values) sum += v;
    count += m.values.size();
  }
  if (count == 0) throw ContractError(std::string("fit_normalizer: no pixels for ") + who);
  mu = sum / static_cast<double>(count);
  double sq = 0.0;
  for (const ScoreMap& m : maps) {
    for (double v : m.values) sq += (v - mu) * (v - mu);
  }
  sigma = std::sqrt(sq / static_cast<double>(count));
  if (!(sigma >= kSigmaFloor)) {
    warnings.push_back(std::string("zero variance in ") + who +
                       " validation maps; sigma floored at 1e-8");
    sigma = kSigmaFloor;
  }
}

}  // namespace

Normalizer fit_normalizer(std::span<const ScoreMap> maps_loc, std::span<const ScoreMap> maps_glo) {
  if (maps_loc.empty() && maps_glo.empty()) {
    throw ContractError("fit_normalizer: at least one student needs validation maps");
  }
  Normalizer n;
  if (!maps_loc.empty()) pooled_stats(maps_loc, "local", n.mu_loc, n.sigma_loc, n.warnings);
  if (!maps_glo.empty()) pooled_stats(maps_glo, "global", n.mu_glo, n.sigma_glo, n.warnings);
  n.fitted = true;
  return n;
}

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::Local: return "local";
    case FusionMode::Global: return "global";
    case FusionMode::Combined: return "combined";
  }
  return "combined";
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "local") return FusionMode::Local;
  if (s == "global") return FusionMode::Global;
  if (s == "combined") return FusionMode::Combined;
  throw ConfigError("unknown evaluation mode '" + s + "' (expected local, global or combined)");
}

ScoreMap normalize_single(const ScoreMap& map, double mu, double sigma, const Normalizer& norm) {
  if (!norm.fitted) throw StateError("normalizer used before fit_normalizer");
  ScoreMap out(map.h, map.w, ScoreKind::Fused);
  for (std::size_t i = 0; i < map.values.size(); ++i) out.values[i] = (map.values[i] - mu) / sigma;
  return out;
}

ScoreMap combine(const ScoreMap& m_loc, const ScoreMap& m_glo, const Normalizer& norm) {
  if (!norm.fitted) throw StateError("normalizer used before fit_normalizer");
  if (m_loc.h != m_glo.h || m_loc.w != m_glo.w) throw InputError("combine: map size mismatch");
  ScoreMap out(m_loc.h, m_loc.w, ScoreKind::Fused);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = (m_loc.values[i] - norm.mu_loc) / norm.sigma_loc +
                    (m_glo.values[i] - norm.mu_glo) / norm.sigma_glo;
  }
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian kernel needs sigma > 0");
  const int radius = static_cast<int>(4.0 * sigma + 0.5);
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

namespace {

/// Reflect index into [0, n): ... 1 0 | 0 1 ... n-1 | n-1 n-2 ...
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace

ScoreMap gaussian_filter(const ScoreMap& map, double sigma) {
  if (sigma < 0.0 || !std::isfinite(sigma)) throw ConfigError("gaussian sigma must be >= 0");
  if (sigma == 0.0) return map;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  ScoreMap tmp(map.h, map.w, map.kind);
  for (int y = 0; y < map.h; ++y) {
    for (int x = 0; x < map.w; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) acc += k[d + r] * map.at(y, reflect(x + d, map.w));
      tmp.at(y, x) = acc;
    }
  }
  // A convex combination stays within the input range; clamp away rounding.
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  ScoreMap out(map.h, map.w, map.kind);
  for (int y = 0; y < map.h; ++y) {
    for (int x = 0; x < map.w; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) acc += k[d + r] * tmp.at(reflect(y + d, map.h), x);
      out.at(y, x) = std::clamp(acc, *lo, *hi);
    }
  }
  return out;
}

double image_score(const ScoreMap& map, double gaussian_sigma) {
  return gaussian_filter(map, gaussian_sigma).max();
}

}  // namespace dskd
