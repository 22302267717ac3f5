// SPDX-License-Identifier: Apache-2.0
#include "dskd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dskd/error.hpp"

namespace dskd {

std::string to_string(ImageLabel label) {
  switch (label) {
    case ImageLabel::Good: return "good";
    case ImageLabel::Structural: return "structural";
    case ImageLabel::Logical: return "logical";
  }
  return "good";
}

std::string to_string(DefectType type) {
  return type == DefectType::Structural ? "structural" : "logical";
}

std::size_t Mask::area() const {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [](std::uint8_t v) { return v != 0; }));
}

void DefectRegion::validate() const {
  const auto a = static_cast<double>(mask.area());
  if (a == 0.0) throw ContractError("defect region has an empty mask");
  if (!(saturation_threshold > 0.0) || saturation_threshold > a) {
    throw ContractError("saturation threshold " + std::to_string(saturation_threshold) +
                        " outside (0, " + std::to_string(a) + "]");
  }
}

// ---------------------------------------------------------------------------
// AUROC

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw InputError("auroc: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw InputError("auroc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetricError("AUROC needs both anomalous and good samples");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of mid-ranks (1-based) of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum += mid_rank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// sPRO

namespace {

struct PixelEntry {
  double score;
  int region;  // -1 = normal pixel
};

struct SweepInput {
  std::vector<PixelEntry> entries;  // sorted by score descending
  std::vector<double> saturation;   // per region
  std::size_t normal_pixels = 0;
};

SweepInput prepare_sweep(std::span<const EvalRecord> records) {
  SweepInput in;
  for (const EvalRecord& r : records) {
    const ScoreMap& m = r.anomaly_map;
    std::vector<std::uint8_t> inside(m.values.size(), 0);
    for (const DefectRegion& reg : r.regions) {
      reg.validate();
      if (reg.mask.h != m.h || reg.mask.w != m.w) {
        throw InputError("sPRO: mask " + std::to_string(reg.mask.h) + "x" +
                         std::to_string(reg.mask.w) + " does not match anomaly map size");
      }
      const int id = static_cast<int>(in.saturation.size());
      in.saturation.push_back(reg.saturation_threshold);
      for (std::size_t i = 0; i < m.values.size(); ++i) {
        if (reg.mask.values[i]) {
          inside[i] = 1;
          in.entries.push_back({m.values[i], id});
        }
      }
    }
    for (std::size_t i = 0; i < m.values.size(); ++i) {
      if (!inside[i]) {
        in.entries.push_back({m.values[i], -1});
        ++in.normal_pixels;
      }
    }
  }
  if (in.saturation.empty()) throw UndefinedMetricError("sPRO needs at least one defect region");
  if (in.normal_pixels == 0) throw UndefinedMetricError("sPRO needs defect-free pixels for the FPR");
  std::stable_sort(in.entries.begin(), in.entries.end(),
                   [](const PixelEntry& a, const PixelEntry& b) { return a.score > b.score; });
  return in;
}

/// Consumes entries with score >= threshold starting at `cursor`.
void advance(const SweepInput& in, double threshold, std::size_t& cursor,
             std::vector<double>& overlap, std::size_t& false_pos) {
  while (cursor < in.entries.size() && in.entries[cursor].score >= threshold) {
    const PixelEntry& e = in.entries[cursor++];
    if (e.region < 0) {
      ++false_pos;
    } else {
      overlap[static_cast<std::size_t>(e.region)] += 1.0;
    }
  }
}

CurvePoint make_point(const SweepInput& in, const std::vector<double>& overlap,
                      std::size_t false_pos) {
  double spro = 0.0;
  for (std::size_t k = 0; k < overlap.size(); ++k) {
    spro += std::min(overlap[k] / in.saturation[k], 1.0);
  }
  return {static_cast<double>(false_pos) / static_cast<double>(in.normal_pixels),
          spro / static_cast<double>(overlap.size())};
}

}  // namespace

CurvePoint spro_at_threshold(std::span<const EvalRecord> records, double threshold) {
  const SweepInput in = prepare_sweep(records);
  std::vector<double> overlap(in.saturation.size(), 0.0);
  std::size_t cursor = 0, false_pos = 0;
  advance(in, threshold, cursor, overlap, false_pos);
  return make_point(in, overlap, false_pos);
}

std::vector<CurvePoint> spro_curve(std::span<const EvalRecord> records, int num_thresholds) {
  if (num_thresholds < 2) throw ConfigError("spro_curve: need at least 2 thresholds");
  const SweepInput in = prepare_sweep(records);

  // Quantiles of the pooled scores; entries are sorted descending.
  const std::size_t m = in.entries.size();
  std::vector<double> thresholds;
  thresholds.reserve(static_cast<std::size_t>(num_thresholds) + 1);
  thresholds.push_back(std::numeric_limits<double>::infinity());
  for (int k = 0; k < num_thresholds; ++k) {
    const double q = static_cast<double>(k) / (num_thresholds - 1);
    const auto idx = static_cast<std::size_t>(std::llround(q * static_cast<double>(m - 1)));
    const double t = in.entries[idx].score;
    if (t < thresholds.back()) thresholds.push_back(t);
  }

  std::vector<CurvePoint> curve;
  std::vector<double> overlap(in.saturation.size(), 0.0);
  std::size_t cursor = 0, false_pos = 0;
  for (double t : thresholds) {
    advance(in, t, cursor, overlap, false_pos);
    curve.push_back(make_point(in, overlap, false_pos));
  }
  std::stable_sort(curve.begin(), curve.end(), [](const CurvePoint& a, const CurvePoint& b) {
    return a.fpr < b.fpr || (a.fpr == b.fpr && a.spro < b.spro);
  });
  return curve;
}

AreaResult au_spro(std::span<const CurvePoint> curve, double fpr_limit) {
  if (!(fpr_limit > 0.0) || fpr_limit > 1.0) throw ConfigError("fpr_limit must lie in (0, 1]");
  if (curve.empty()) throw UndefinedMetricError("au_spro: empty curve");
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (curve[i].fpr < curve[i - 1].fpr) throw InputError("au_spro: curve not sorted by FPR");
  }
  AreaResult result;
  std::vector<CurvePoint> pts(curve.begin(), curve.end());
  if (pts.front().fpr > 0.0) {
    result.warnings.push_back("curve does not start at FPR 0; prepended (0, 0)");
    pts.insert(pts.begin(), CurvePoint{0.0, 0.0});
  }
  if (pts.back().fpr < fpr_limit) {
    result.warnings.push_back("curve ends at FPR " + std::to_string(pts.back().fpr) +
                              " below the limit; extended with its last sPRO value");
    pts.push_back({fpr_limit, pts.back().spro});
  }
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const CurvePoint& a = pts[i - 1];
    const CurvePoint& b = pts[i];
    if (a.fpr >= fpr_limit) break;
    if (b.fpr <= fpr_limit) {
      area += 0.5 * (a.spro + b.spro) * (b.fpr - a.fpr);
    } else {
      const double t = (fpr_limit - a.fpr) / (b.fpr - a.fpr);
      const double at_limit = a.spro + t * (b.spro - a.spro);
      area += 0.5 * (a.spro + at_limit) * (fpr_limit - a.fpr);
      break;
    }
  }
  result.value = area / fpr_limit;
  return result;
}

// ---------------------------------------------------------------------------
// Report

namespace {

MetricValue subset_auroc(std::span<const EvalRecord> records, ImageLabel positive) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const EvalRecord& r : records) {
    if (r.label == ImageLabel::Good || r.label == positive) {
      scores.push_back(r.image_score);
      labels.push_back(r.label == positive ? 1 : 0);
    }
  }
  try {
    if (!scores.empty() &&
        std::all_of(scores.begin(), scores.end(), [&](double s) { return s == scores.front(); })) {
      throw UndefinedMetricError("all image scores are identical; the ranking is uninformative");
    }
    return {auroc(scores, labels), {}};
  } catch (const UndefinedMetricError& e) {
    return {std::nullopt, e.what()};
  }
}

MetricValue subset_au_spro(std::span<const EvalRecord> records, ImageLabel positive,
                           double fpr_limit, int num_thresholds, std::vector<std::string>& warnings) {
  std::vector<EvalRecord> subset;
  for (const EvalRecord& r : records) {
    if (r.label == ImageLabel::Good || r.label == positive) subset.push_back(r);
  }
  try {
    const auto curve = spro_curve(subset, num_thresholds);
    AreaResult area = au_spro(curve, fpr_limit);
    for (auto& w : area.warnings) warnings.push_back(to_string(positive) + ": " + w);
    return {area.value, {}};
  } catch (const UndefinedMetricError& e) {
    return {std::nullopt, e.what()};
  }
}

MetricValue mean_of(const MetricValue& a, const MetricValue& b) {
  if (a.value && b.value) return {0.5 * (*a.value + *b.value), {}};
  return {std::nullopt, "mean undefined: " + (a.value ? b.error : a.error)};
}

nlohmann::json to_json_value(const MetricValue& v) {
  if (v.value) return *v.value;
  return {{"error", v.error}};
}

}  // namespace

MetricsReport build_report(std::span<const EvalRecord> records, const std::string& category,
                           const std::string& mode, double fpr_limit, int num_thresholds) {
  MetricsReport r;
  r.category = category;
  r.mode = mode;
  r.fpr_limit = fpr_limit;
  r.auroc_structural = subset_auroc(records, ImageLabel::Structural);
  r.auroc_logical = subset_auroc(records, ImageLabel::Logical);
  r.auroc_mean = mean_of(r.auroc_structural, r.auroc_logical);
  r.au_spro_structural =
      subset_au_spro(records, ImageLabel::Structural, fpr_limit, num_thresholds, r.warnings);
  r.au_spro_logical =
      subset_au_spro(records, ImageLabel::Logical, fpr_limit, num_thresholds, r.warnings);
  r.au_spro_mean = mean_of(r.au_spro_structural, r.au_spro_logical);
  return r;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["category"] = category;
  j["mode"] = mode;
  j["fpr_limit"] = fpr_limit;
  j["auroc"] = {{"structural", to_json_value(auroc_structural)},
                {"logical", to_json_value(auroc_logical)},
                {"mean", to_json_value(auroc_mean)}};
  j["au_spro"] = {{"structural", to_json_value(au_spro_structural)},
                  {"logical", to_json_value(au_spro_logical)},
                  {"mean", to_json_value(au_spro_mean)}};
  j["warnings"] = warnings;
  return j.dump(2) + "\n";
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "category,split,metric,value\n";
  const auto row = [&](const char* split, const std::string& metric, const MetricValue& v) {
    out << category << ',' << split << ',' << metric << ',';
    if (v.value) out << *v.value;
    out << '\n';
  };
  std::ostringstream limit;
  limit << "au_spro@" << fpr_limit;
  row("structural", "auroc", auroc_structural);
  row("logical", "auroc", auroc_logical);
  row("mean", "auroc", auroc_mean);
  row("structural", limit.str(), au_spro_structural);
  row("logical", limit.str(), au_spro_logical);
  row("mean", limit.str(), au_spro_mean);
  return out.str();
}

}  // namespace dskd
