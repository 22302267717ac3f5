// SPDX-License-Identifier: Apache-2.0
//
// Image-level AUROC and the saturated per-region overlap (sPRO) curve.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dskd/losses.hpp"

namespace dskd {

enum class ImageLabel { Good, Structural, Logical };
enum class DefectType { Structural, Logical };

std::string to_string(ImageLabel label);
std::string to_string(DefectType type);

/// Binary h x w mask, nonzero = inside.
struct Mask {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(int h_, int w_) : h(h_), w(w_), values(static_cast<std::size_t>(h_) * w_, 0) {}
  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * w + x]; }
  std::size_t area() const;
  friend bool operator==(const Mask&, const Mask&) = default;
};

struct DefectRegion {
  Mask mask;
  double saturation_threshold = 0.0;  // pixels, 0 < threshold <= area
  DefectType defect_type = DefectType::Structural;
  std::string defect_name;

  /// Throws ContractError when the mask is empty or the threshold is out of range.
  void validate() const;
  friend bool operator==(const DefectRegion&, const DefectRegion&) = default;
};

struct EvalRecord {
  double image_score = 0.0;
  ImageLabel label = ImageLabel::Good;
  ScoreMap anomaly_map;
  std::vector<DefectRegion> regions;
};

/// Rank-based AUROC with mid-rank ties: P(score_pos > score_neg) + P(tie)/2.
/// `labels` are 1 for anomalous (positive), 0 for good.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct CurvePoint {
  double fpr = 0.0;
  double spro = 0.0;
  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

/// Sweeps thresholds over `num_thresholds` descending unique quantiles of
/// the pooled pixel scores (plus +inf for the empty prediction). Returns
/// the curve sorted by FPR ascending. FPR is counted over every pixel
/// outside all defect masks, across all records.
std::vector<CurvePoint> spro_curve(std::span<const EvalRecord> records, int num_thresholds = 512);

/// sPRO / FPR at a single binarization threshold (prediction = score >= t).
CurvePoint spro_at_threshold(std::span<const EvalRecord> records, double threshold);

struct AreaResult {
  double value = 0.0;
  std::vector<std::string> warnings;
};

/// Normalised area under the sPRO curve on [0, fpr_limit].
AreaResult au_spro(std::span<const CurvePoint> curve, double fpr_limit);

/// A metric value or the reason it is undefined.
struct MetricValue {
  std::optional<double> value;
  std::string error;
};

struct MetricsReport {
  std::string category;
  std::string mode;
  double fpr_limit = 0.05;
  MetricValue auroc_structural, auroc_logical, auroc_mean;
  MetricValue au_spro_structural, au_spro_logical, au_spro_mean;
  std::vector<std::string> warnings;

  std::string to_json() const;
  /// Columns: category,split,metric,value (empty value when undefined).
  std::string to_csv() const;
};

/// Builds the headline report from evaluated records: AUROC and AU-sPRO on
/// {good + structural} and {good + logical}, then their means.
MetricsReport build_report(std::span<const EvalRecord> records, const std::string& category,
                           const std::string& mode, double fpr_limit = 0.05,
                           int num_thresholds = 512);

}  // namespace dskd
