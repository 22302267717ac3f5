// SPDX-License-Identifier: Apache-2.0
//
// Fusion of per-level score maps into the final anomaly map and image score.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "dskd/losses.hpp"

namespace dskd {

/// Floor applied to fitted standard deviations.
inline constexpr double kSigmaFloor = 1e-8;

/// Bilinear resize with the half-pixel-centre convention (source coordinate
/// (dst + 0.5) * in / out - 0.5, clamped at the borders).
ScoreMap resize_bilinear(const ScoreMap& map, int h, int w);

/// Upsamples each level map to `h` x `w` and sums them.
ScoreMap accumulate_maps(std::span<const ScoreMap> level_maps, int h, int w);

struct Normalizer {
  double mu_loc = 0.0;
  double sigma_loc = 1.0;
  double mu_glo = 0.0;
  double sigma_glo = 1.0;
  bool fitted = false;
  std::vector<std::string> warnings;
};

/// Pooled pixel mean / standard deviation per student over accumulated
/// validation maps. Either collection may be empty when that student is
/// not trained, but not both.
Normalizer fit_normalizer(std::span<const ScoreMap> maps_loc, std::span<const ScoreMap> maps_glo);

enum class FusionMode { Local, Global, Combined };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& s);

/// (M_loc - mu_loc) / sigma_loc + (M_glo - mu_glo) / sigma_glo.
ScoreMap combine(const ScoreMap& m_loc, const ScoreMap& m_glo, const Normalizer& norm);
/// Single-term variants of combine used for per-student evaluation.
ScoreMap normalize_single(const ScoreMap& map, double mu, double sigma, const Normalizer& norm);

/// 1-D Gaussian taps for `sigma`, truncated at 4 sigma and normalised to sum 1.
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian smoothing with reflect padding (d c b a | a b c d).
/// sigma = 0 returns the map unchanged.
ScoreMap gaussian_filter(const ScoreMap& map, double sigma);

/// Maximum of the Gaussian-smoothed map.
double image_score(const ScoreMap& map, double gaussian_sigma);

}  // namespace dskd
