// SPDX-License-Identifier: Apache-2.0
//
// Distillation objectives and their per-position score maps.
//
// Local student: per-position cosine distance between teacher and student
// feature vectors.
//
// Global student: for every position i, a contextual-affinity distribution
// over all positions j. The teacher distribution uses cos(t_i, t_j); the
// student distribution uses cos(s_i, t_j), i.e. the student vector against
// the whole *teacher* map. Both are softmax(cos / T). The per-position score
// is T^2 * KL(P_T,i || P_S,i).
#pragma once

#include <array>
#include <vector>

#include "dskd/backbone.hpp"
#include "dskd/tensor.hpp"

namespace dskd {

/// Norms below this are clamped before division.
inline constexpr double kNormEpsilon = 1e-8;
/// Student probabilities are floored at this value inside the logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

enum class ScoreKind { Cosine, AffinityKl, Fused };

struct ScoreMap {
  int h = 0;
  int w = 0;
  std::vector<double> values;
  ScoreKind kind = ScoreKind::Cosine;

  ScoreMap() = default;
  ScoreMap(int h_, int w_, ScoreKind k, double fill = 0.0)
      : h(h_), w(w_), values(static_cast<std::size_t>(h_) * w_, fill), kind(k) {}

  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * w + x]; }
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * w + x]; }
  double max() const;
  double mean() const;
  friend bool operator==(const ScoreMap&, const ScoreMap&) = default;
};

enum class AffinitySource { Teacher, Student };

/// Row-stochastic N x N matrix; row i is the distribution for position i.
struct AffinityMatrix {
  RowMatrix rows;
  double temperature = 1.0;
  AffinitySource source = AffinitySource::Teacher;
  int h = 0;
  int w = 0;

  int n() const { return static_cast<int>(rows.rows()); }
};

ScoreMap cosine_score_map(const Tensor& teacher, const Tensor& student);

/// Sum over levels of the mean cosine distance. When `grad` is given it
/// receives dLoss/dF_S per level.
double local_loss(const FeaturePyramid& teacher, const FeaturePyramid& student,
                  std::array<Tensor, 3>* grad = nullptr);

AffinityMatrix teacher_affinity(const Tensor& teacher, double temperature);
AffinityMatrix student_affinity(const Tensor& student, const Tensor& teacher, double temperature);

ScoreMap affinity_kl_map(const AffinityMatrix& p_teacher, const AffinityMatrix& p_student);

/// Same values as affinity_kl_map(teacher_affinity(t), student_affinity(s, t))
/// without materialising the N x N matrices: rows are processed in blocks of
/// `chunk_rows` (<= 0 means all at once).
ScoreMap global_score_map(const Tensor& teacher, const Tensor& student, double temperature,
                          int chunk_rows = 0);

/// Sum over levels of the mean affinity KL. `grad` receives dLoss/dF_S.
double global_loss(const FeaturePyramid& teacher, const FeaturePyramid& student,
                   double temperature, std::array<Tensor, 3>* grad = nullptr,
                   int chunk_rows = 0);

}  // namespace dskd
