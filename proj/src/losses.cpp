// SPDX-License-Identifier: Apache-2.0
#include "dskd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dskd/error.hpp"

namespace dskd {

double ScoreMap::max() const {
  if (values.empty()) throw InputError("score map is empty");
  return *std::max_element(values.begin(), values.end());
}

double ScoreMap::mean() const {
  if (values.empty()) throw InputError("score map is empty");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

namespace {

struct Normalized {
  RowMatrix unit;               // rows scaled to unit length (clamped norm)
  Eigen::VectorXd norm;         // clamped norms
};

Normalized normalize_rows(const Tensor& t) {
  Normalized out;
  out.unit = t.matrix();
  out.norm = out.unit.rowwise().norm();
  for (Eigen::Index i = 0; i < out.norm.size(); ++i) {
    out.norm[i] = std::max(out.norm[i], kNormEpsilon);
    out.unit.row(i) /= out.norm[i];
  }
  return out;
}

/// Gradient w.r.t. raw rows given the gradient w.r.t. the normalised rows.
void backprop_normalize(const Normalized& n, const RowMatrix& grad_unit, const Tensor& raw,
                        Tensor& grad_raw) {
  grad_raw = Tensor(raw.shape());
  auto g = grad_raw.matrix();
  const auto raw_m = raw.matrix();
  for (Eigen::Index i = 0; i < grad_unit.rows(); ++i) {
    const double true_norm = raw_m.row(i).norm();
    if (true_norm > kNormEpsilon) {
      const double proj = n.unit.row(i).dot(grad_unit.row(i));
      g.row(i) = (grad_unit.row(i) - proj * n.unit.row(i)) / n.norm[i];
    } else {
      g.row(i) = grad_unit.row(i) / kNormEpsilon;
    }
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw InputError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  if (a.empty()) throw InputError(std::string(what) + ": empty feature map");
}

void require_temperature(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) {
    throw ConfigError("temperature must be a positive finite number");
  }
}

/// Row-wise log-softmax of `logits` in place.
void log_softmax_rows(RowMatrix& logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    row.array() -= lse;
  }
}

/// Row-wise softmax: `logits` becomes log-probabilities, `prob` the probabilities.
void softmax_rows(RowMatrix& logits, RowMatrix& prob) {
  prob.resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double m = row.maxCoeff();
    prob.row(i) = (row.array() - m).exp();
    const double z = prob.row(i).sum();
    prob.row(i) /= z;
    row.array() -= m + std::log(z);
  }
}

/// Per-position KL values for one level and, optionally, the gradient of
/// `weight * sum_i KL_i` with respect to the raw student features.
std::vector<double> affinity_kl_level(const Tensor& teacher, const Tensor& student,
                                      double temperature, int chunk_rows, double weight,
                                      Tensor* grad_student) {
  require_same(teacher, student, "affinity KL");
  require_temperature(temperature);
  const Normalized t = normalize_rows(teacher);
  const Normalized s = normalize_rows(student);
  const Eigen::Index n = t.unit.rows();
  const Eigen::Index chunk = chunk_rows > 0 ? chunk_rows : n;
  const RowMatrix t_trans = t.unit.transpose();
  const double log_floor = std::log(kProbabilityFloor);
  const double t2 = temperature * temperature;

  std::vector<double> kl(static_cast<std::size_t>(n), 0.0);
  RowMatrix grad_unit;
  if (grad_student) grad_unit.setZero(n, s.unit.cols());

  for (Eigen::Index r0 = 0; r0 < n; r0 += chunk) {
    const Eigen::Index rows = std::min(chunk, n - r0);
    RowMatrix log_p = (t.unit.middleRows(r0, rows) * t_trans) / temperature;
    RowMatrix log_q = (s.unit.middleRows(r0, rows) * t_trans) / temperature;
    RowMatrix p, q;
    softmax_rows(log_p, p);
    softmax_rows(log_q, q);

    const RowMatrix kept = (log_q.array() >= log_floor).select(p, 0.0);
    const Eigen::VectorXd kept_mass = kept.rowwise().sum();
    const Eigen::VectorXd sums =
        (p.array() * (log_p.array() - log_q.array().max(log_floor))).rowwise().sum();
    // KL >= 0; clamp the rounding residue so identical inputs never go negative.
    for (Eigen::Index i = 0; i < rows; ++i) {
      kl[static_cast<std::size_t>(r0 + i)] = std::max(0.0, t2 * sums[i]);
    }

    RowMatrix g_cos;
    if (grad_student) {
      // d(T^2 KL)/d cos_ij = -T * (p_ij [j not floored] - q_ij * kept_mass_i)
      q.array().colwise() *= kept_mass.array();
      g_cos = (-weight * temperature) * (kept - q);
    }
    if (grad_student) grad_unit.middleRows(r0, rows).noalias() = g_cos * t.unit;
  }
  if (grad_student) backprop_normalize(s, grad_unit, student, *grad_student);
  return kl;
}

}  // namespace

// ---------------------------------------------------------------------------

ScoreMap cosine_score_map(const Tensor& teacher, const Tensor& student) {
  require_same(teacher, student, "cosine score map");
  const Normalized t = normalize_rows(teacher);
  const Normalized s = normalize_rows(student);
  ScoreMap map(teacher.h(), teacher.w(), ScoreKind::Cosine);
  const Eigen::VectorXd cos = (t.unit.array() * s.unit.array()).rowwise().sum();
  for (Eigen::Index i = 0; i < cos.size(); ++i) map.values[i] = 1.0 - cos[i];
  return map;
}

double local_loss(const FeaturePyramid& teacher, const FeaturePyramid& student,
                  std::array<Tensor, 3>* grad) {
  double loss = 0.0;
  for (int l = 0; l < 3; ++l) {
    const Tensor& ft = teacher.levels[l];
    const Tensor& fs = student.levels[l];
    require_same(ft, fs, "local loss");
    const Normalized t = normalize_rows(ft);
    const Normalized s = normalize_rows(fs);
    const double inv_n = 1.0 / ft.shape().positions();
    const Eigen::VectorXd cos = (t.unit.array() * s.unit.array()).rowwise().sum();
    loss += (1.0 - cos.array()).sum() * inv_n;
    if (grad) {
      const RowMatrix grad_unit = -inv_n * t.unit;
      backprop_normalize(s, grad_unit, fs, (*grad)[l]);
    }
  }
  return loss;
}

AffinityMatrix teacher_affinity(const Tensor& teacher, double temperature) {
  AffinityMatrix m = student_affinity(teacher, teacher, temperature);
  m.source = AffinitySource::Teacher;
  return m;
}

AffinityMatrix student_affinity(const Tensor& student, const Tensor& teacher, double temperature) {
  require_same(teacher, student, "affinity");
  require_temperature(temperature);
  const Normalized t = normalize_rows(teacher);
  const Normalized s = normalize_rows(student);
  AffinityMatrix m;
  m.rows = (s.unit * t.unit.transpose()) / temperature;
  log_softmax_rows(m.rows);
  m.rows = m.rows.array().exp();
  m.temperature = temperature;
  m.source = AffinitySource::Student;
  m.h = teacher.h();
  m.w = teacher.w();
  return m;
}

ScoreMap affinity_kl_map(const AffinityMatrix& p_teacher, const AffinityMatrix& p_student) {
  if (p_teacher.temperature != p_student.temperature) {
    throw ContractError("affinity KL: temperature mismatch between teacher and student matrices");
  }
  if (p_teacher.rows.rows() != p_student.rows.rows() ||
      p_teacher.rows.cols() != p_student.rows.cols() || p_teacher.h != p_student.h ||
      p_teacher.w != p_student.w) {
    throw ContractError("affinity KL: matrix size mismatch");
  }
  const double t2 = p_teacher.temperature * p_teacher.temperature;
  ScoreMap map(p_teacher.h, p_teacher.w, ScoreKind::AffinityKl);
  for (Eigen::Index i = 0; i < p_teacher.rows.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < p_teacher.rows.cols(); ++j) {
      const double p = p_teacher.rows(i, j);
      if (p <= 0.0) continue;
      const double q = std::max(p_student.rows(i, j), kProbabilityFloor);
      sum += p * (std::log(p) - std::log(q));
    }
    map.values[i] = std::max(0.0, t2 * sum);
  }
  return map;
}

ScoreMap global_score_map(const Tensor& teacher, const Tensor& student, double temperature,
                          int chunk_rows) {
  ScoreMap map(teacher.h(), teacher.w(), ScoreKind::AffinityKl);
  map.values = affinity_kl_level(teacher, student, temperature, chunk_rows, 1.0, nullptr);
  return map;
}

double global_loss(const FeaturePyramid& teacher, const FeaturePyramid& student,
                   double temperature, std::array<Tensor, 3>* grad, int chunk_rows) {
  double loss = 0.0;
  for (int l = 0; l < 3; ++l) {
    const double inv_n = 1.0 / teacher.levels[l].shape().positions();
    const auto kl = affinity_kl_level(teacher.levels[l], student.levels[l], temperature,
                                      chunk_rows, inv_n, grad ? &(*grad)[l] : nullptr);
    loss += std::accumulate(kl.begin(), kl.end(), 0.0) * inv_n;
  }
  return loss;
}

}  // namespace dskd
