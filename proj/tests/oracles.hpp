// SPDX-License-Identifier: Apache-2.0
//
// Slow reference implementations shared by the unit tests and the
// acceptance binary. Written with plain loops over Tensor accessors and no
// Eigen, so they are independent of the library code paths they check.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dskd/backbone.hpp"
#include "dskd/tensor.hpp"

namespace oracle {

using dskd::FeaturePyramid;
using dskd::Shape;
using dskd::Tensor;

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline FeaturePyramid random_pyramid(const std::array<Shape, 3>& shapes, std::mt19937_64& rng) {
  FeaturePyramid p;
  for (int l = 0; l < 3; ++l) p.levels[l] = random_tensor(shapes[l], rng);
  return p;
}

inline double dot_at(const Tensor& a, int ia, const Tensor& b, int ib) {
  double s = 0.0;
  for (int c = 0; c < a.c(); ++c) s += a.values()[ia * a.c() + c] * b.values()[ib * b.c() + c];
  return s;
}

inline double norm_at(const Tensor& a, int i) {
  return std::max(std::sqrt(dot_at(a, i, a, i)), 1e-8);
}

inline double cosine(const Tensor& a, int ia, const Tensor& b, int ib) {
  return dot_at(a, ia, b, ib) / (norm_at(a, ia) * norm_at(b, ib));
}

/// 1 - cos per position.
inline std::vector<double> cosine_map(const Tensor& t, const Tensor& s) {
  std::vector<double> out;
  for (int i = 0; i < t.h() * t.w(); ++i) out.push_back(1.0 - cosine(t, i, s, i));
  return out;
}

/// Row i: softmax_j(cos(a_i, t_j) / T).
inline std::vector<std::vector<double>> affinity(const Tensor& a, const Tensor& t, double temp) {
  const int n = t.h() * t.w();
  std::vector<std::vector<double>> rows(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i) {
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      rows[i][j] = std::exp(cosine(a, i, t, j) / temp);
      z += rows[i][j];
    }
    for (int j = 0; j < n; ++j) rows[i][j] /= z;
  }
  return rows;
}

/// T^2 * KL(P_T,i || P_S,i) per position.
inline std::vector<double> kl_map(const Tensor& t, const Tensor& s, double temp) {
  const auto p = affinity(t, t, temp);
  const auto q = affinity(s, t, temp);
  std::vector<double> out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      sum += p[i][j] * (std::log(p[i][j]) - std::log(std::max(q[i][j], 1e-12)));
    }
    out.push_back(temp * temp * sum);
  }
  return out;
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double local_loss(const FeaturePyramid& t, const FeaturePyramid& s) {
  double loss = 0.0;
  for (int l = 0; l < 3; ++l) loss += mean(cosine_map(t.levels[l], s.levels[l]));
  return loss;
}

inline double global_loss(const FeaturePyramid& t, const FeaturePyramid& s, double temp) {
  double loss = 0.0;
  for (int l = 0; l < 3; ++l) loss += mean(kl_map(t.levels[l], s.levels[l], temp));
  return loss;
}

/// Central differences of `f` w.r.t. every entry of every student level.
inline std::array<Tensor, 3> numeric_gradient(const std::function<double(const FeaturePyramid&)>& f,
                                              FeaturePyramid s, double step = 1e-5) {
  std::array<Tensor, 3> g;
  for (int l = 0; l < 3; ++l) {
    g[l] = Tensor(s.levels[l].shape());
    for (std::size_t k = 0; k < s.levels[l].size(); ++k) {
      double& x = s.levels[l].values()[k];
      const double x0 = x;
      x = x0 + step;
      const double up = f(s);
      x = x0 - step;
      const double down = f(s);
      x = x0;
      g[l].values()[k] = (up - down) / (2.0 * step);
    }
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||) over all levels.
inline double relative_error(const std::array<Tensor, 3>& a, const std::array<Tensor, 3>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (int l = 0; l < 3; ++l) {
    for (std::size_t k = 0; k < a[l].size(); ++k) {
      const double x = a[l].values()[k], y = b[l].values()[k];
      diff += (x - y) * (x - y);
      na += x * x;
      nb += y * y;
    }
  }
  const double denom = std::max(std::sqrt(std::max(na, nb)), 1e-300);
  return std::sqrt(diff) / denom;
}

/// P(pos > neg) + P(pos == neg) / 2 by counting every pair.
inline double auroc_pairs(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::int64_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("dskd_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
