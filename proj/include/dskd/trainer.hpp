// SPDX-License-Identifier: Apache-2.0
//
// Training and evaluation of the two students on top of a frozen teacher.
#pragma once

#include <array>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dskd/backbone.hpp"
#include "dskd/bottleneck.hpp"
#include "dskd/data.hpp"
#include "dskd/decoders.hpp"
#include "dskd/metrics.hpp"
#include "dskd/scoring.hpp"

namespace dskd {

struct TrainConfig {
  double learning_rate = 0.005;
  std::array<double, 2> adam_betas{0.5, 0.999};
  int epochs = 200;
  int batch_size = 16;
  int image_size = 256;
  double temperature = 1.0;
  int gccb_channels = 1024;
  bool gccb = true;  // false = ablation without the condensing block
  double gaussian_sigma = 4.0;
  std::uint64_t seed = 0;
  TeacherKind teacher = TeacherKind::PretrainedWideResidual;
  std::string teacher_weights;
  std::vector<StudentRole> students{StudentRole::Local, StudentRole::Global};
  int affinity_chunk_size = 32;  // rows per block in the affinity loss, 0 = all
  bool simultaneous = false;    // interleave the two students batch by batch

  /// Small-scale preset: tiny teacher on 64 x 64 toy scenes.
  static TrainConfig toy();

  void validate() const;
  bool has(StudentRole role) const;

  /// Flat key/value view; keys are the field names above. `set` accepts
  /// the same keys (with '-' or '_') and throws ConfigError otherwise.
  std::vector<std::pair<std::string, std::string>> entries() const;
  void set(const std::string& key, const std::string& value);
  static const std::vector<std::string>& keys();

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// OCBE_loc followed by the local decoder.
struct LocalStudent {
  OcbeLocal ocbe;
  StudentDecoder decoder;

  LocalStudent() = default;
  explicit LocalStudent(const std::array<Shape, 4>& stage_shapes);
  void init(std::mt19937_64& rng);

  FeaturePyramid forward(const FeaturePyramid& teacher) const;
  /// Forward, loss, and backward for one image; parameter gradients are
  /// accumulated with weight `scale`. Returns the unscaled loss.
  double accumulate(const FeaturePyramid& teacher, double scale);

  nn::ParamList params();
  nn::ConstParamList params() const;
};

/// OCBE_glo (trainable stage 4 + GCCB) followed by the global decoder.
struct GlobalStudent {
  OcbeGlobal ocbe;
  StudentDecoder decoder;

  GlobalStudent() = default;
  GlobalStudent(const std::array<Shape, 4>& stage_shapes, std::optional<int> gccb_channels);
  void init(std::mt19937_64& rng);

  FeaturePyramid forward(const FeaturePyramid& teacher) const;
  double accumulate(const FeaturePyramid& teacher, double scale, double temperature,
                    int chunk_rows);

  nn::ParamList params();
  nn::ConstParamList params() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  std::optional<double> loss_local;
  std::optional<double> loss_global;
  double wall_seconds = 0.0;  // not persisted

  std::string to_json_line() const;
};

struct Checkpoint {
  TrainConfig config;
  TeacherNet teacher;
  std::optional<LocalStudent> local;
  std::optional<GlobalStudent> global;
  Normalizer normalizer;
  std::vector<EpochRecord> log;

  /// FNV-1a over epochs and loss bit patterns.
  std::string log_digest() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Builds the teacher for `config` (tiny teachers are drawn from config.seed).
TeacherNet make_teacher(const TrainConfig& config);

/// Trains the selected students on `data.train` and fits the normalizer on
/// `data.validation` (or `data.train` when validation is empty).
Checkpoint train(const DatasetSplit& data, const TrainConfig& config,
                 const EpochCallback& on_epoch = {});

/// Accumulated (summed over levels, upsampled to image size) raw maps.
struct StudentMaps {
  std::optional<ScoreMap> local;
  std::optional<ScoreMap> global;
};
StudentMaps score_image(const Checkpoint& ckpt, const ImageTensor& image);

struct FusedResult {
  std::string name;
  ImageLabel label = ImageLabel::Good;
  ImageTensor image;
  std::optional<ScoreMap> local;   // normalized
  std::optional<ScoreMap> global;  // normalized
  ScoreMap fused;                  // normalized, combined per mode, smoothed
  double score = 0.0;
};

struct EvalOptions {
  FusionMode mode = FusionMode::Combined;
  double fpr_limit = 0.05;
  int num_thresholds = 512;
};

struct Evaluation {
  MetricsReport report;
  std::vector<FusedResult> results;
};

/// Throws StateError when the mode needs a student the checkpoint lacks.
Evaluation evaluate(const Checkpoint& ckpt, const DatasetSplit& data, const EvalOptions& options);

}  // namespace dskd
