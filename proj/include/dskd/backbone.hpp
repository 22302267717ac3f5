// SPDX-License-Identifier: Apache-2.0
//
// Frozen teacher feature extractor. Two kinds are supported: a wide
// bottleneck residual network loaded from a converted weights file, and a
// seeded random "tiny" network that needs no files and keeps every level
// small enough for dense affinity matrices.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dskd/nn.hpp"
#include "dskd/tensor.hpp"

namespace dskd {

enum class TeacherKind { PretrainedWideResidual, TinySeeded };

std::string to_string(TeacherKind kind);
TeacherKind parse_teacher_kind(const std::string& s);

/// An RGB image, h x w x 3 with values in [0, 1].
using ImageTensor = Tensor;

struct InputNormalization {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.5, 0.5, 0.5};

  static InputNormalization for_kind(TeacherKind kind);
  friend bool operator==(const InputNormalization&, const InputNormalization&) = default;
};

struct TeacherConfig {
  TeacherKind kind = TeacherKind::TinySeeded;
  int input_size = 64;
  std::string weights_path;  // pretrained only
  InputNormalization normalization = InputNormalization::for_kind(TeacherKind::TinySeeded);
};

/// Bottleneck network topology stored in the weights file header.
struct WideResidualArch {
  std::array<int, 4> blocks{3, 4, 6, 3};
  int stem_channels = 64;
  int base_width = 128;  // inner width of stage 1 (2x the plain ResNet-50 width)
  int base_out = 256;    // output channels of stage 1
  friend bool operator==(const WideResidualArch&, const WideResidualArch&) = default;
};

/// Stage output shapes of the tiny teacher at a given input resolution.
std::array<Shape, 4> tiny_stage_shapes(int input_size);
/// Stage output shapes of a wide residual network (stem stride 4, then
/// stages at strides 4/8/16/32).
std::array<Shape, 4> wide_residual_stage_shapes(int input_size, const WideResidualArch& arch = {});

struct FeaturePyramid {
  std::array<Tensor, 3> levels;  // l = 1, 2, 3
  std::optional<Tensor> stage4;

  const Tensor& level(int l) const { return levels.at(l - 1); }
  Tensor& level(int l) { return levels.at(l - 1); }
  friend bool operator==(const FeaturePyramid&, const FeaturePyramid&) = default;
};

class TeacherNet {
 public:
  TeacherKind kind() const { return kind_; }
  std::uint64_t seed() const { return seed_; }
  bool frozen() const { return true; }
  int input_size() const { return input_size_; }
  const std::array<Shape, 4>& stage_shapes() const { return stage_shapes_; }
  const InputNormalization& normalization() const { return normalization_; }

  /// Hash over every parameter value; identical iff parameters are bitwise equal.
  std::string fingerprint() const;
  /// Hash of the weights file the network was loaded from (pretrained only).
  const std::string& weights_hash() const { return weights_hash_; }
  std::size_t parameter_count() const;

  /// Levels 1..3, plus the stage-4 output when `with_stage4` is set.
  FeaturePyramid extract(const ImageTensor& image, bool with_stage4 = false) const;

 private:
  friend TeacherNet build_teacher(const TeacherConfig& config, std::uint64_t seed);

  struct Bottleneck {
    nn::Conv2d reduce, spatial, expand;
    std::optional<nn::Conv2d> shortcut;
    Tensor forward(const Tensor& x) const;
  };

  Tensor normalize_input(const ImageTensor& image) const;
  Tensor run_stage(int stage, const Tensor& x) const;
  nn::ConstParamList params() const;

  TeacherKind kind_ = TeacherKind::TinySeeded;
  std::uint64_t seed_ = 0;
  int input_size_ = 0;
  InputNormalization normalization_;
  std::array<Shape, 4> stage_shapes_{};
  std::string weights_hash_;

  // tiny: two 3x3 convolutions per stage (first one stride 2)
  std::vector<std::array<nn::Conv2d, 2>> tiny_stages_;
  // wide: stem + four bottleneck stages
  nn::Conv2d stem_;
  std::vector<std::vector<Bottleneck>> wide_stages_;
};

/// Builds a frozen teacher. Tiny teachers draw weights from `seed`;
/// pretrained teachers read `config.weights_path` and ignore the seed.
TeacherNet build_teacher(const TeacherConfig& config, std::uint64_t seed);

/// Convenience wrapper around TeacherNet::extract with input validation.
FeaturePyramid extract_features(const TeacherNet& teacher, const ImageTensor& image,
                                bool with_stage4 = false);

/// Writes a weights file in the format read by build_teacher. Parameters
/// are stored as float32 in the order produced by the architecture;
/// batch-norm must already be folded into convolution weights and biases.
/// Used by tests and by the conversion tool.
void write_wide_residual_weights(const std::string& path, const WideResidualArch& arch,
                                 std::uint64_t seed);

}  // namespace dskd
