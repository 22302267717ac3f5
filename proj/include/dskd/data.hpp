// SPDX-License-Identifier: Apache-2.0
//
// Datasets in the LOCO directory convention:
//
//   <root>/<category>/train/good/*.png
//   <root>/<category>/validation/good/*.png          (optional, may be empty)
//   <root>/<category>/test/{good,structural_anomalies,logical_anomalies}/*.png
//   <root>/<category>/ground_truth/<defect_dir>/<image_stem>/*.png   (one file per region)
//   <root>/<category>/defects_config.json
//
// defects_config.json is a list of
//   {"defect_name": str, "pixel_value": int (optional, default 255),
//    "saturation_threshold": number, "relative_saturation": bool}
// A region mask is matched to the entry whose pixel_value equals the mask's
// largest pixel value.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dskd/backbone.hpp"
#include "dskd/metrics.hpp"

namespace dskd {

struct NamedImage {
  std::string name;  // file stem
  ImageTensor image;
  friend bool operator==(const NamedImage&, const NamedImage&) = default;
};

struct TestSample {
  std::string name;
  ImageTensor image;
  ImageLabel label = ImageLabel::Good;
  std::vector<DefectRegion> regions;
  friend bool operator==(const TestSample&, const TestSample&) = default;
};

struct DatasetSplit {
  std::string category;
  int image_size = 0;
  std::vector<NamedImage> train;
  std::vector<NamedImage> validation;
  std::vector<TestSample> test;  // good, then structural, then logical; each sorted by name

  std::size_t count(ImageLabel label) const;
};

/// Loads `<root>/<category>`, resizing images (bilinear) and masks
/// (nearest) to `image_size` x `image_size`.
DatasetSplit load_loco_layout(const std::string& root, const std::string& category,
                              int image_size);

/// Writes `split` to `<root>/<split.category>` in the layout read above.
void write_loco_layout(const DatasetSplit& split, const std::string& root);

enum class LogicalKind { Missing, Duplicated, Swapped, WrongColor };
enum class StructuralKind { NoisePatch, Scratch };

struct ToySceneConfig {
  int grid = 3;
  int image_size = 64;
  int train_count = 200;
  int validation_count = 40;
  int test_count = 60;
  double structural_rate = 1.0 / 3.0;
  double logical_rate = 1.0 / 3.0;
  int jitter = 1;  // max |offset| of a shape centre in pixels
  std::uint64_t seed = 0;
  std::string category = "toy_grid";

  void validate() const;
  int cell_size() const { return image_size / grid; }
  double saturation_pixels() const { return 0.25 * cell_size() * cell_size(); }
};

/// Grid scenes: each cell holds a fixed shape in a fixed colour. Structural
/// anomalies corrupt texture locally; logical anomalies break the layout
/// while every local patch stays plausible. Fully determined by the config.
DatasetSplit synth_toy_dataset(const ToySceneConfig& config);

/// Renders one anomaly-free scene with explicit per-cell jitter offsets
/// (used by tests that need a specific layout). `offsets` has grid*grid
/// (dy, dx) pairs.
ImageTensor render_normal_scene(const ToySceneConfig& config,
                                const std::vector<std::pair<int, int>>& offsets);

/// Pixel rectangle [y0, y0+size) x [x0, x0+size) of grid cell `cell`.
struct CellRect {
  int y0, x0, size;
};
CellRect cell_rect(const ToySceneConfig& config, int cell);

}  // namespace dskd
