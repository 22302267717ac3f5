// SPDX-License-Identifier: Apache-2.0
#include "dskd/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include <nlohmann/json.hpp>

#include "dskd/error.hpp"
#include "dskd/image_io.hpp"

namespace fs = std::filesystem;

namespace dskd {

std::size_t DatasetSplit::count(ImageLabel label) const {
  return static_cast<std::size_t>(std::count_if(
      test.begin(), test.end(), [&](const TestSample& s) { return s.label == label; }));
}

namespace {

const char* label_dir(ImageLabel label) {
  switch (label) {
    case ImageLabel::Good: return "good";
    case ImageLabel::Structural: return "structural_anomalies";
    case ImageLabel::Logical: return "logical_anomalies";
  }
  return "good";
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

fs::path require_dir(const fs::path& p) {
  if (!fs::is_directory(p)) throw DataError("missing dataset directory: " + p.string());
  return p;
}

ImageTensor load_image(const fs::path& p, int size) {
  return resize_image(to_tensor(read_png(p.string())), size, size);
}

struct DefectSpec {
  std::string name;
  int pixel_value = 255;
  double saturation = 0.0;
  bool relative = false;
};

std::vector<DefectSpec> read_defects_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing defects config: " + path.string());
  std::vector<DefectSpec> specs;
  try {
    const auto j = nlohmann::json::parse(in);
    if (!j.is_array()) throw DataError("defects config must be a JSON list: " + path.string());
    for (const auto& e : j) {
      DefectSpec s;
      s.name = e.at("defect_name").get<std::string>();
      s.pixel_value = e.value("pixel_value", 255);
      s.saturation = e.at("saturation_threshold").get<double>();
      s.relative = e.at("relative_saturation").get<bool>();
      if (!(s.saturation > 0.0)) {
        throw DataError("defects config: non-positive saturation for '" + s.name + "'");
      }
      if (s.relative && s.saturation > 1.0) {
        throw DataError("defects config: relative saturation above 1 for '" + s.name + "'");
      }
      specs.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("unparseable defects config " + path.string() + ": " + e.what());
  }
  return specs;
}

Mask resize_mask_nearest(const Mask& m, int size) {
  if (m.h == size && m.w == size) return m;
  Mask out(size, size);
  for (int y = 0; y < size; ++y) {
    const int sy = std::min(static_cast<int>((y + 0.5) * m.h / size), m.h - 1);
    for (int x = 0; x < size; ++x) {
      const int sx = std::min(static_cast<int>((x + 0.5) * m.w / size), m.w - 1);
      out.at(y, x) = m.at(sy, sx);
    }
  }
  return out;
}

DefectRegion load_region(const fs::path& file, const std::vector<DefectSpec>& specs,
                         DefectType type, int size) {
  const Image8 img = read_png(file.string());
  Mask mask(img.h, img.w);
  int value = 0;
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const int v = img.at(y, x, 0);
      mask.at(y, x) = v != 0 ? 1 : 0;
      value = std::max(value, v);
    }
  }
  if (value == 0) throw DataError("empty ground-truth mask: " + file.string());
  const auto spec = std::find_if(specs.begin(), specs.end(),
                                 [&](const DefectSpec& s) { return s.pixel_value == value; });
  if (spec == specs.end()) {
    throw DataError("mask " + file.string() + " has pixel value " + std::to_string(value) +
                    " not listed in defects_config.json");
  }
  const double area = static_cast<double>(mask.area());
  double threshold = spec->relative ? spec->saturation * area : std::min(spec->saturation, area);

  DefectRegion region;
  region.mask = resize_mask_nearest(mask, size);
  region.defect_type = type;
  region.defect_name = spec->name;
  const double resized_area = static_cast<double>(region.mask.area());
  if (resized_area == 0.0) throw DataError("mask vanishes after resizing: " + file.string());
  if (resized_area != area) threshold = std::min(threshold * resized_area / area, resized_area);
  region.saturation_threshold = threshold;
  return region;
}

}  // namespace

DatasetSplit load_loco_layout(const std::string& root, const std::string& category,
                              int image_size) {
  if (image_size <= 0) throw ConfigError("image size must be positive");
  const fs::path base = fs::path(root) / category;
  require_dir(base);
  DatasetSplit split;
  split.category = category;
  split.image_size = image_size;

  for (const auto& f : list_pngs(require_dir(base / "train" / "good"))) {
    split.train.push_back({f.stem().string(), load_image(f, image_size)});
  }
  if (split.train.empty()) throw DataError("no training images in " + (base / "train/good").string());
  const fs::path val_dir = base / "validation" / "good";
  if (fs::is_directory(val_dir)) {
    for (const auto& f : list_pngs(val_dir)) {
      split.validation.push_back({f.stem().string(), load_image(f, image_size)});
    }
  }

  std::vector<DefectSpec> specs;
  bool specs_loaded = false;
  for (ImageLabel label : {ImageLabel::Good, ImageLabel::Structural, ImageLabel::Logical}) {
    const fs::path dir = require_dir(base / "test" / label_dir(label));
    for (const auto& f : list_pngs(dir)) {
      TestSample s{f.stem().string(), {}, label, {}};
      const Image8 raw = read_png(f.string());
      s.image = resize_image(to_tensor(raw), image_size, image_size);
      if (label != ImageLabel::Good) {
        if (!specs_loaded) {
          specs = read_defects_config(base / "defects_config.json");
          specs_loaded = true;
        }
        const fs::path gt = base / "ground_truth" / label_dir(label) / s.name;
        if (!fs::is_directory(gt)) {
          throw DataError("anomalous test image " + f.string() + " has no ground truth at " +
                          gt.string());
        }
        const DefectType type =
            label == ImageLabel::Structural ? DefectType::Structural : DefectType::Logical;
        for (const auto& mf : list_pngs(gt)) {
          const Image8 m = read_png(mf.string());
          if (m.h != raw.h || m.w != raw.w) {
            throw DataError("mask " + mf.string() + " does not match image size of " + f.string());
          }
          s.regions.push_back(load_region(mf, specs, type, image_size));
        }
        if (s.regions.empty()) {
          throw DataError("anomalous test image " + f.string() + " has no region masks");
        }
      }
      split.test.push_back(std::move(s));
    }
  }
  return split;
}

void write_loco_layout(const DatasetSplit& split, const std::string& root) {
  const fs::path base = fs::path(root) / split.category;
  std::error_code ec;
  for (const char* d : {"train/good", "validation/good", "test/good", "test/structural_anomalies",
                        "test/logical_anomalies", "ground_truth/structural_anomalies",
                        "ground_truth/logical_anomalies"}) {
    fs::create_directories(base / d, ec);
    if (ec) throw IoError("cannot create " + (base / d).string() + ": " + ec.message());
  }
  for (const auto& img : split.train) {
    write_png((base / "train/good" / (img.name + ".png")).string(), to_image8(img.image));
  }
  for (const auto& img : split.validation) {
    write_png((base / "validation/good" / (img.name + ".png")).string(), to_image8(img.image));
  }

  // One config entry per (defect name, absolute threshold) pair; a region
  // with threshold t and area a is representable by T iff t == min(T, a).
  std::vector<DefectSpec> specs;
  const auto spec_for = [&](const DefectRegion& r) -> const DefectSpec& {
    const double area = static_cast<double>(r.mask.area());
    for (const DefectSpec& s : specs) {
      if (s.name == r.defect_name && std::min(s.saturation, area) == r.saturation_threshold) {
        return s;
      }
    }
    if (specs.size() >= 255) throw IoError("too many distinct defect configurations");
    specs.push_back({r.defect_name, static_cast<int>(specs.size()) + 1, r.saturation_threshold, false});
    return specs.back();
  };
  // Regions saturating at their full area are matched last so they can
  // reuse an entry with a larger threshold.
  for (bool full_area : {false, true}) {
    for (const auto& s : split.test) {
      for (const auto& r : s.regions) {
        if ((r.saturation_threshold == static_cast<double>(r.mask.area())) == full_area) spec_for(r);
      }
    }
  }

  for (const auto& s : split.test) {
    write_png((base / "test" / label_dir(s.label) / (s.name + ".png")).string(), to_image8(s.image));
    if (s.regions.empty()) continue;
    const fs::path gt = base / "ground_truth" / label_dir(s.label) / s.name;
    fs::create_directories(gt, ec);
    if (ec) throw IoError("cannot create " + gt.string() + ": " + ec.message());
    for (std::size_t k = 0; k < s.regions.size(); ++k) {
      const DefectRegion& r = s.regions[k];
      const DefectSpec& spec = spec_for(r);
      Image8 m(r.mask.h, r.mask.w, 1);
      for (std::size_t i = 0; i < m.data.size(); ++i) {
        m.data[i] = r.mask.values[i] ? static_cast<std::uint8_t>(spec.pixel_value) : 0;
      }
      char name[16];
      std::snprintf(name, sizeof name, "%03zu.png", k);
      write_png((gt / name).string(), m);
    }
  }

  nlohmann::json cfg = nlohmann::json::array();
  for (const DefectSpec& s : specs) {
    cfg.push_back({{"defect_name", s.name},
                   {"pixel_value", s.pixel_value},
                   {"saturation_threshold", s.saturation},
                   {"relative_saturation", s.relative}});
  }
  std::ofstream out(base / "defects_config.json");
  out << cfg.dump(2) << "\n";
  if (!out) throw IoError("cannot write defects_config.json under " + base.string());
}

// ---------------------------------------------------------------------------
// Synthetic grid scenes

namespace {

using Rgb = std::array<std::uint8_t, 3>;

constexpr Rgb kBackground{40, 40, 40};
constexpr std::array<Rgb, 4> kPalette{{{220, 60, 60}, {60, 200, 80}, {70, 110, 230}, {230, 210, 60}}};
constexpr int kShapeCount = 9;
constexpr Rgb kScratch{245, 245, 245};

struct CellContent {
  int shape = 0;  // -1 = empty
  int color = 0;
  int dy = 0;
  int dx = 0;
};

bool shape_covers(int shape, int r, int dy, int dx) {
  const int ay = std::abs(dy), ax = std::abs(dx), d2 = dy * dy + dx * dx;
  switch (shape) {
    case 0: return d2 <= r * r;                                          // disk
    case 1: return ay <= r - 1 && ax <= r - 1;                           // square
    case 2: return dy >= -r && dy <= r && 2 * ax <= dy + r;              // triangle
    case 3: return ay + ax <= r;                                         // diamond
    case 4: return (ay <= 1 && ax <= r) || (ax <= 1 && ay <= r);         // plus
    case 5: return d2 <= r * r && d2 >= (r - 2) * (r - 2);               // ring
    case 6: return ay <= 2 && ax <= r;                                   // horizontal bar
    case 7: return ax <= 2 && ay <= r;                                   // vertical bar
    case 8: return std::abs(ay - ax) <= 1 && ay <= r;                    // x
    default: return false;
  }
}

int shape_radius(const ToySceneConfig& c) { return std::max(2, c.cell_size() / 4); }

std::vector<CellContent> canonical_layout(const ToySceneConfig& c) {
  std::vector<CellContent> cells(static_cast<std::size_t>(c.grid) * c.grid);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cells[i].shape = static_cast<int>(i % kShapeCount);
    cells[i].color = static_cast<int>(i % kPalette.size());
  }
  return cells;
}

Image8 render(const ToySceneConfig& c, const std::vector<CellContent>& cells) {
  Image8 img(c.image_size, c.image_size, 3);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int k = 0; k < 3; ++k) img.at(y, x, k) = kBackground[k];
    }
  }
  const int r = shape_radius(c);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const CellContent& cell = cells[i];
    if (cell.shape < 0) continue;
    const CellRect rect = cell_rect(c, static_cast<int>(i));
    const int cy = rect.y0 + rect.size / 2 + cell.dy;
    const int cx = rect.x0 + rect.size / 2 + cell.dx;
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        const int y = cy + dy, x = cx + dx;
        if (y < 0 || x < 0 || y >= img.h || x >= img.w) continue;
        if (!shape_covers(cell.shape, r, dy, dx)) continue;
        for (int k = 0; k < 3; ++k) img.at(y, x, k) = kPalette[cell.color][k];
      }
    }
  }
  return img;
}

Mask cell_mask(const ToySceneConfig& c, int cell) {
  Mask m(c.image_size, c.image_size);
  const CellRect rect = cell_rect(c, cell);
  for (int y = rect.y0; y < rect.y0 + rect.size; ++y) {
    for (int x = rect.x0; x < rect.x0 + rect.size; ++x) m.at(y, x) = 1;
  }
  return m;
}

class SceneSampler {
 public:
  SceneSampler(const ToySceneConfig& c) : c_(c), rng_(c.seed) {}

  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  std::vector<CellContent> jittered_layout() {
    auto cells = canonical_layout(c_);
    for (auto& cell : cells) {
      cell.dy = uniform(-c_.jitter, c_.jitter);
      cell.dx = uniform(-c_.jitter, c_.jitter);
    }
    return cells;
  }

  int random_cell() { return uniform(0, c_.grid * c_.grid - 1); }

  DefectRegion region(Mask mask, DefectType type, const std::string& name) {
    DefectRegion r;
    r.saturation_threshold = std::min(static_cast<double>(mask.area()), c_.saturation_pixels());
    r.mask = std::move(mask);
    r.defect_type = type;
    r.defect_name = name;
    return r;
  }

  TestSample structural(StructuralKind kind, const std::string& name) {
    Image8 img = render(c_, jittered_layout());
    Mask mask(c_.image_size, c_.image_size);
    const CellRect rect = cell_rect(c_, random_cell());
    const int cy = rect.y0 + rect.size / 2 + uniform(-3, 3);
    const int cx = rect.x0 + rect.size / 2 + uniform(-3, 3);
    std::string defect;
    if (kind == StructuralKind::NoisePatch) {
      defect = "noise_patch";
      const int side = uniform(5, 8);
      const int y0 = std::clamp(cy - side / 2, 0, c_.image_size - side);
      const int x0 = std::clamp(cx - side / 2, 0, c_.image_size - side);
      for (int y = y0; y < y0 + side; ++y) {
        for (int x = x0; x < x0 + side; ++x) {
          for (int k = 0; k < 3; ++k) img.at(y, x, k) = static_cast<std::uint8_t>(uniform(0, 255));
          mask.at(y, x) = 1;
        }
      }
    } else {
      defect = "scratch";
      const double angle = uniform(0, 179) * 3.14159265358979323846 / 180.0;
      const int length = uniform(10, 16);
      const double sy = std::sin(angle), sx = std::cos(angle);
      for (int t = -length * 2; t <= length * 2; ++t) {
        const int y = static_cast<int>(std::lround(cy + 0.25 * t * sy));
        const int x = static_cast<int>(std::lround(cx + 0.25 * t * sx));
        if (y < 0 || x < 0 || y >= c_.image_size || x >= c_.image_size) continue;
        for (int k = 0; k < 3; ++k) img.at(y, x, k) = kScratch[k];
        mask.at(y, x) = 1;
      }
    }
    TestSample s{name, to_tensor(img), ImageLabel::Structural, {}};
    s.regions.push_back(region(std::move(mask), DefectType::Structural, defect));
    return s;
  }

  TestSample logical(LogicalKind kind, const std::string& name) {
    auto cells = jittered_layout();
    const int n = c_.grid * c_.grid;
    std::vector<int> affected;
    std::string defect;
    const int a = random_cell();
    int b = uniform(0, n - 2);
    if (b >= a) ++b;
    switch (kind) {
      case LogicalKind::Missing:
        defect = "missing";
        cells[a].shape = -1;
        affected = {a};
        break;
      case LogicalKind::Duplicated:
        defect = "duplicated";
        cells[a].shape = cells[b].shape;
        cells[a].color = cells[b].color;
        affected = {a};
        break;
      case LogicalKind::Swapped:
        defect = "swapped";
        std::swap(cells[a].shape, cells[b].shape);
        std::swap(cells[a].color, cells[b].color);
        affected = {std::min(a, b), std::max(a, b)};
        break;
      case LogicalKind::WrongColor: {
        defect = "wrong_color";
        const int palette = static_cast<int>(kPalette.size());
        cells[a].color = (cells[a].color + uniform(1, palette - 1)) % palette;
        affected = {a};
        break;
      }
    }
    TestSample s{name, to_tensor(render(c_, cells)), ImageLabel::Logical, {}};
    for (int cell : affected) {
      s.regions.push_back(region(cell_mask(c_, cell), DefectType::Logical, defect));
    }
    return s;
  }

  ImageTensor normal() { return to_tensor(render(c_, jittered_layout())); }

 private:
  const ToySceneConfig& c_;
  std::mt19937_64 rng_;
};

std::string numbered(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return buf;
}

}  // namespace

void ToySceneConfig::validate() const {
  if (grid < 2) throw ConfigError("toy scenes need a grid of at least 2x2");
  if (image_size < grid * 8) throw ConfigError("toy image size too small for the grid");
  if (train_count < 1 || validation_count < 0 || test_count < 0) {
    throw ConfigError("toy split sizes must be non-negative (train >= 1)");
  }
  for (double r : {structural_rate, logical_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("anomaly rates must lie in [0, 1]");
  }
  if (structural_rate + logical_rate > 1.0 + 1e-12) {
    throw ConfigError("structural + logical anomaly rates exceed 1");
  }
  if (jitter < 0 || 2 * (shape_radius(*this) + jitter) >= cell_size()) {
    throw ConfigError("jitter too large for the cell size");
  }
}

CellRect cell_rect(const ToySceneConfig& c, int cell) {
  const int size = c.cell_size();
  const int margin = (c.image_size - size * c.grid) / 2;
  return {margin + (cell / c.grid) * size, margin + (cell % c.grid) * size, size};
}

ImageTensor render_normal_scene(const ToySceneConfig& config,
                                const std::vector<std::pair<int, int>>& offsets) {
  auto cells = canonical_layout(config);
  if (offsets.size() != cells.size()) throw InputError("render_normal_scene: one offset per cell");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cells[i].dy = offsets[i].first;
    cells[i].dx = offsets[i].second;
  }
  return to_tensor(render(config, cells));
}

DatasetSplit synth_toy_dataset(const ToySceneConfig& config) {
  config.validate();
  SceneSampler sampler(config);
  DatasetSplit split;
  split.category = config.category;
  split.image_size = config.image_size;
  for (int i = 0; i < config.train_count; ++i) split.train.push_back({numbered(i), sampler.normal()});
  for (int i = 0; i < config.validation_count; ++i) {
    split.validation.push_back({numbered(i), sampler.normal()});
  }
  const int n_struct = static_cast<int>(std::lround(config.test_count * config.structural_rate));
  const int n_logical = static_cast<int>(std::lround(config.test_count * config.logical_rate));
  const int n_good = std::max(0, config.test_count - n_struct - n_logical);
  for (int i = 0; i < n_good; ++i) {
    split.test.push_back({numbered(i), sampler.normal(), ImageLabel::Good, {}});
  }
  for (int i = 0; i < n_struct; ++i) {
    split.test.push_back(sampler.structural(static_cast<StructuralKind>(i % 2), numbered(i)));
  }
  for (int i = 0; i < n_logical; ++i) {
    split.test.push_back(sampler.logical(static_cast<LogicalKind>(i % 4), numbered(i)));
  }
  return split;
}

}  // namespace dskd
