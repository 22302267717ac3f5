// SPDX-License-Identifier: Apache-2.0
#include "dskd/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dskd/error.hpp"
#include "dskd/hash.hpp"
#include "dskd/losses.hpp"

namespace dskd {

// ---------------------------------------------------------------------------
// TrainConfig

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.epochs = 20;
  c.image_size = 64;
  c.gccb_channels = 64;
  c.gaussian_sigma = 1.0;  // 4 px at 256, scaled to 64
  c.teacher = TeacherKind::TinySeeded;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be positive");
  }
  for (double b : adam_betas) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("adam_betas must lie in (0, 1)");
  }
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (image_size <= 0) throw ConfigError("image_size must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be positive");
  }
  if (gccb_channels <= 0) throw ConfigError("gccb_channels must be positive");
  if (!(gaussian_sigma >= 0.0)) throw ConfigError("gaussian_sigma must be non-negative");
  if (affinity_chunk_size < 0) throw ConfigError("affinity_chunk_size must be non-negative");
  if (students.empty()) throw ConfigError("at least one student must be selected");
  if (teacher == TeacherKind::PretrainedWideResidual && teacher_weights.empty()) {
    throw ConfigError("the pretrained teacher needs teacher_weights");
  }
}

bool TrainConfig::has(StudentRole role) const {
  return std::find(students.begin(), students.end(), role) != students.end();
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

StudentRole parse_role(const std::string& s) {
  if (s == "local") return StudentRole::Local;
  if (s == "global") return StudentRole::Global;
  throw ConfigError("unknown student '" + s + "' (expected local or global)");
}

}  // namespace

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k{
      "learning_rate", "adam_betas",      "epochs",       "batch_size",
      "image_size",    "temperature",     "gccb_channels", "gccb",
      "gaussian_sigma", "seed",           "teacher",      "teacher_weights",
      "students",      "affinity_chunk_size", "simultaneous"};
  return k;
}

std::vector<std::pair<std::string, std::string>> TrainConfig::entries() const {
  std::string roles;
  for (StudentRole r : students) roles += (roles.empty() ? "" : ",") + to_string(r);
  return {{"learning_rate", format_double(learning_rate)},
          {"adam_betas", format_double(adam_betas[0]) + "," + format_double(adam_betas[1])},
          {"epochs", std::to_string(epochs)},
          {"batch_size", std::to_string(batch_size)},
          {"image_size", std::to_string(image_size)},
          {"temperature", format_double(temperature)},
          {"gccb_channels", std::to_string(gccb_channels)},
          {"gccb", gccb ? "true" : "false"},
          {"gaussian_sigma", format_double(gaussian_sigma)},
          {"seed", std::to_string(seed)},
          {"teacher", to_string(teacher)},
          {"teacher_weights", teacher_weights},
          {"students", roles},
          {"affinity_chunk_size", std::to_string(affinity_chunk_size)},
          {"simultaneous", simultaneous ? "true" : "false"}};
}

void TrainConfig::set(const std::string& raw_key, const std::string& v) {
  std::string key = raw_key;
  std::replace(key.begin(), key.end(), '-', '_');
  const auto to_int = [&](long long x) {
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
      throw ConfigError("'" + key + "' out of range");
    }
    return static_cast<int>(x);
  };
  if (key == "learning_rate") {
    learning_rate = parse_double(key, v);
  } else if (key == "adam_betas") {
    const auto parts = split_list(v);
    if (parts.size() != 2) throw ConfigError("adam_betas expects two comma-separated numbers");
    adam_betas = {parse_double(key, parts[0]), parse_double(key, parts[1])};
  } else if (key == "epochs") {
    epochs = to_int(parse_int(key, v));
  } else if (key == "batch_size") {
    batch_size = to_int(parse_int(key, v));
  } else if (key == "image_size") {
    image_size = to_int(parse_int(key, v));
  } else if (key == "temperature") {
    temperature = parse_double(key, v);
  } else if (key == "gccb_channels") {
    gccb_channels = to_int(parse_int(key, v));
  } else if (key == "gccb") {
    gccb = parse_bool(key, v);
  } else if (key == "gaussian_sigma") {
    gaussian_sigma = parse_double(key, v);
  } else if (key == "seed") {
    const long long s = parse_int(key, v);
    if (s < 0) throw ConfigError("seed must be non-negative");
    seed = static_cast<std::uint64_t>(s);
  } else if (key == "teacher") {
    teacher = parse_teacher_kind(v);
  } else if (key == "teacher_weights") {
    teacher_weights = v;
  } else if (key == "students") {
    students.clear();
    for (const auto& s : split_list(v)) {
      const StudentRole r = parse_role(s);
      if (!has(r)) students.push_back(r);
    }
  } else if (key == "affinity_chunk_size") {
    affinity_chunk_size = to_int(parse_int(key, v));
  } else if (key == "simultaneous") {
    simultaneous = parse_bool(key, v);
  } else {
    throw ConfigError("unknown config key '" + raw_key + "'");
  }
}

// ---------------------------------------------------------------------------
// Students

namespace {

void scale_all(std::array<Tensor, 3>& grads, double s) {
  for (Tensor& g : grads) {
    for (double& v : g.values()) v *= s;
  }
}

}  // namespace

LocalStudent::LocalStudent(const std::array<Shape, 4>& stage_shapes)
    : ocbe(stage_shapes), decoder(StudentRole::Local, stage_shapes) {}

void LocalStudent::init(std::mt19937_64& rng) {
  ocbe.init(rng);
  decoder.init(rng);
}

FeaturePyramid LocalStudent::forward(const FeaturePyramid& teacher) const {
  return decoder.forward(ocbe.forward(teacher));
}

double LocalStudent::accumulate(const FeaturePyramid& teacher, double scale) {
  OcbeLocal::Cache oc;
  StudentDecoder::Cache dc;
  const FeaturePyramid student = decoder.forward(ocbe.forward(teacher, &oc), &dc);
  std::array<Tensor, 3> grads;
  const double loss = local_loss(teacher, student, &grads);
  scale_all(grads, scale);
  ocbe.backward(decoder.backward(grads, dc), oc);
  return loss;
}

nn::ParamList LocalStudent::params() {
  nn::ParamList out;
  ocbe.collect(out);
  decoder.collect(out);
  return out;
}

nn::ConstParamList LocalStudent::params() const {
  nn::ConstParamList out;
  ocbe.collect(out);
  decoder.collect(out);
  return out;
}

GlobalStudent::GlobalStudent(const std::array<Shape, 4>& stage_shapes,
                             std::optional<int> gccb_channels)
    : ocbe(stage_shapes, gccb_channels), decoder(StudentRole::Global, stage_shapes) {}

void GlobalStudent::init(std::mt19937_64& rng) {
  ocbe.init(rng);
  decoder.init(rng);
}

FeaturePyramid GlobalStudent::forward(const FeaturePyramid& teacher) const {
  return decoder.forward(ocbe.forward(teacher.level(3)));
}

double GlobalStudent::accumulate(const FeaturePyramid& teacher, double scale, double temperature,
                                 int chunk_rows) {
  OcbeGlobal::Cache oc;
  StudentDecoder::Cache dc;
  const FeaturePyramid student = decoder.forward(ocbe.forward(teacher.level(3), &oc), &dc);
  std::array<Tensor, 3> grads;
  const double loss = global_loss(teacher, student, temperature, &grads, chunk_rows);
  scale_all(grads, scale);
  ocbe.backward(decoder.backward(grads, dc), oc);
  return loss;
}

nn::ParamList GlobalStudent::params() {
  nn::ParamList out;
  ocbe.collect(out);
  decoder.collect(out);
  return out;
}

nn::ConstParamList GlobalStudent::params() const {
  nn::ConstParamList out;
  ocbe.collect(out);
  decoder.collect(out);
  return out;
}

// ---------------------------------------------------------------------------
// Logs

std::string EpochRecord::to_json_line() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["loss_local"] = loss_local ? nlohmann::json(*loss_local) : nlohmann::json(nullptr);
  j["loss_global"] = loss_global ? nlohmann::json(*loss_global) : nlohmann::json(nullptr);
  j["wall_seconds"] = wall_seconds;
  return j.dump();
}

std::string Checkpoint::log_digest() const {
  Fnv1a h;
  for (const EpochRecord& r : log) {
    const std::int64_t e = r.epoch;
    h.update(&e, sizeof e);
    for (const auto& loss : {r.loss_local, r.loss_global}) {
      const std::uint64_t bits = loss ? std::bit_cast<std::uint64_t>(*loss) : ~0ULL;
      h.update(&bits, sizeof bits);
    }
  }
  return h.hex();
}

// ---------------------------------------------------------------------------
// Training

namespace {

constexpr std::uint64_t kLocalStream = 0x6c6f63616c000001ULL;
constexpr std::uint64_t kGlobalStream = 0x676c6f62616c0002ULL;
constexpr std::size_t kFeatureCacheBytes = std::size_t{1} << 30;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  return std::mt19937_64(seq);
}

/// Teacher features for the training images, cached when they fit.
class FeatureSource {
 public:
  FeatureSource(const TeacherNet& teacher, const std::vector<NamedImage>& images)
      : teacher_(teacher), images_(images) {
    std::size_t per_image = 0;
    for (int l = 0; l < 3; ++l) per_image += teacher.stage_shapes()[l].size() * sizeof(double);
    if (per_image * images.size() <= kFeatureCacheBytes) {
      cache_.reserve(images.size());
      for (const auto& img : images) cache_.push_back(extract_features(teacher, img.image));
    }
  }

  std::size_t size() const { return images_.size(); }

  FeaturePyramid get(std::size_t i) const {
    if (!cache_.empty()) return cache_[i];
    return extract_features(teacher_, images_[i].image);
  }

  const FeaturePyramid* cached(std::size_t i) const {
    return cache_.empty() ? nullptr : &cache_[i];
  }

 private:
  const TeacherNet& teacher_;
  const std::vector<NamedImage>& images_;
  std::vector<FeaturePyramid> cache_;
};

/// One student's optimizer state and batch order.
template <class Student, class Step>
class StudentRun {
 public:
  StudentRun(Student& student, const TrainConfig& c, std::uint64_t tag, Step step)
      : student_(student),
        params_(student.params()),
        adam_(params_, c.learning_rate, c.adam_betas[0], c.adam_betas[1]),
        rng_(stream(c.seed, tag ^ 0xa5a5a5a5ULL)),
        step_(std::move(step)),
        batch_(c.batch_size) {}

  std::vector<std::size_t> shuffled(std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);
    return order;
  }

  /// Returns the mean per-image loss of the batch.
  double run_batch(const FeatureSource& features, std::span<const std::size_t> idx, int epoch,
                   int batch_index, const char* role) {
    nn::zero_grad(params_);
    const double scale = 1.0 / static_cast<double>(idx.size());
    double sum = 0.0;
    for (std::size_t i : idx) {
      const FeaturePyramid* cached = features.cached(i);
      sum += cached ? step_(student_, *cached, scale) : step_(student_, features.get(i), scale);
    }
    const double loss = sum * scale;
    if (!std::isfinite(loss)) {
      throw DivergenceError(std::string("non-finite ") + role + " loss at epoch " +
                            std::to_string(epoch) + ", batch " + std::to_string(batch_index));
    }
    adam_.step();
    return loss;
  }

  int batch_size() const { return batch_; }

 private:
  Student& student_;
  nn::ParamList params_;
  nn::Adam adam_;
  std::mt19937_64 rng_;
  Step step_;
  int batch_;
};

template <class Run>
double run_epoch(Run& run, const FeatureSource& features, int epoch, const char* role) {
  const auto order = run.shuffled(features.size());
  const std::size_t b = static_cast<std::size_t>(run.batch_size());
  double total = 0.0;
  int batch_index = 0;
  for (std::size_t start = 0; start < order.size(); start += b, ++batch_index) {
    const std::size_t end = std::min(order.size(), start + b);
    const std::span<const std::size_t> idx(order.data() + start, end - start);
    total += run.run_batch(features, idx, epoch, batch_index, role) * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(order.size());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<ScoreMap> level_maps_local(const FeaturePyramid& t, const FeaturePyramid& s) {
  std::vector<ScoreMap> maps;
  for (int l = 1; l <= 3; ++l) maps.push_back(cosine_score_map(t.level(l), s.level(l)));
  return maps;
}

std::vector<ScoreMap> level_maps_global(const FeaturePyramid& t, const FeaturePyramid& s,
                                        double temperature, int chunk) {
  std::vector<ScoreMap> maps;
  for (int l = 1; l <= 3; ++l) {
    maps.push_back(global_score_map(t.level(l), s.level(l), temperature, chunk));
  }
  return maps;
}

StudentMaps score_pyramid(const Checkpoint& ckpt, const FeaturePyramid& t, int h, int w) {
  StudentMaps out;
  if (ckpt.local) {
    const auto maps = level_maps_local(t, ckpt.local->forward(t));
    out.local = accumulate_maps(maps, h, w);
  }
  if (ckpt.global) {
    const auto maps = level_maps_global(t, ckpt.global->forward(t), ckpt.config.temperature,
                                        ckpt.config.affinity_chunk_size);
    out.global = accumulate_maps(maps, h, w);
  }
  return out;
}

void require_image_size(const DatasetSplit& data, int size) {
  const auto check = [&](const ImageTensor& img, const std::string& name) {
    if (img.h() != size || img.w() != size || img.c() != 3) {
      throw InputError("image '" + name + "' is " + to_string(img.shape()) + ", expected " +
                       std::to_string(size) + "x" + std::to_string(size) + "x3");
    }
  };
  for (const auto& i : data.train) check(i.image, i.name);
  for (const auto& i : data.validation) check(i.image, i.name);
  for (const auto& s : data.test) check(s.image, s.name);
}

}  // namespace

TeacherNet make_teacher(const TrainConfig& config) {
  TeacherConfig tc;
  tc.kind = config.teacher;
  tc.input_size = config.image_size;
  tc.weights_path = config.teacher_weights;
  tc.normalization = InputNormalization::for_kind(config.teacher);
  return build_teacher(tc, config.seed);
}

Checkpoint train(const DatasetSplit& data, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (data.train.empty()) throw InputError("training split is empty");
  require_image_size(data, config.image_size);

  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.teacher = make_teacher(config);
  const auto& shapes = ckpt.teacher.stage_shapes();

  if (config.has(StudentRole::Local)) {
    ckpt.local.emplace(shapes);
    auto rng = stream(config.seed, kLocalStream);
    ckpt.local->init(rng);
  }
  if (config.has(StudentRole::Global)) {
    ckpt.global.emplace(shapes, config.gccb ? std::optional<int>(config.gccb_channels) : std::nullopt);
    auto rng = stream(config.seed, kGlobalStream);
    ckpt.global->init(rng);
  }

  const FeatureSource features(ckpt.teacher, data.train);
  const double temperature = config.temperature;
  const int chunk = config.affinity_chunk_size;
  auto local_step = [](LocalStudent& s, const FeaturePyramid& t, double scale) {
    return s.accumulate(t, scale);
  };
  auto global_step = [temperature, chunk](GlobalStudent& s, const FeaturePyramid& t, double scale) {
    return s.accumulate(t, scale, temperature, chunk);
  };
  using LocalRun = StudentRun<LocalStudent, decltype(local_step)>;
  using GlobalRun = StudentRun<GlobalStudent, decltype(global_step)>;
  std::optional<LocalRun> local_run;
  std::optional<GlobalRun> global_run;
  if (ckpt.local) local_run.emplace(*ckpt.local, config, kLocalStream, local_step);
  if (ckpt.global) global_run.emplace(*ckpt.global, config, kGlobalStream, global_step);

  const auto emit = [&](EpochRecord r) {
    if (on_epoch) on_epoch(r);
    r.wall_seconds = 0.0;
    ckpt.log.push_back(r);
  };

  if (config.simultaneous) {
    for (int e = 1; e <= config.epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      EpochRecord r{e, {}, {}, 0.0};
      if (local_run) r.loss_local = run_epoch(*local_run, features, e, "local");
      if (global_run) r.loss_global = run_epoch(*global_run, features, e, "global");
      r.wall_seconds = seconds_since(t0);
      emit(r);
    }
  } else {
    for (StudentRole role : {StudentRole::Local, StudentRole::Global}) {
      if (!config.has(role)) continue;
      for (int e = 1; e <= config.epochs; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord r{e, {}, {}, 0.0};
        if (role == StudentRole::Local) {
          r.loss_local = run_epoch(*local_run, features, e, "local");
        } else {
          r.loss_global = run_epoch(*global_run, features, e, "global");
        }
        r.wall_seconds = seconds_since(t0);
        emit(r);
      }
    }
  }

  const auto& fit_images = data.validation.empty() ? data.train : data.validation;
  std::vector<ScoreMap> maps_loc, maps_glo;
  for (std::size_t i = 0; i < fit_images.size(); ++i) {
    const FeaturePyramid t = data.validation.empty() ? features.get(i)
                                                     : extract_features(ckpt.teacher, fit_images[i].image);
    StudentMaps m = score_pyramid(ckpt, t, config.image_size, config.image_size);
    if (m.local) maps_loc.push_back(std::move(*m.local));
    if (m.global) maps_glo.push_back(std::move(*m.global));
  }
  ckpt.normalizer = fit_normalizer(maps_loc, maps_glo);
  if (data.validation.empty()) {
    ckpt.normalizer.warnings.push_back("validation split empty; normalizer fitted on train");
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Evaluation

StudentMaps score_image(const Checkpoint& ckpt, const ImageTensor& image) {
  return score_pyramid(ckpt, extract_features(ckpt.teacher, image), image.h(), image.w());
}

Evaluation evaluate(const Checkpoint& ckpt, const DatasetSplit& data, const EvalOptions& options) {
  const bool need_loc = options.mode != FusionMode::Global;
  const bool need_glo = options.mode != FusionMode::Local;
  if (need_loc && !ckpt.local) {
    throw StateError("mode '" + to_string(options.mode) + "' needs the local student, which was not trained");
  }
  if (need_glo && !ckpt.global) {
    throw StateError("mode '" + to_string(options.mode) + "' needs the global student, which was not trained");
  }
  if (!ckpt.normalizer.fitted) throw StateError("checkpoint normalizer is not fitted");
  require_image_size(data, ckpt.config.image_size);

  const Normalizer& norm = ckpt.normalizer;
  Evaluation ev;
  std::vector<EvalRecord> records;
  for (const TestSample& s : data.test) {
    const StudentMaps raw = score_image(ckpt, s.image);
    FusedResult r;
    r.name = s.name;
    r.label = s.label;
    r.image = s.image;
    if (raw.local) r.local = normalize_single(*raw.local, norm.mu_loc, norm.sigma_loc, norm);
    if (raw.global) r.global = normalize_single(*raw.global, norm.mu_glo, norm.sigma_glo, norm);
    ScoreMap fused;
    switch (options.mode) {
      case FusionMode::Local: fused = *r.local; break;
      case FusionMode::Global: fused = *r.global; break;
      case FusionMode::Combined: fused = combine(*raw.local, *raw.global, norm); break;
    }
    r.fused = gaussian_filter(fused, ckpt.config.gaussian_sigma);
    r.fused.kind = ScoreKind::Fused;
    r.score = r.fused.max();
    records.push_back({r.score, s.label, r.fused, s.regions});
    ev.results.push_back(std::move(r));
  }
  ev.report = build_report(records, data.category, to_string(options.mode), options.fpr_limit,
                           options.num_thresholds);
  for (const auto& w : norm.warnings) ev.report.warnings.push_back("normalizer: " + w);
  return ev;
}

}  // namespace dskd
