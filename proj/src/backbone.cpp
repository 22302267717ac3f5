// SPDX-License-Identifier: Apache-2.0
#include "dskd/backbone.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "dskd/error.hpp"
#include "dskd/hash.hpp"

namespace dskd {

namespace {

constexpr char kWeightsMagic[8] = {'D', 'S', 'K', 'D', 'W', 'R', 'N', '1'};
constexpr std::array<int, 4> kTinyChannels{16, 32, 64, 128};

int conv_out(int size, int kernel, int stride, int pad) {
  return (size + 2 * pad - kernel) / stride + 1;
}

}  // namespace

std::string to_string(TeacherKind kind) {
  return kind == TeacherKind::TinySeeded ? "tiny-seeded" : "pretrained-wide-residual";
}

TeacherKind parse_teacher_kind(const std::string& s) {
  if (s == "tiny-seeded" || s == "tiny") return TeacherKind::TinySeeded;
  if (s == "pretrained-wide-residual" || s == "pretrained") {
    return TeacherKind::PretrainedWideResidual;
  }
  throw ConfigError("unsupported teacher kind '" + s + "'");
}

InputNormalization InputNormalization::for_kind(TeacherKind kind) {
  if (kind == TeacherKind::PretrainedWideResidual) {
    return {{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}};
  }
  return {};
}

std::array<Shape, 4> tiny_stage_shapes(int input_size) {
  std::array<Shape, 4> shapes{};
  int s = input_size;
  for (int i = 0; i < 4; ++i) {
    s = conv_out(s, 3, 2, 1);
    shapes[i] = {s, s, kTinyChannels[i]};
  }
  return shapes;
}

std::array<Shape, 4> wide_residual_stage_shapes(int input_size, const WideResidualArch& arch) {
  std::array<Shape, 4> shapes{};
  int s = conv_out(input_size, 7, 2, 3);
  s = conv_out(s, 3, 2, 1);
  for (int i = 0; i < 4; ++i) {
    if (i > 0) s = conv_out(s, 3, 2, 1);
    shapes[i] = {s, s, arch.base_out << i};
  }
  return shapes;
}

// ---------------------------------------------------------------------------

Tensor TeacherNet::Bottleneck::forward(const Tensor& x) const {
  Tensor y = nn::relu(reduce.forward(x));
  y = nn::relu(spatial.forward(y));
  y = expand.forward(y);
  y += shortcut ? shortcut->forward(x) : x;
  return nn::relu(y);
}

Tensor TeacherNet::normalize_input(const ImageTensor& image) const {
  if (image.h() != input_size_ || image.w() != input_size_ || image.c() != 3) {
    throw InputError("teacher expects a " + std::to_string(input_size_) + "x" +
                     std::to_string(input_size_) + "x3 image, got " + to_string(image.shape()));
  }
  if (!image.all_finite()) throw InputError("teacher input contains non-finite values");
  Tensor x(image.shape());
  for (int pos = 0; pos < image.h() * image.w(); ++pos) {
    auto src = image.pixel(pos);
    auto dst = x.pixel(pos);
    for (int c = 0; c < 3; ++c) {
      dst[c] = (src[c] - normalization_.mean[c]) / normalization_.std[c];
    }
  }
  return x;
}

Tensor TeacherNet::run_stage(int stage, const Tensor& x) const {
  if (kind_ == TeacherKind::TinySeeded) {
    const auto& convs = tiny_stages_[stage];
    return nn::relu(convs[1].forward(nn::relu(convs[0].forward(x))));
  }
  Tensor y = x;
  for (const Bottleneck& block : wide_stages_[stage]) y = block.forward(y);
  return y;
}

FeaturePyramid TeacherNet::extract(const ImageTensor& image, bool with_stage4) const {
  Tensor x = normalize_input(image);
  if (kind_ == TeacherKind::PretrainedWideResidual) {
    x = nn::max_pool3x3s2(nn::relu(stem_.forward(x)));
  }
  FeaturePyramid pyramid;
  for (int stage = 0; stage < 3; ++stage) {
    x = run_stage(stage, x);
    pyramid.levels[stage] = x;
  }
  if (with_stage4) pyramid.stage4 = run_stage(3, x);
  return pyramid;
}

nn::ConstParamList TeacherNet::params() const {
  nn::ConstParamList out;
  if (kind_ == TeacherKind::TinySeeded) {
    for (const auto& convs : tiny_stages_) {
      convs[0].collect(out);
      convs[1].collect(out);
    }
    return out;
  }
  stem_.collect(out);
  for (const auto& stage : wide_stages_) {
    for (const Bottleneck& b : stage) {
      b.reduce.collect(out);
      b.spatial.collect(out);
      b.expand.collect(out);
      if (b.shortcut) b.shortcut->collect(out);
    }
  }
  return out;
}

std::string TeacherNet::fingerprint() const {
  Fnv1a h;
  for (const nn::Param* p : params()) {
    h.update(p->name);
    h.update(std::span<const double>(p->value));
  }
  return h.hex();
}

std::size_t TeacherNet::parameter_count() const { return nn::parameter_count(params()); }

// ---------------------------------------------------------------------------
// Construction

namespace {

struct WideSkeleton {
  nn::Conv2d stem;
  std::vector<std::vector<std::array<nn::Conv2d, 4>>> stages;  // reduce, spatial, expand, shortcut
  std::vector<std::vector<bool>> has_shortcut;
};

WideSkeleton make_wide_skeleton(const WideResidualArch& arch) {
  WideSkeleton sk;
  sk.stem = nn::Conv2d("stem", 3, arch.stem_channels, 7, 2, 3);
  int in = arch.stem_channels;
  for (int s = 0; s < 4; ++s) {
    const int width = arch.base_width << s;
    const int out = arch.base_out << s;
    sk.stages.emplace_back();
    sk.has_shortcut.emplace_back();
    for (int b = 0; b < arch.blocks[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string p = "stage" + std::to_string(s + 1) + "." + std::to_string(b);
      std::array<nn::Conv2d, 4> convs{
          nn::Conv2d(p + ".reduce", in, width, 1, 1, 0),
          nn::Conv2d(p + ".spatial", width, width, 3, stride, 1),
          nn::Conv2d(p + ".expand", width, out, 1, 1, 0),
          nn::Conv2d(p + ".shortcut", in, out, 1, stride, 0)};
      sk.has_shortcut.back().push_back(stride != 1 || in != out);
      sk.stages.back().push_back(std::move(convs));
      in = out;
    }
  }
  return sk;
}

std::vector<nn::Param*> skeleton_params(WideSkeleton& sk) {
  nn::ParamList out;
  sk.stem.collect(out);
  for (std::size_t s = 0; s < sk.stages.size(); ++s) {
    for (std::size_t b = 0; b < sk.stages[s].size(); ++b) {
      auto& convs = sk.stages[s][b];
      for (int k = 0; k < 3; ++k) convs[k].collect(out);
      if (sk.has_shortcut[s][b]) convs[3].collect(out);
    }
  }
  return out;
}

void check_arch(const WideResidualArch& arch) {
  for (int b : arch.blocks) {
    if (b <= 0) throw LoadError("weights header: every stage needs at least one block");
  }
  if (arch.stem_channels <= 0 || arch.base_width <= 0 || arch.base_out <= 0) {
    throw LoadError("weights header: channel counts must be positive");
  }
}

WideResidualArch load_weights(const std::string& path, WideSkeleton& sk, std::string& hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open teacher weights file '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Fnv1a file_hash;
  file_hash.update(bytes.data(), bytes.size());
  hash = file_hash.hex();

  if (bytes.size() < 16 || std::memcmp(bytes.data(), kWeightsMagic, 8) != 0) {
    throw LoadError("'" + path + "' is not a teacher weights file (bad magic)");
  }
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 8, 8);
  if (header_len > bytes.size() - 16) throw LoadError("'" + path + "': truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("'" + path + "': corrupt header: " + e.what());
  }

  WideResidualArch arch;
  std::vector<std::pair<std::string, std::vector<int>>> manifest;
  try {
    const auto& a = header.at("arch");
    arch.blocks = a.at("blocks").get<std::array<int, 4>>();
    arch.stem_channels = a.at("stem_channels").get<int>();
    arch.base_width = a.at("base_width").get<int>();
    arch.base_out = a.at("base_out").get<int>();
    for (const auto& t : header.at("tensors")) {
      manifest.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<std::vector<int>>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("'" + path + "': malformed header: " + e.what());
  }
  check_arch(arch);

  sk = make_wide_skeleton(arch);
  auto params = skeleton_params(sk);
  if (manifest.size() != params.size()) {
    throw LoadError("'" + path + "': expected " + std::to_string(params.size()) +
                    " tensors, header lists " + std::to_string(manifest.size()));
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (manifest[i].first != params[i]->name || manifest[i].second != params[i]->shape) {
      throw LoadError("'" + path + "': tensor " + std::to_string(i) + " is '" +
                      manifest[i].first + "', expected '" + params[i]->name + "' with matching shape");
    }
    total += params[i]->size();
  }
  const std::size_t payload = bytes.size() - 16 - header_len;
  if (payload != total * sizeof(float)) {
    throw LoadError("'" + path + "': payload holds " + std::to_string(payload) +
                    " bytes, expected " + std::to_string(total * sizeof(float)));
  }
  const char* cursor = bytes.data() + 16 + header_len;
  for (nn::Param* p : params) {
    for (double& v : p->value) {
      float f;
      std::memcpy(&f, cursor, sizeof f);
      cursor += sizeof f;
      if (!std::isfinite(f)) throw LoadError("'" + path + "': non-finite weight in " + p->name);
      v = f;
    }
  }
  return arch;
}

}  // namespace

TeacherNet build_teacher(const TeacherConfig& config, std::uint64_t seed) {
  if (config.input_size <= 0) throw ConfigError("teacher input size must be positive");
  TeacherNet net;
  net.kind_ = config.kind;
  net.input_size_ = config.input_size;
  net.normalization_ = config.normalization;
  for (double s : config.normalization.std) {
    if (!(s > 0.0)) throw ConfigError("input normalization std must be positive");
  }

  if (config.kind == TeacherKind::TinySeeded) {
    net.seed_ = seed;
    net.stage_shapes_ = tiny_stage_shapes(config.input_size);
    if (net.stage_shapes_[3].h < 1) throw ConfigError("input size too small for the tiny teacher");
    std::mt19937_64 rng(seed);
    int in = 3;
    for (int s = 0; s < 4; ++s) {
      const int c = kTinyChannels[s];
      const std::string p = "teacher.stage" + std::to_string(s + 1);
      std::array<nn::Conv2d, 2> convs{nn::Conv2d(p + ".conv1", in, c, 3, 2, 1),
                                      nn::Conv2d(p + ".conv2", c, c, 3, 1, 1)};
      convs[0].init(rng);
      convs[1].init(rng);
      net.tiny_stages_.push_back(std::move(convs));
      in = c;
    }
    return net;
  }

  if (config.kind != TeacherKind::PretrainedWideResidual) throw ConfigError("unsupported teacher kind");
  if (config.weights_path.empty()) throw LoadError("pretrained teacher requires a weights file path");
  WideSkeleton sk;
  const WideResidualArch arch = load_weights(config.weights_path, sk, net.weights_hash_);
  net.stage_shapes_ = wide_residual_stage_shapes(config.input_size, arch);
  if (net.stage_shapes_[3].h < 1) throw ConfigError("input size too small for the wide teacher");
  net.stem_ = std::move(sk.stem);
  for (std::size_t s = 0; s < sk.stages.size(); ++s) {
    net.wide_stages_.emplace_back();
    for (std::size_t b = 0; b < sk.stages[s].size(); ++b) {
      auto& convs = sk.stages[s][b];
      TeacherNet::Bottleneck block{std::move(convs[0]), std::move(convs[1]), std::move(convs[2]),
                                   std::nullopt};
      if (sk.has_shortcut[s][b]) block.shortcut = std::move(convs[3]);
      net.wide_stages_.back().push_back(std::move(block));
    }
  }
  return net;
}

FeaturePyramid extract_features(const TeacherNet& teacher, const ImageTensor& image,
                                bool with_stage4) {
  return teacher.extract(image, with_stage4);
}

void write_wide_residual_weights(const std::string& path, const WideResidualArch& arch,
                                 std::uint64_t seed) {
  check_arch(arch);
  WideSkeleton sk = make_wide_skeleton(arch);
  auto params = skeleton_params(sk);
  std::mt19937_64 rng(seed);
  nlohmann::json header;
  header["format"] = "dskd-wide-residual";
  header["arch"] = {{"blocks", arch.blocks},
                    {"stem_channels", arch.stem_channels},
                    {"base_width", arch.base_width},
                    {"base_out", arch.base_out}};
  header["tensors"] = nlohmann::json::array();
  for (nn::Param* p : params) header["tensors"].push_back({{"name", p->name}, {"shape", p->shape}});
  sk.stem.init(rng);
  for (auto& stage : sk.stages) {
    for (auto& convs : stage) {
      for (auto& c : convs) c.init(rng);
    }
  }
  // Keep residual branches small so deep random stacks stay well scaled.
  for (auto& stage : sk.stages) {
    for (auto& convs : stage) {
      for (double& v : convs[2].weight.value) v *= 0.2;
    }
  }

  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write weights file '" + path + "'");
  const std::uint64_t len = text.size();
  out.write(kWeightsMagic, 8);
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (nn::Param* p : params) {
    for (double v : p->value) {
      const float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
  }
  if (!out) throw IoError("failed writing weights file '" + path + "'");
}

}  // namespace dskd
