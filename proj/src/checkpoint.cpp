// SPDX-License-Identifier: Apache-2.0
#include "dskd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "dskd/error.hpp"

namespace dskd {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'K', 'D', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof v);
}

template <class T>
T get(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw LoadError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof v);
  pos += sizeof v;
  return v;
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> optional_double(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

nn::ConstParamList all_params(const Checkpoint& c) {
  nn::ConstParamList out;
  if (c.local) {
    const auto p = c.local->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (c.global) {
    const auto p = c.global->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

nn::ParamList all_params(Checkpoint& c) {
  nn::ParamList out;
  if (c.local) {
    const auto p = c.local->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  if (c.global) {
    const auto p = c.global->params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  nlohmann::json h;
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : c.config.entries()) cfg[k] = v;
  h["config"] = cfg;
  h["teacher"] = {{"kind", to_string(c.teacher.kind())},
                  {"seed", c.teacher.seed()},
                  {"input_size", c.teacher.input_size()},
                  {"weights_hash", c.teacher.weights_hash()},
                  {"fingerprint", c.teacher.fingerprint()}};
  const Normalizer& n = c.normalizer;
  h["normalizer"] = {{"mu_loc", n.mu_loc},     {"sigma_loc", n.sigma_loc}, {"mu_glo", n.mu_glo},
                     {"sigma_glo", n.sigma_glo}, {"fitted", n.fitted},   {"warnings", n.warnings}};
  nlohmann::json log = nlohmann::json::array();
  for (const EpochRecord& r : c.log) {
    log.push_back({{"epoch", r.epoch},
                   {"loss_local", optional_json(r.loss_local)},
                   {"loss_global", optional_json(r.loss_global)}});
  }
  h["log"] = log;
  h["log_digest"] = c.log_digest();
  nlohmann::json students = nlohmann::json::array();
  if (c.local) students.push_back("local");
  if (c.global) students.push_back("global");
  h["students"] = students;

  const auto params = all_params(c);
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t total = 0;
  for (const nn::Param* p : params) {
    manifest.push_back({{"name", p->name}, {"shape", p->shape}, {"count", p->size()}});
    total += p->size();
  }
  h["params"] = manifest;

  const std::string header = h.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + total * sizeof(double));
  for (const nn::Param* p : params) {
    for (double v : p->value) put(out, v);
  }
  return out;
}

namespace {

Checkpoint deserialize_unchecked(const std::vector<std::uint8_t>& in) {
  if (in.size() < sizeof kMagic || std::memcmp(in.data(), kMagic, sizeof kMagic) != 0) {
    throw LoadError("not a checkpoint file (bad magic)");
  }
  std::size_t pos = sizeof kMagic;
  const auto version = get<std::uint32_t>(in, pos);
  if (version != kCheckpointVersion) {
    throw LoadError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_bytes = get<std::uint64_t>(in, pos);
  if (header_bytes > in.size() - pos) throw LoadError("checkpoint header truncated");
  Checkpoint c;
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(in.begin() + static_cast<std::ptrdiff_t>(pos),
                              in.begin() + static_cast<std::ptrdiff_t>(pos + header_bytes));
    pos += header_bytes;

    for (const auto& [k, v] : h.at("config").items()) c.config.set(k, v.get<std::string>());
    c.config.validate();

    const auto& n = h.at("normalizer");
    c.normalizer.mu_loc = n.at("mu_loc").get<double>();
    c.normalizer.sigma_loc = n.at("sigma_loc").get<double>();
    c.normalizer.mu_glo = n.at("mu_glo").get<double>();
    c.normalizer.sigma_glo = n.at("sigma_glo").get<double>();
    c.normalizer.fitted = n.at("fitted").get<bool>();
    c.normalizer.warnings = n.at("warnings").get<std::vector<std::string>>();

    for (const auto& r : h.at("log")) {
      c.log.push_back({r.at("epoch").get<int>(), optional_double(r.at("loss_local")),
                       optional_double(r.at("loss_global")), 0.0});
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("invalid config in checkpoint: ") + e.what());
  }
  if (c.log_digest() != h.at("log_digest").get<std::string>()) {
    throw LoadError("checkpoint training log does not match its digest");
  }

  const auto& td = h.at("teacher");
  try {
    c.teacher = make_teacher(c.config);
  } catch (const Error& e) {
    throw LoadError(std::string("cannot rebuild the checkpoint teacher: ") + e.what());
  }
  if (c.teacher.fingerprint() != td.at("fingerprint").get<std::string>() ||
      c.teacher.weights_hash() != td.at("weights_hash").get<std::string>()) {
    throw LoadError("rebuilt teacher does not match the checkpoint fingerprint");
  }

  const auto students = h.at("students").get<std::vector<std::string>>();
  const auto& shapes = c.teacher.stage_shapes();
  for (const auto& s : students) {
    if (s == "local") {
      c.local.emplace(shapes);
    } else if (s == "global") {
      c.global.emplace(shapes, c.config.gccb ? std::optional<int>(c.config.gccb_channels)
                                             : std::nullopt);
    } else {
      throw LoadError("unknown student '" + s + "' in checkpoint");
    }
  }

  const auto params = all_params(c);
  const auto& manifest = h.at("params");
  if (manifest.size() != params.size()) throw LoadError("checkpoint parameter manifest mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    nn::Param& p = *params[i];
    if (manifest[i].at("name").get<std::string>() != p.name ||
        manifest[i].at("shape").get<std::vector<int>>() != p.shape) {
      throw LoadError("checkpoint parameter '" + manifest[i].at("name").get<std::string>() +
                      "' does not match the model ('" + p.name + "')");
    }
    for (double& v : p.value) v = get<double>(in, pos);
  }
  if (pos != in.size()) throw LoadError("checkpoint has trailing bytes");
  return c;
}

}  // namespace

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& in) {
  try {
    return deserialize_unchecked(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("corrupt checkpoint header: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint '" + path + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace dskd
