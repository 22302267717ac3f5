// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint:
//
//   "DSKDCKPT"            8-byte magic
//   u32 version           little-endian
//   u64 header_bytes      little-endian
//   header                JSON: config, teacher, normalizer, log, params manifest
//   payload               float64 little-endian, manifest order
//
// The same checkpoint always serializes to the same bytes.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dskd/trainer.hpp"

namespace dskd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Throws IoError on write failure.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
/// Throws LoadError on a missing, corrupt, or version-mismatched file, and
/// when the rebuilt teacher does not match the recorded fingerprint.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dskd
