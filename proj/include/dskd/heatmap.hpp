// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dskd/image_io.hpp"
#include "dskd/trainer.hpp"

namespace dskd {

/// Piecewise-linear jet colormap, t in [0, 1] (clamped).
std::array<std::uint8_t, 3> jet(double t);

/// Maps [lo, hi] onto the colormap; a degenerate range maps everything to jet(0).
Image8 colorize(const ScoreMap& map, double lo, double hi);

/// For every result writes `<stem>_input.png`, `<stem>_students.png` (local
/// and global maps side by side) and `<stem>_fused.png`, all maps sharing
/// one colour scale, plus `index.html`. Returns the written file names.
/// Throws IoError when `out_dir` cannot be created or written.
std::vector<std::string> export_heatmaps(std::span<const FusedResult> results,
                                         const std::string& out_dir);

}  // namespace dskd
