// License: Apache 2.0. See LICENSE file in root directory.
// Copyright (c) 2026 voxcal contributors
#pragma once

#include <map>
#include <string>
#include <vector>

#include "voxcal/tensor.hpp"

namespace voxcal {

// Checkpoint file layout (shared by every trained module):
//   bytes 0..7   magic "VOXCAL01"
//   u64 LE       manifest byte length
//   manifest     UTF-8 JSON: {"tensors":[{"name","shape","dtype":"f32","byte_offset"},...]}
//   payload      raw little-endian f32, offsets relative to payload start
// Round-trips are bit-exact.

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

std::map<std::string, Tensor> load_checkpoint(const std::string& path);

/// load_checkpoint, but a missing file throws MissingArtifact naming the path.
std::map<std::string, Tensor> load_checkpoint_required(const std::string& path);

} // namespace voxcal
