// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "ooc/model.hpp"

namespace ooc {

struct Checkpoint {
    ModelConfig config;
    ModelParams params;
};

/// Binary checkpoint: "OOCN" magic, u32 format version, u32 JSON header
/// length, JSON header (model config + tensor directory), little-endian
/// IEEE-754 payload, trailing CRC-32 of the payload. Round-trips every weight
/// and the batch-norm running statistics bit-exactly.
void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                     const std::filesystem::path& path);

Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace ooc
