// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "ooc/model.hpp"
#include "ooc/train.hpp"

namespace ooc {

/// Everything a reproducible run needs: architecture, optimization, file
/// locations and the generation endpoint ("stub" selects the built-in client).
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    struct Paths {
        std::string train_data;
        std::string val_data;
        std::string test_data;
        std::string checkpoint;
        std::string output;
    } paths;
    std::string vlm_endpoint = "stub";
};

nlohmann::ordered_json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::ordered_json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::ordered_json run_config_to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

} // namespace ooc
