// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#include "ooc/run_config.hpp"

#include <fstream>
#include <set>

namespace ooc {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& context) {
    if (!j.is_object()) throw Error(context + ": expected a JSON object");
    for (const auto& item : j.items())
        if (!allowed.contains(item.key()))
            throw Error(context + ": unknown key '" + item.key() + "'");
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace

ordered_json model_config_to_json(const ModelConfig& c) {
    ordered_json j;
    j["d_v"] = c.d_v;
    j["d_t"] = c.d_t;
    j["d_mm"] = c.d_mm;
    j["n_heads"] = c.n_heads;
    j["hidden_mm"] = c.hidden_mm;
    j["dropout_p"] = c.dropout_p;
    j["use_label_block"] = c.use_label_block;
    j["use_page_block"] = c.use_page_block;
    j["threshold"] = c.threshold;
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    reject_unknown(j,
                   {"d_v", "d_t", "d_mm", "n_heads", "hidden_mm", "dropout_p", "use_label_block",
                    "use_page_block", "threshold"},
                   "model config");
    ModelConfig c;
    try {
        read_if(j, "d_v", c.d_v);
        read_if(j, "d_t", c.d_t);
        read_if(j, "d_mm", c.d_mm);
        read_if(j, "n_heads", c.n_heads);
        read_if(j, "hidden_mm", c.hidden_mm);
        read_if(j, "dropout_p", c.dropout_p);
        read_if(j, "use_label_block", c.use_label_block);
        read_if(j, "use_page_block", c.use_page_block);
        read_if(j, "threshold", c.threshold);
    } catch (const json::exception& e) {
        throw Error(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

ordered_json train_config_to_json(const TrainConfig& c) {
    ordered_json j;
    j["batch_size"] = c.batch_size;
    j["lr_init"] = c.lr_init;
    j["lr_max"] = c.lr_max;
    j["lr_rescale"] = c.lr_rescale;
    j["cycle_epochs"] = c.cycle_epochs;
    j["patience"] = c.patience;
    j["max_epochs"] = c.max_epochs;
    j["optimizer"] = c.optimizer == OptimizerKind::Adam ? "adam" : "sgd";
    j["seed"] = c.seed;
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    reject_unknown(j,
                   {"batch_size", "lr_init", "lr_max", "lr_rescale", "cycle_epochs", "patience",
                    "max_epochs", "optimizer", "seed"},
                   "train config");
    TrainConfig c;
    try {
        read_if(j, "batch_size", c.batch_size);
        read_if(j, "lr_init", c.lr_init);
        read_if(j, "lr_max", c.lr_max);
        read_if(j, "lr_rescale", c.lr_rescale);
        read_if(j, "cycle_epochs", c.cycle_epochs);
        read_if(j, "patience", c.patience);
        read_if(j, "max_epochs", c.max_epochs);
        if (j.contains("optimizer")) {
            std::string name = j.at("optimizer").get<std::string>();
            if (name == "adam") {
                c.optimizer = OptimizerKind::Adam;
            } else if (name == "sgd") {
                c.optimizer = OptimizerKind::Sgd;
            } else {
                throw Error("train config: optimizer must be 'adam' or 'sgd'");
            }
        }
        read_if(j, "seed", c.seed);
    } catch (const json::exception& e) {
        throw Error(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

ordered_json run_config_to_json(const RunConfig& c) {
    ordered_json j;
    j["model"] = model_config_to_json(c.model);
    j["train"] = train_config_to_json(c.train);
    ordered_json paths;
    paths["train_data"] = c.paths.train_data;
    paths["val_data"] = c.paths.val_data;
    paths["test_data"] = c.paths.test_data;
    paths["checkpoint"] = c.paths.checkpoint;
    paths["output"] = c.paths.output;
    j["paths"] = std::move(paths);
    j["vlm_endpoint"] = c.vlm_endpoint;
    return j;
}

RunConfig run_config_from_json(const json& j) {
    reject_unknown(j, {"model", "train", "paths", "vlm_endpoint"}, "run config");
    RunConfig c;
    try {
        if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
        if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
        if (j.contains("paths")) {
            const json& p = j.at("paths");
            reject_unknown(p, {"train_data", "val_data", "test_data", "checkpoint", "output"},
                           "run config paths");
            read_if(p, "train_data", c.paths.train_data);
            read_if(p, "val_data", c.paths.val_data);
            read_if(p, "test_data", c.paths.test_data);
            read_if(p, "checkpoint", c.paths.checkpoint);
            read_if(p, "output", c.paths.output);
        }
        read_if(j, "vlm_endpoint", c.vlm_endpoint);
    } catch (const json::exception& e) {
        throw Error(std::string("run config: ") + e.what());
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error("config file " + path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write config file " + path.string());
    out << run_config_to_json(config).dump(2) << "\n";
}

} // namespace ooc
