// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface for the out-of-context detector: synthesize archives,
// train, evaluate, predict, explain and count parameters.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "ooc/checkpoint.hpp"
#include "ooc/explain.hpp"
#include "ooc/metrics.hpp"
#include "ooc/run_config.hpp"

namespace {

using nlohmann::ordered_json;

struct OptionRefs {
    CLI::App* cmd = nullptr;

    template <typename T>
    CLI::Option* add(const std::string& flag, T& value, const std::string& help) {
        return cmd->add_option(flag, value, help)->capture_default_str();
    }
};

/// Model flags shared by train/params. Values land in `config` only when the
/// user passed the flag, so config-file values survive.
struct ModelFlags {
    int d_v, d_t, d_mm, n_heads, hidden_mm;
    double dropout_p, threshold;
    bool no_label_block = false;
    bool no_page_block = false;
    CLI::Option *o_dv, *o_dt, *o_dmm, *o_heads, *o_hidden, *o_dropout, *o_threshold, *o_nolabel,
        *o_nopage;

    void attach(CLI::App* cmd, const ooc::ModelConfig& defaults) {
        d_v = defaults.d_v;
        d_t = defaults.d_t;
        d_mm = defaults.d_mm;
        n_heads = defaults.n_heads;
        hidden_mm = defaults.hidden_mm;
        dropout_p = defaults.dropout_p;
        threshold = defaults.threshold;
        OptionRefs refs{cmd};
        o_dv = refs.add("--d-v", d_v, "image embedding dimension");
        o_dt = refs.add("--d-t", d_t, "text embedding dimension");
        o_dmm = refs.add("--d-mm", d_mm, "multimodal embedding dimension");
        o_heads = refs.add("--heads", n_heads, "attention heads");
        o_hidden = refs.add("--hidden-mm", hidden_mm, "multimodal hidden width");
        o_dropout = refs.add("--dropout", dropout_p, "multimodal dropout probability");
        o_threshold = refs.add("--threshold", threshold, "falsified decision threshold");
        o_nolabel = cmd->add_flag("--no-label-block", no_label_block,
                                  "drop the label-label attention block");
        o_nopage = cmd->add_flag("--no-page-block", no_page_block,
                                 "drop the page-page self-attention block");
    }

    void apply(ooc::ModelConfig& config) const {
        if (o_dv->count()) config.d_v = d_v;
        if (o_dt->count()) config.d_t = d_t;
        if (o_dmm->count()) config.d_mm = d_mm;
        if (o_heads->count()) config.n_heads = n_heads;
        if (o_hidden->count()) config.hidden_mm = hidden_mm;
        if (o_dropout->count()) config.dropout_p = dropout_p;
        if (o_threshold->count()) config.threshold = threshold;
        if (o_nolabel->count()) config.use_label_block = false;
        if (o_nopage->count()) config.use_page_block = false;
    }
};

std::string format_millions(long long count) {
    double millions = static_cast<double>(count) / 1e6;
    double rounded = std::round(millions * 10.0) / 10.0;
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(1);
    out << rounded << " M";
    return out.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ooc::Error("cannot write " + path);
    out << text;
}

ordered_json scores_to_json(const ooc::ConsistencyScores& s) {
    ordered_json j;
    auto put = [&](const char* key, const std::optional<ooc::Scalar>& v) {
        if (v) {
            j[key] = *v;
        } else {
            j[key] = nullptr;
        }
    };
    put("images", s.s_images);
    put("labels", s.s_labels);
    put("cpt", s.s_cpt);
    put("pages", s.s_pages);
    j["logit"] = s.s_logit;
    return j;
}

ordered_json metrics_to_json(const ooc::Metrics& m) {
    ordered_json j;
    j["accuracy_at_half"] = m.accuracy_at_half;
    j["th_eer"] = m.th_eer;
    j["accuracy_at_theer"] = m.accuracy_at_theer;
    j["roc_auc"] = m.roc_auc;
    j["eer"] = m.eer;
    return j;
}

ordered_json history_to_json(const ooc::TrainHistory& history, const ooc::ModelConfig& model,
                             const ooc::TrainConfig& train) {
    ordered_json j;
    j["model"] = ooc::model_config_to_json(model);
    j["train"] = ooc::train_config_to_json(train);
    ordered_json epochs = ordered_json::array();
    for (const ooc::EpochStats& e : history.epochs) {
        ordered_json o;
        o["epoch"] = e.epoch;
        o["train_loss"] = e.train_loss;
        o["val_loss"] = e.val_loss;
        o["val_accuracy"] = e.val_accuracy;
        o["lr_end"] = e.lr_end;
        epochs.push_back(std::move(o));
    }
    j["epochs"] = std::move(epochs);
    j["best_epoch"] = history.best_epoch;
    j["stopped_epoch"] = history.stopped_epoch;
    return j;
}

// ---- subcommands ---------------------------------------------------------------

int run_synth(const ooc::SynthSpec& spec, const std::string& out_dir) {
    ooc::Dataset ds = ooc::generate_synthetic(spec);
    ooc::save_dataset(ds, out_dir);
    std::cout << "wrote " << ds.samples.size() << " samples to " << out_dir << "\n";
    return 0;
}

int run_params(const ooc::ModelConfig& config) {
    long long count = ooc::count_parameters(config);
    std::cout << count << " parameters (" << format_millions(count) << ")\n";
    return 0;
}

int run_train(const ooc::ModelConfig& model, const ooc::TrainConfig& train_cfg,
              const std::string& train_dir, const std::string& val_dir,
              const std::string& ckpt_path, const std::string& history_path) {
    if (val_dir.empty())
        throw ooc::Error("train: a validation split is required (early stopping depends on it)");
    ooc::Dataset train_set = ooc::load_dataset(train_dir);
    ooc::Dataset val_set = ooc::load_dataset(val_dir);
    ooc::TrainResult result = ooc::train(train_set, val_set, model, train_cfg);
    ooc::save_checkpoint(result.params, model, ckpt_path);
    if (!history_path.empty())
        write_text(history_path, history_to_json(result.history, model, train_cfg).dump(2) + "\n");
    const ooc::EpochStats& best = result.history.epochs.at(result.history.best_epoch - 1);
    std::cout << "stopped after epoch " << result.history.stopped_epoch << ", best epoch "
              << result.history.best_epoch << " (val loss " << best.val_loss << ", val accuracy "
              << best.val_accuracy << ")\n"
              << "checkpoint written to " << ckpt_path << "\n";
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& val_dir,
             const std::string& test_dir, const std::string& out_path) {
    ooc::Checkpoint ckpt = ooc::load_checkpoint(ckpt_path);
    ooc::Dataset val_set = ooc::load_dataset(val_dir);
    ooc::Dataset test_set = ooc::load_dataset(test_dir);
    ooc::Metrics m = ooc::evaluate(ckpt.params, ckpt.config, val_set, test_set);
    ordered_json j = metrics_to_json(m);
    for (const auto& item : j.items())
        std::cout << item.key() << "\t" << item.value().dump() << "\n";
    if (!out_path.empty()) write_text(out_path, j.dump(2) + "\n");
    return 0;
}

int run_predict(const std::string& ckpt_path, const std::string& data_dir,
                const std::string& out_path) {
    ooc::Checkpoint ckpt = ooc::load_checkpoint(ckpt_path);
    ooc::Dataset data = ooc::load_dataset(data_dir);
    std::ostringstream lines;
    std::vector<const ooc::Sample*> all;
    for (const ooc::Sample& s : data.samples) all.push_back(&s);
    if (!all.empty()) {
        ooc::BatchOutput out = ooc::forward_batch(all, ckpt.params, ckpt.config);
        for (size_t i = 0; i < all.size(); ++i) {
            ordered_json j;
            j["sample_id"] = all[i]->sample_id;
            j["label"] = all[i]->label;
            j["p_class"] = out.predictions[i].p_class;
            j["verdict"] = ooc::verdict_name(out.predictions[i].verdict);
            j["scores"] = scores_to_json(out.scores[i]);
            lines << j.dump() << "\n";
        }
    }
    if (out_path.empty()) {
        std::cout << lines.str();
    } else {
        write_text(out_path, lines.str());
    }
    return 0;
}

int run_explain(const std::string& ckpt_path, const std::string& data_dir,
                const std::vector<std::string>& ids, const std::string& endpoint,
                int timeout_seconds, const std::string& out_path) {
    ooc::Checkpoint ckpt = ooc::load_checkpoint(ckpt_path);
    ooc::Dataset data = ooc::load_dataset(data_dir);

    std::vector<const ooc::Sample*> selected;
    if (ids.empty()) {
        for (const ooc::Sample& s : data.samples) selected.push_back(&s);
    } else {
        for (const std::string& id : ids) {
            auto it = std::find_if(data.samples.begin(), data.samples.end(),
                                   [&](const ooc::Sample& s) { return s.sample_id == id; });
            if (it == data.samples.end()) throw ooc::Error("explain: unknown sample id '" + id + "'");
            selected.push_back(&*it);
        }
    }

    auto client = ooc::make_generation_client(endpoint, timeout_seconds);
    std::ostringstream lines;
    for (const ooc::Sample* sample : selected) {
        ooc::ForwardResult fwd = ooc::forward(*sample, ckpt.params, ckpt.config);
        std::vector<ooc::AttendedPage> pages = ooc::select_attended_pages(fwd.ranking, *sample);
        ooc::WarningReport report =
            ooc::generate_warning(*sample, fwd.prediction, pages, *client);
        lines << ooc::report_to_json(report).dump() << "\n";
    }
    if (out_path.empty()) {
        std::cout << lines.str();
    } else {
        write_text(out_path, lines.str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Out-of-context (image, caption) pair detector"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic embedding archive");
    ooc::SynthSpec spec;
    std::string synth_out;
    synth->add_option("--n", spec.n_samples, "number of samples")->capture_default_str();
    synth->add_option("--seed", spec.seed, "generator seed")->capture_default_str();
    synth->add_option("--falsified-fraction", spec.falsified_fraction, "fraction of falsified samples")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    synth->add_option("--d-v", spec.d_v, "image embedding dimension")->capture_default_str();
    synth->add_option("--d-t", spec.d_t, "text embedding dimension")->capture_default_str();
    synth->add_option("--d-mm", spec.d_mm, "multimodal embedding dimension")->capture_default_str();
    synth->add_option("--evidence-min", spec.evidence_min, "min evidence per kind")
        ->capture_default_str();
    synth->add_option("--evidence-max", spec.evidence_max, "max evidence per kind")
        ->capture_default_str();
    synth->add_option("--correlation", spec.correlation, "pristine evidence alignment in [0,1]")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    synth->add_option("--split", spec.split, "archive split name")
        ->check(CLI::IsMember({"train", "validation", "test"}))
        ->capture_default_str();
    synth->add_option("--out", synth_out, "output archive directory")->required();

    // ---- params ----
    auto* params_cmd = app.add_subcommand("params", "print the trainable parameter count");
    std::string params_config_path;
    params_cmd->add_option("--config", params_config_path, "run config JSON file");
    ModelFlags params_flags;
    params_flags.attach(params_cmd, ooc::ModelConfig{});

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train the consistency network");
    std::string train_config_path, train_dir, val_dir, ckpt_out, history_out, lr_rescale_name;
    train_cmd->add_option("--config", train_config_path, "run config JSON file");
    auto* o_train_dir = train_cmd->add_option("--train", train_dir, "training archive directory");
    auto* o_val_dir = train_cmd->add_option("--val", val_dir, "validation archive directory");
    auto* o_ckpt_out = train_cmd->add_option("--out", ckpt_out, "checkpoint output path");
    train_cmd->add_option("--history", history_out, "training history JSON output path");
    ModelFlags train_model_flags;
    train_model_flags.attach(train_cmd, ooc::ModelConfig{});
    ooc::TrainConfig train_defaults;
    int batch_size = train_defaults.batch_size;
    double lr_init = train_defaults.lr_init;
    double lr_max = train_defaults.lr_max;
    int cycle_epochs = train_defaults.cycle_epochs;
    int patience = train_defaults.patience;
    int max_epochs = train_defaults.max_epochs;
    uint64_t train_seed = train_defaults.seed;
    std::string optimizer_name = "adam";
    auto* o_batch = train_cmd->add_option("--batch-size", batch_size, "mini-batch size")
                        ->capture_default_str();
    auto* o_lr_init =
        train_cmd->add_option("--lr-init", lr_init, "initial learning rate")->capture_default_str();
    auto* o_lr_max =
        train_cmd->add_option("--lr-max", lr_max, "maximum learning rate")->capture_default_str();
    auto* o_rescale = train_cmd
                          ->add_option("--lr-rescale", lr_rescale_name,
                                       "learning-rate rescale: none or single-device (1/sqrt(3))")
                          ->check(CLI::IsMember({"none", "single-device"}));
    auto* o_cycle = train_cmd->add_option("--cycle-epochs", cycle_epochs, "half-cycle in epochs")
                        ->capture_default_str();
    auto* o_patience = train_cmd->add_option("--patience", patience, "early-stopping patience")
                           ->capture_default_str();
    auto* o_max_epochs =
        train_cmd->add_option("--max-epochs", max_epochs, "epoch limit")->capture_default_str();
    auto* o_optimizer = train_cmd->add_option("--optimizer", optimizer_name, "adam or sgd")
                            ->check(CLI::IsMember({"adam", "sgd"}))
                            ->capture_default_str();
    auto* o_seed = train_cmd->add_option("--seed", train_seed, "training seed")->capture_default_str();

    // ---- eval ----
    auto* eval_cmd = app.add_subcommand("eval", "compute table metrics");
    std::string eval_ckpt, eval_val, eval_test, eval_out;
    eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--val", eval_val, "validation archive directory")->required();
    eval_cmd->add_option("--test", eval_test, "test archive directory")->required();
    eval_cmd->add_option("--out", eval_out, "metrics JSON output path");

    // ---- predict ----
    auto* predict_cmd = app.add_subcommand("predict", "emit per-sample scores as JSONL");
    std::string predict_ckpt, predict_data, predict_out;
    predict_cmd->add_option("--ckpt", predict_ckpt, "checkpoint path")->required();
    predict_cmd->add_option("--data", predict_data, "archive directory")->required();
    predict_cmd->add_option("--out", predict_out, "output path (default stdout)");

    // ---- explain ----
    auto* explain_cmd = app.add_subcommand("explain", "generate warning reports as JSONL");
    std::string explain_ckpt, explain_data, explain_endpoint, explain_out;
    std::vector<std::string> explain_ids;
    int explain_timeout = 30;
    explain_cmd->add_option("--ckpt", explain_ckpt, "checkpoint path")->required();
    explain_cmd->add_option("--data", explain_data, "archive directory")->required();
    explain_cmd->add_option("--ids", explain_ids, "sample ids (default: all)")->delimiter(',');
    explain_cmd->add_option("--endpoint", explain_endpoint,
                            "generation endpoint URL or 'stub' (default: $OOC_VLM_ENDPOINT or stub)");
    explain_cmd->add_option("--timeout", explain_timeout, "client timeout in seconds")
        ->capture_default_str();
    explain_cmd->add_option("--out", explain_out, "output path (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return run_synth(spec, synth_out);

        if (params_cmd->parsed()) {
            ooc::RunConfig run;
            if (!params_config_path.empty()) run = ooc::load_run_config(params_config_path);
            params_flags.apply(run.model);
            return run_params(run.model);
        }

        if (train_cmd->parsed()) {
            ooc::RunConfig run;
            if (!train_config_path.empty()) run = ooc::load_run_config(train_config_path);
            train_model_flags.apply(run.model);
            if (o_batch->count()) run.train.batch_size = batch_size;
            if (o_lr_init->count()) run.train.lr_init = lr_init;
            if (o_lr_max->count()) run.train.lr_max = lr_max;
            if (o_rescale->count())
                run.train.lr_rescale = lr_rescale_name == "single-device" ? 1.0 / std::sqrt(3.0) : 1.0;
            if (o_cycle->count()) run.train.cycle_epochs = cycle_epochs;
            if (o_patience->count()) run.train.patience = patience;
            if (o_max_epochs->count()) run.train.max_epochs = max_epochs;
            if (o_optimizer->count())
                run.train.optimizer = optimizer_name == "sgd" ? ooc::OptimizerKind::Sgd
                                                              : ooc::OptimizerKind::Adam;
            if (o_seed->count()) run.train.seed = train_seed;
            if (o_train_dir->count()) run.paths.train_data = train_dir;
            if (o_val_dir->count()) run.paths.val_data = val_dir;
            if (o_ckpt_out->count()) run.paths.checkpoint = ckpt_out;
            if (run.paths.train_data.empty()) throw ooc::Error("train: --train is required");
            if (run.paths.checkpoint.empty()) throw ooc::Error("train: --out is required");
            return run_train(run.model, run.train, run.paths.train_data, run.paths.val_data,
                             run.paths.checkpoint, history_out);
        }

        if (eval_cmd->parsed()) return run_eval(eval_ckpt, eval_val, eval_test, eval_out);
        if (predict_cmd->parsed()) return run_predict(predict_ckpt, predict_data, predict_out);
        if (explain_cmd->parsed()) {
            std::string endpoint = explain_endpoint;
            if (endpoint.empty()) {
                const char* env = std::getenv("OOC_VLM_ENDPOINT");
                endpoint = env && *env ? env : "stub";
            }
            return run_explain(explain_ckpt, explain_data, explain_ids, endpoint, explain_timeout,
                               explain_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
