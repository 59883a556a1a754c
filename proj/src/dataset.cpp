// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#include "ooc/dataset.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace ooc {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

int Sample::page_index(const std::string& id) const {
    for (size_t i = 0; i < pages.size(); ++i)
        if (pages[i].page_id == id) return static_cast<int>(i);
    return -1;
}

void SynthSpec::validate() const {
    if (falsified_fraction < 0.0 || falsified_fraction > 1.0)
        throw Error("synth: falsified_fraction must lie in [0, 1]");
    if (correlation < 0.0 || correlation > 1.0)
        throw Error("synth: correlation must lie in [0, 1]");
    if (evidence_min < 0 || evidence_min > evidence_max)
        throw Error("synth: evidence count range requires 0 <= min <= max");
    if (d_v <= 0 || d_t <= 0 || d_mm <= 0) throw Error("synth: dimensions must be positive");
    if (split != "train" && split != "validation" && split != "test")
        throw Error("synth: split must be train, validation or test");
}

// ---- validation --------------------------------------------------------------

namespace {

void check_dim(const std::vector<float>& v, int expected, const std::string& field,
               const std::string& context) {
    if (static_cast<int>(v.size()) != expected)
        throw Error(context + ": " + field + " has length " + std::to_string(v.size()) +
                    ", expected " + std::to_string(expected));
}

void check_manifest(const DatasetManifest& m) {
    if (m.d_v <= 0 || m.d_t <= 0 || m.d_mm <= 0)
        throw Error("manifest: dimensions must be positive");
    if (m.split != "train" && m.split != "validation" && m.split != "test")
        throw Error("manifest: split must be train, validation or test");
    if (m.format_version != 1)
        throw Error("manifest: unsupported format_version " + std::to_string(m.format_version));
}

} // namespace

void validate_sample(const Sample& s, const DatasetManifest& m, const std::string& context) {
    std::string ctx = context.empty() ? "sample " + s.sample_id : context;
    if (s.label != 0 && s.label != 1) throw Error(ctx + ": label must be 0 or 1");
    check_dim(s.image_embedding, m.d_v, "image_embedding", ctx);
    check_dim(s.caption_embedding, m.d_t, "caption_embedding", ctx);
    check_dim(s.labels_embedding, m.d_t, "labels_embedding", ctx);
    check_dim(s.pair_embedding, m.d_mm, "pair_embedding", ctx);

    std::unordered_set<std::string> page_ids;
    for (const PageRecord& p : s.pages) {
        check_dim(p.embedding, m.d_t, "pages[" + p.page_id + "].embedding", ctx);
        if (!page_ids.insert(p.page_id).second)
            throw Error(ctx + ": duplicate page_id '" + p.page_id + "'");
    }
    for (size_t i = 0; i < s.visual_evidence.size(); ++i) {
        const VisualEvidence& e = s.visual_evidence[i];
        std::string field = "visual_evidence[" + std::to_string(i) + "]";
        check_dim(e.embedding, m.d_v, field + ".embedding", ctx);
        check_dim(e.labels_embedding, m.d_t, field + ".labels_embedding", ctx);
        if (!page_ids.contains(e.page_id))
            throw Error(ctx + ": " + field + " references unknown page_id '" + e.page_id + "'");
    }
    for (size_t i = 0; i < s.textual_evidence.size(); ++i) {
        const TextualEvidence& e = s.textual_evidence[i];
        std::string field = "textual_evidence[" + std::to_string(i) + "]";
        check_dim(e.embedding, m.d_t, field + ".embedding", ctx);
        if (!page_ids.contains(e.page_id))
            throw Error(ctx + ": " + field + " references unknown page_id '" + e.page_id + "'");
    }
}

// ---- json conversion ---------------------------------------------------------

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& context) {
    for (const auto& item : j.items())
        if (!allowed.contains(item.key()))
            throw Error(context + ": unknown key '" + item.key() + "'");
}

std::vector<float> parse_embedding(const json& j, const std::string& field,
                                   const std::string& context) {
    if (!j.is_array()) throw Error(context + ": " + field + " must be an array of numbers");
    std::vector<float> out;
    out.reserve(j.size());
    for (const auto& v : j) {
        if (!v.is_number()) throw Error(context + ": " + field + " must contain only numbers");
        out.push_back(static_cast<float>(v.get<double>()));
    }
    return out;
}

// Floats are stored as decimal doubles; float -> double is exact and the
// shortest-round-trip double text reproduces the original float on read.
json embedding_to_json(const std::vector<float>& v) {
    json arr = json::array();
    for (float x : v) arr.push_back(static_cast<double>(x));
    return arr;
}

Sample sample_from_json(const json& j, const std::string& context) {
    if (!j.is_object()) throw Error(context + ": record must be a JSON object");
    reject_unknown_keys(j,
                        {"sample_id", "image_embedding", "caption_text", "caption_embedding",
                         "labels_embedding", "pair_embedding", "visual_evidence",
                         "textual_evidence", "pages", "label", "image_ref"},
                        context);
    Sample s;
    try {
        s.sample_id = j.at("sample_id").get<std::string>();
        s.image_embedding = parse_embedding(j.at("image_embedding"), "image_embedding", context);
        s.caption_text = j.at("caption_text").get<std::string>();
        s.caption_embedding =
            parse_embedding(j.at("caption_embedding"), "caption_embedding", context);
        s.labels_embedding = parse_embedding(j.at("labels_embedding"), "labels_embedding", context);
        s.pair_embedding = parse_embedding(j.at("pair_embedding"), "pair_embedding", context);
        for (const auto& e : j.at("visual_evidence")) {
            reject_unknown_keys(e, {"embedding", "labels_embedding", "page_id"},
                                context + ": visual_evidence");
            VisualEvidence ve;
            ve.embedding = parse_embedding(e.at("embedding"), "visual_evidence.embedding", context);
            ve.labels_embedding = parse_embedding(e.at("labels_embedding"),
                                                  "visual_evidence.labels_embedding", context);
            ve.page_id = e.at("page_id").get<std::string>();
            s.visual_evidence.push_back(std::move(ve));
        }
        for (const auto& e : j.at("textual_evidence")) {
            reject_unknown_keys(e, {"embedding", "page_id"}, context + ": textual_evidence");
            TextualEvidence te;
            te.embedding =
                parse_embedding(e.at("embedding"), "textual_evidence.embedding", context);
            te.page_id = e.at("page_id").get<std::string>();
            s.textual_evidence.push_back(std::move(te));
        }
        for (const auto& p : j.at("pages")) {
            reject_unknown_keys(p, {"page_id", "url", "title", "content", "embedding"},
                                context + ": pages");
            PageRecord pr;
            pr.page_id = p.at("page_id").get<std::string>();
            pr.url = p.at("url").get<std::string>();
            pr.title = p.at("title").get<std::string>();
            pr.content = p.at("content").get<std::string>();
            pr.embedding = parse_embedding(p.at("embedding"), "pages.embedding", context);
            s.pages.push_back(std::move(pr));
        }
        s.label = j.at("label").get<int>();
        if (j.contains("image_ref")) s.image_ref = j.at("image_ref").get<std::string>();
    } catch (const json::exception& e) {
        throw Error(context + ": " + e.what());
    }
    return s;
}

ordered_json sample_to_json(const Sample& s) {
    ordered_json j;
    j["sample_id"] = s.sample_id;
    j["image_embedding"] = embedding_to_json(s.image_embedding);
    j["caption_text"] = s.caption_text;
    j["caption_embedding"] = embedding_to_json(s.caption_embedding);
    j["labels_embedding"] = embedding_to_json(s.labels_embedding);
    j["pair_embedding"] = embedding_to_json(s.pair_embedding);
    ordered_json ve = ordered_json::array();
    for (const VisualEvidence& e : s.visual_evidence) {
        ordered_json o;
        o["embedding"] = embedding_to_json(e.embedding);
        o["labels_embedding"] = embedding_to_json(e.labels_embedding);
        o["page_id"] = e.page_id;
        ve.push_back(std::move(o));
    }
    j["visual_evidence"] = std::move(ve);
    ordered_json te = ordered_json::array();
    for (const TextualEvidence& e : s.textual_evidence) {
        ordered_json o;
        o["embedding"] = embedding_to_json(e.embedding);
        o["page_id"] = e.page_id;
        te.push_back(std::move(o));
    }
    j["textual_evidence"] = std::move(te);
    ordered_json pages = ordered_json::array();
    for (const PageRecord& p : s.pages) {
        ordered_json o;
        o["page_id"] = p.page_id;
        o["url"] = p.url;
        o["title"] = p.title;
        o["content"] = p.content;
        o["embedding"] = embedding_to_json(p.embedding);
        pages.push_back(std::move(o));
    }
    j["pages"] = std::move(pages);
    j["label"] = s.label;
    if (s.image_ref) j["image_ref"] = *s.image_ref;
    return j;
}

} // namespace

// ---- archive io ----------------------------------------------------------------

Dataset load_dataset(const std::filesystem::path& dir) {
    std::filesystem::path manifest_path = dir / "manifest.json";
    std::filesystem::path samples_path = dir / "samples.jsonl";
    if (!std::filesystem::exists(manifest_path))
        throw Error("load_dataset: missing " + manifest_path.string());
    if (!std::filesystem::exists(samples_path))
        throw Error("load_dataset: missing " + samples_path.string());

    Dataset ds;
    {
        std::ifstream in(manifest_path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw Error("manifest.json: " + std::string(e.what()));
        }
        reject_unknown_keys(j, {"d_v", "d_t", "d_mm", "split", "sample_count", "format_version"},
                            "manifest.json");
        try {
            ds.manifest.d_v = j.at("d_v").get<int>();
            ds.manifest.d_t = j.at("d_t").get<int>();
            ds.manifest.d_mm = j.at("d_mm").get<int>();
            ds.manifest.split = j.at("split").get<std::string>();
            ds.manifest.sample_count = j.at("sample_count").get<size_t>();
            ds.manifest.format_version = j.at("format_version").get<int>();
        } catch (const json::exception& e) {
            throw Error("manifest.json: " + std::string(e.what()));
        }
        check_manifest(ds.manifest);
    }

    std::ifstream in(samples_path);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::string context = "samples.jsonl line " + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(context + ": malformed record: " + e.what());
        }
        Sample s = sample_from_json(j, context);
        validate_sample(s, ds.manifest, context + " (sample " + s.sample_id + ")");
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.size() != ds.manifest.sample_count)
        throw Error("load_dataset: manifest sample_count " +
                    std::to_string(ds.manifest.sample_count) + " does not match " +
                    std::to_string(ds.samples.size()) + " records");
    return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    check_manifest(dataset.manifest);
    if (dataset.manifest.sample_count != dataset.samples.size())
        throw Error("save_dataset: manifest sample_count does not match sample list");
    std::filesystem::create_directories(dir);

    ordered_json m;
    m["d_v"] = dataset.manifest.d_v;
    m["d_t"] = dataset.manifest.d_t;
    m["d_mm"] = dataset.manifest.d_mm;
    m["split"] = dataset.manifest.split;
    m["sample_count"] = dataset.manifest.sample_count;
    m["format_version"] = dataset.manifest.format_version;
    {
        std::ofstream out(dir / "manifest.json");
        if (!out) throw Error("save_dataset: cannot write " + (dir / "manifest.json").string());
        out << m.dump(2) << "\n";
    }
    std::ofstream out(dir / "samples.jsonl");
    if (!out) throw Error("save_dataset: cannot write " + (dir / "samples.jsonl").string());
    for (const Sample& s : dataset.samples) out << sample_to_json(s).dump() << "\n";
}

// ---- page aggregation ----------------------------------------------------------

std::vector<double> aggregate_page_embedding(
    const std::vector<std::vector<double>>& sentence_embeddings) {
    if (sentence_embeddings.empty())
        throw Error("aggregate_page_embedding: empty sentence list (drop the page upstream)");
    size_t dim = sentence_embeddings.front().size();
    std::vector<double> mean(dim, 0.0);
    for (const auto& v : sentence_embeddings) {
        if (v.size() != dim)
            throw Error("aggregate_page_embedding: sentence embeddings have mixed lengths");
        for (size_t i = 0; i < dim; ++i) mean[i] += v[i];
    }
    for (double& x : mean) x /= static_cast<double>(sentence_embeddings.size());
    return mean;
}

// ---- synthetic generation --------------------------------------------------------

namespace {

std::vector<float> random_unit(Rng& rng, int dim) {
    std::vector<double> v(dim);
    double norm2 = 0.0;
    do {
        norm2 = 0.0;
        for (double& x : v) {
            x = rng.normal();
            norm2 += x * x;
        }
    } while (norm2 < 1e-12);
    double inv = 1.0 / std::sqrt(norm2);
    std::vector<float> out(dim);
    for (int i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] * inv);
    return out;
}

// normalize(c * anchor + (1-c) * random_unit)
std::vector<float> correlated_unit(Rng& rng, const std::vector<float>& anchor, double c) {
    std::vector<float> noise = random_unit(rng, static_cast<int>(anchor.size()));
    std::vector<double> v(anchor.size());
    double norm2 = 0.0;
    for (size_t i = 0; i < anchor.size(); ++i) {
        v[i] = c * anchor[i] + (1.0 - c) * noise[i];
        norm2 += v[i] * v[i];
    }
    if (norm2 < 1e-12) return random_unit(rng, static_cast<int>(anchor.size()));
    double inv = 1.0 / std::sqrt(norm2);
    std::vector<float> out(anchor.size());
    for (size_t i = 0; i < anchor.size(); ++i) out[i] = static_cast<float>(v[i] * inv);
    return out;
}

} // namespace

Dataset generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.manifest.d_v = spec.d_v;
    ds.manifest.d_t = spec.d_t;
    ds.manifest.d_mm = spec.d_mm;
    ds.manifest.split = spec.split;
    ds.manifest.sample_count = spec.n_samples;
    ds.manifest.format_version = 1;

    size_t n_falsified =
        static_cast<size_t>(std::llround(spec.falsified_fraction * static_cast<double>(spec.n_samples)));
    std::vector<int> labels(spec.n_samples, 0);
    for (size_t i = 0; i < n_falsified && i < labels.size(); ++i) labels[i] = 1;
    Rng label_rng(derive_seed(spec.seed, "synth/labels"));
    shuffle(labels, label_rng);

    // Fixed direction that pristine pair embeddings align with.
    Rng dir_rng(derive_seed(spec.seed, "synth/pair-direction"));
    std::vector<float> pair_direction = random_unit(dir_rng, spec.d_mm);

    for (size_t idx = 0; idx < spec.n_samples; ++idx) {
        Rng rng(derive_seed(spec.seed, "synth/sample", idx));
        Sample s;
        s.sample_id = "s" + std::to_string(idx);
        s.label = labels[idx];
        bool pristine = s.label == 0;
        double c = spec.correlation;

        s.image_embedding = random_unit(rng, spec.d_v);
        s.caption_embedding = random_unit(rng, spec.d_t);
        s.labels_embedding = random_unit(rng, spec.d_t);
        s.caption_text = "synthetic caption " + std::to_string(idx);
        s.pair_embedding = pristine ? correlated_unit(rng, pair_direction, c)
                                    : random_unit(rng, spec.d_mm);

        int span = spec.evidence_max - spec.evidence_min + 1;
        int n_vis = spec.evidence_min + static_cast<int>(rng.below(static_cast<uint64_t>(span)));
        int n_txt = spec.evidence_min + static_cast<int>(rng.below(static_cast<uint64_t>(span)));

        auto add_page = [&](const std::vector<float>& topic) {
            PageRecord p;
            size_t k = s.pages.size();
            p.page_id = "p" + std::to_string(k);
            p.url = "https://synth.example/" + s.sample_id + "/" + p.page_id;
            p.title = "Synthetic page " + std::to_string(k) + " of " + s.sample_id;
            p.content = "Paragraph text of synthetic page " + std::to_string(k) +
                        " for sample " + std::to_string(idx) + ".";
            // Pristine pages share the caption topic; falsified pages are unrelated.
            p.embedding = pristine ? correlated_unit(rng, topic, c)
                                   : random_unit(rng, spec.d_t);
            s.pages.push_back(std::move(p));
            return s.pages.back().page_id;
        };

        for (int i = 0; i < n_vis; ++i) {
            VisualEvidence e;
            e.embedding = pristine ? correlated_unit(rng, s.image_embedding, c)
                                   : random_unit(rng, spec.d_v);
            e.labels_embedding = pristine ? correlated_unit(rng, s.labels_embedding, c)
                                          : random_unit(rng, spec.d_t);
            e.page_id = add_page(s.caption_embedding);
            s.visual_evidence.push_back(std::move(e));
        }
        for (int i = 0; i < n_txt; ++i) {
            TextualEvidence e;
            e.embedding = pristine ? correlated_unit(rng, s.caption_embedding, c)
                                   : random_unit(rng, spec.d_t);
            e.page_id = add_page(s.caption_embedding);
            s.textual_evidence.push_back(std::move(e));
        }
        validate_sample(s, ds.manifest);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

} // namespace ooc
