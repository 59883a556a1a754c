// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ooc/common.hpp"

namespace ooc {

/// One retrieved source page. The embedding is the mean of the page's
/// sentence embeddings, computed upstream.
struct PageRecord {
    std::string page_id;
    std::string url;
    std::string title;
    std::string content;
    std::vector<float> embedding; // length d_t
};

/// Image retrieved by direct search (caption as query), plus the label
/// embedding of that image.
struct VisualEvidence {
    std::vector<float> embedding;        // length d_v
    std::vector<float> labels_embedding; // length d_t
    std::string page_id;
};

/// Caption/title retrieved by inverse search (image as query).
struct TextualEvidence {
    std::vector<float> embedding; // length d_t
    std::string page_id;
};

/// One query pair with its retrieved evidence. All embeddings arrive
/// precomputed; the ground-truth label is 1 for falsified, 0 for pristine.
struct Sample {
    std::string sample_id;
    std::vector<float> image_embedding;   // d_v
    std::string caption_text;
    std::vector<float> caption_embedding; // d_t
    std::vector<float> labels_embedding;  // d_t
    std::vector<float> pair_embedding;    // d_mm
    std::vector<VisualEvidence> visual_evidence;
    std::vector<TextualEvidence> textual_evidence;
    std::vector<PageRecord> pages;
    int label = 0;
    std::optional<std::string> image_ref;

    /// Index of the page with the given id, or -1.
    int page_index(const std::string& id) const;
};

struct DatasetManifest {
    int d_v = 0;
    int d_t = 0;
    int d_mm = 0;
    std::string split; // train | validation | test
    size_t sample_count = 0;
    int format_version = 1;
};

struct SynthSpec {
    size_t n_samples = 0;
    double falsified_fraction = 0.5;
    int d_v = 32;
    int d_t = 32;
    int d_mm = 64;
    int evidence_min = 2; // per evidence kind
    int evidence_max = 5;
    double correlation = 0.9;
    uint64_t seed = 0;
    std::string split = "train";

    void validate() const;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<Sample> samples;
};

/// Validates a sample against manifest dimensions. `context` prefixes error
/// messages (e.g. "samples.jsonl line 7").
void validate_sample(const Sample& sample, const DatasetManifest& manifest,
                     const std::string& context = {});

/// Reads `manifest.json` + `samples.jsonl` from an archive directory.
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes an archive directory (creates it if needed).
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Element-wise mean of a non-empty list of equal-length vectors.
std::vector<double> aggregate_page_embedding(
    const std::vector<std::vector<double>>& sentence_embeddings);

/// Deterministic synthetic dataset. Pristine samples draw evidence as
/// normalize(c * query + (1-c) * noise); falsified samples draw evidence
/// independently of the query. The pair embedding carries the same structure
/// against a fixed per-dataset direction so the multimodal block is learnable.
Dataset generate_synthetic(const SynthSpec& spec);

} // namespace ooc
