// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "ooc/dataset.hpp"

using namespace ooc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("ooc_dataset_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

std::string minimal_manifest(int count, int d_v = 4, int d_t = 3, int d_mm = 2) {
    nlohmann::ordered_json j;
    j["d_v"] = d_v;
    j["d_t"] = d_t;
    j["d_mm"] = d_mm;
    j["split"] = "train";
    j["sample_count"] = count;
    j["format_version"] = 1;
    return j.dump();
}

std::string minimal_record(const std::string& id = "s0") {
    return R"({"sample_id":")" + id +
           R"(","image_embedding":[1,2,3,4],"caption_text":"c","caption_embedding":[1,2,3],)"
           R"("labels_embedding":[1,2,3],"pair_embedding":[1,2],)"
           R"("visual_evidence":[{"embedding":[4,3,2,1],"labels_embedding":[1,1,1],"page_id":"p0"}],)"
           R"("textual_evidence":[{"embedding":[2,2,2],"page_id":"p0"}],)"
           R"("pages":[{"page_id":"p0","url":"u","title":"t","content":"x","embedding":[0.5,0.5,0.5]}],)"
           R"("label":1})";
}

bool samples_identical(const Sample& a, const Sample& b) {
    if (a.sample_id != b.sample_id || a.caption_text != b.caption_text || a.label != b.label ||
        a.image_ref != b.image_ref)
        return false;
    if (a.image_embedding != b.image_embedding || a.caption_embedding != b.caption_embedding ||
        a.labels_embedding != b.labels_embedding || a.pair_embedding != b.pair_embedding)
        return false;
    if (a.visual_evidence.size() != b.visual_evidence.size() ||
        a.textual_evidence.size() != b.textual_evidence.size() || a.pages.size() != b.pages.size())
        return false;
    for (size_t i = 0; i < a.visual_evidence.size(); ++i) {
        if (a.visual_evidence[i].embedding != b.visual_evidence[i].embedding ||
            a.visual_evidence[i].labels_embedding != b.visual_evidence[i].labels_embedding ||
            a.visual_evidence[i].page_id != b.visual_evidence[i].page_id)
            return false;
    }
    for (size_t i = 0; i < a.textual_evidence.size(); ++i) {
        if (a.textual_evidence[i].embedding != b.textual_evidence[i].embedding ||
            a.textual_evidence[i].page_id != b.textual_evidence[i].page_id)
            return false;
    }
    for (size_t i = 0; i < a.pages.size(); ++i) {
        if (a.pages[i].page_id != b.pages[i].page_id || a.pages[i].url != b.pages[i].url ||
            a.pages[i].title != b.pages[i].title || a.pages[i].content != b.pages[i].content ||
            a.pages[i].embedding != b.pages[i].embedding)
            return false;
    }
    return true;
}

} // namespace

TEST_CASE("aggregate_page_embedding arithmetic mean") {
    std::vector<std::vector<double>> sentences{{1, 2}, {3, 4}};
    std::vector<double> mean = aggregate_page_embedding(sentences);
    CHECK(mean == std::vector<double>{2, 3});

    std::vector<std::vector<double>> single{{0.25, -1.5, 3.75}};
    CHECK(aggregate_page_embedding(single) == single[0]);
}

TEST_CASE("aggregate_page_embedding matches a naive summation oracle") {
    Rng rng(42);
    std::vector<std::vector<double>> sentences;
    for (int i = 0; i < 100; ++i) {
        std::vector<double> v(16);
        for (double& x : v) x = rng.normal();
        sentences.push_back(std::move(v));
    }
    std::vector<double> mean = aggregate_page_embedding(sentences);
    for (size_t j = 0; j < 16; ++j) {
        double acc = 0;
        for (const auto& v : sentences) acc += v[j];
        CHECK(std::fabs(mean[j] - acc / 100.0) < 1e-12);
    }

    // Permutation invariance.
    std::vector<std::vector<double>> shuffled = sentences;
    Rng shuffle_rng(7);
    shuffle(shuffled, shuffle_rng);
    std::vector<double> mean2 = aggregate_page_embedding(shuffled);
    for (size_t j = 0; j < 16; ++j) CHECK(std::fabs(mean[j] - mean2[j]) < 1e-12);
}

TEST_CASE("aggregate_page_embedding rejects empty and ragged input") {
    CHECK_THROWS_AS(aggregate_page_embedding({}), Error);
    CHECK_THROWS_AS(aggregate_page_embedding({{1, 2}, {1}}), Error);
}

TEST_CASE("synthetic generation is deterministic and balanced") {
    SynthSpec spec;
    spec.n_samples = 100;
    spec.seed = 5;
    spec.d_v = 8;
    spec.d_t = 8;
    spec.d_mm = 8;
    Dataset a = generate_synthetic(spec);
    Dataset b = generate_synthetic(spec);
    REQUIRE(a.samples.size() == 100);
    for (size_t i = 0; i < a.samples.size(); ++i)
        CHECK(samples_identical(a.samples[i], b.samples[i]));

    int falsified = 0;
    for (const Sample& s : a.samples) falsified += s.label;
    CHECK(falsified == 50);
}

TEST_CASE("synthetic generation with n=0 gives a valid empty dataset") {
    SynthSpec spec;
    spec.n_samples = 0;
    Dataset ds = generate_synthetic(spec);
    CHECK(ds.samples.empty());
    CHECK(ds.manifest.sample_count == 0);
}

TEST_CASE("synthetic spec validation") {
    SynthSpec spec;
    spec.falsified_fraction = 1.5;
    CHECK_THROWS_AS(generate_synthetic(spec), Error);
    spec.falsified_fraction = 0.5;
    spec.evidence_min = 5;
    spec.evidence_max = 2;
    CHECK_THROWS_AS(generate_synthetic(spec), Error);
    spec.evidence_min = 1;
    spec.correlation = -0.1;
    CHECK_THROWS_AS(generate_synthetic(spec), Error);
}

TEST_CASE("pristine visual evidence is more aligned with the query than falsified") {
    SynthSpec spec;
    spec.n_samples = 500;
    spec.correlation = 0.9;
    spec.seed = 11;
    spec.d_v = 16;
    spec.d_t = 16;
    spec.d_mm = 16;
    Dataset ds = generate_synthetic(spec);

    auto cosine = [](const std::vector<float>& a, const std::vector<float>& b) {
        double dot = 0, na = 0, nb = 0;
        for (size_t i = 0; i < a.size(); ++i) {
            dot += double(a[i]) * b[i];
            na += double(a[i]) * a[i];
            nb += double(b[i]) * b[i];
        }
        return dot / std::sqrt(na * nb);
    };

    double pristine_sum = 0, falsified_sum = 0;
    int pristine_n = 0, falsified_n = 0;
    for (const Sample& s : ds.samples) {
        for (const VisualEvidence& e : s.visual_evidence) {
            double c = cosine(s.image_embedding, e.embedding);
            if (s.label == 0) {
                pristine_sum += c;
                ++pristine_n;
            } else {
                falsified_sum += c;
                ++falsified_n;
            }
        }
    }
    REQUIRE(pristine_n > 0);
    REQUIRE(falsified_n > 0);
    CHECK(pristine_sum / pristine_n > falsified_sum / falsified_n);
}

TEST_CASE("save/load round-trips every float field bit-exactly") {
    SynthSpec spec;
    spec.n_samples = 25;
    spec.seed = 3;
    spec.d_v = 6;
    spec.d_t = 5;
    spec.d_mm = 4;
    Dataset ds = generate_synthetic(spec);
    ds.samples[0].image_ref = "images/s0.png";

    fs::path dir = temp_dir("roundtrip");
    save_dataset(ds, dir);
    Dataset loaded = load_dataset(dir);
    REQUIRE(loaded.samples.size() == ds.samples.size());
    CHECK(loaded.manifest.d_v == ds.manifest.d_v);
    CHECK(loaded.manifest.d_t == ds.manifest.d_t);
    CHECK(loaded.manifest.d_mm == ds.manifest.d_mm);
    CHECK(loaded.manifest.split == ds.manifest.split);
    for (size_t i = 0; i < ds.samples.size(); ++i)
        CHECK(samples_identical(ds.samples[i], loaded.samples[i]));
}

TEST_CASE("empty archive loads to an empty sequence") {
    fs::path dir = temp_dir("empty");
    write_file(dir / "manifest.json", minimal_manifest(0));
    write_file(dir / "samples.jsonl", "");
    Dataset ds = load_dataset(dir);
    CHECK(ds.samples.empty());
    CHECK(ds.manifest.sample_count == 0);
}

TEST_CASE("missing archive files are reported") {
    fs::path dir = temp_dir("missing");
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("manifest.json"), Error);
    write_file(dir / "manifest.json", minimal_manifest(0));
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("samples.jsonl"), Error);
}

TEST_CASE("dimension mismatch reports the offending field and sample") {
    fs::path dir = temp_dir("dims");
    write_file(dir / "manifest.json", minimal_manifest(1, 768));
    write_file(dir / "samples.jsonl", minimal_record("s7") + "\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("image_embedding"), Error);
    try {
        load_dataset(dir);
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("s7") != std::string::npos);
        CHECK(std::string(e.what()).find("768") != std::string::npos);
    }
}

TEST_CASE("malformed records report the line number") {
    fs::path dir = temp_dir("malformed");
    write_file(dir / "manifest.json", minimal_manifest(2));
    write_file(dir / "samples.jsonl", minimal_record("s0") + "\n{not json\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("line 2"), Error);
}

TEST_CASE("dangling page references are rejected") {
    fs::path dir = temp_dir("dangling");
    std::string record = minimal_record();
    size_t pos = record.find(R"("textual_evidence":[{"embedding":[2,2,2],"page_id":"p0"}])");
    REQUIRE(pos != std::string::npos);
    record.replace(pos, std::string(R"("textual_evidence":[{"embedding":[2,2,2],"page_id":"p0"}])").size(),
                   R"("textual_evidence":[{"embedding":[2,2,2],"page_id":"ghost"}])");
    write_file(dir / "manifest.json", minimal_manifest(1));
    write_file(dir / "samples.jsonl", record + "\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("ghost"), Error);
}

TEST_CASE("unknown keys are rejected in manifest and records") {
    fs::path dir = temp_dir("unknown");
    std::string manifest = minimal_manifest(1);
    manifest.insert(manifest.size() - 1, R"(,"surprise":1)");
    write_file(dir / "manifest.json", manifest);
    write_file(dir / "samples.jsonl", minimal_record() + "\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("surprise"), Error);

    write_file(dir / "manifest.json", minimal_manifest(1));
    std::string record = minimal_record();
    record.insert(record.size() - 1, R"(,"extra":true)");
    write_file(dir / "samples.jsonl", record + "\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("extra"), Error);
}

TEST_CASE("label outside {0,1} is rejected") {
    fs::path dir = temp_dir("badlabel");
    std::string record = minimal_record();
    size_t pos = record.rfind(R"("label":1)");
    record.replace(pos, 9, R"("label":2)");
    write_file(dir / "manifest.json", minimal_manifest(1));
    write_file(dir / "samples.jsonl", record + "\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("label"), Error);
}

TEST_CASE("duplicate page ids are rejected") {
    fs::path dir = temp_dir("duppage");
    std::string record = minimal_record();
    std::string pages = R"("pages":[{"page_id":"p0","url":"u","title":"t","content":"x","embedding":[0.5,0.5,0.5]}])";
    std::string dup =
        R"("pages":[{"page_id":"p0","url":"u","title":"t","content":"x","embedding":[0.5,0.5,0.5]},)"
        R"({"page_id":"p0","url":"v","title":"t2","content":"y","embedding":[0.1,0.1,0.1]}])";
    size_t pos = record.find(pages);
    REQUIRE(pos != std::string::npos);
    record.replace(pos, pages.size(), dup);
    write_file(dir / "manifest.json", minimal_manifest(1));
    write_file(dir / "samples.jsonl", record + "\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("duplicate"), Error);
}

TEST_CASE("sample_count mismatch is rejected") {
    fs::path dir = temp_dir("count");
    write_file(dir / "manifest.json", minimal_manifest(2));
    write_file(dir / "samples.jsonl", minimal_record() + "\n");
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("sample_count"), Error);
}

TEST_CASE("manifest validation rejects bad dims, splits and versions") {
    fs::path dir = temp_dir("manifest");
    write_file(dir / "samples.jsonl", "");

    nlohmann::ordered_json j = nlohmann::ordered_json::parse(minimal_manifest(0));
    j["d_v"] = 0;
    write_file(dir / "manifest.json", j.dump());
    CHECK_THROWS_AS(load_dataset(dir), Error);

    j = nlohmann::ordered_json::parse(minimal_manifest(0));
    j["split"] = "dev";
    write_file(dir / "manifest.json", j.dump());
    CHECK_THROWS_AS(load_dataset(dir), Error);

    j = nlohmann::ordered_json::parse(minimal_manifest(0));
    j["format_version"] = 9;
    write_file(dir / "manifest.json", j.dump());
    CHECK_THROWS_WITH_AS(load_dataset(dir), doctest::Contains("format_version"), Error);
}

TEST_CASE("image_ref is optional and preserved") {
    fs::path dir = temp_dir("imageref");
    std::string record = minimal_record();
    record.insert(record.size() - 1, R"(,"image_ref":"img/x.png")");
    write_file(dir / "manifest.json", minimal_manifest(1));
    write_file(dir / "samples.jsonl", record + "\n");
    Dataset ds = load_dataset(dir);
    REQUIRE(ds.samples.size() == 1);
    REQUIRE(ds.samples[0].image_ref.has_value());
    CHECK(*ds.samples[0].image_ref == "img/x.png");
}

TEST_CASE("evidence lists may be empty") {
    SynthSpec spec;
    spec.n_samples = 4;
    spec.evidence_min = 0;
    spec.evidence_max = 0;
    spec.d_v = 4;
    spec.d_t = 4;
    spec.d_mm = 4;
    Dataset ds = generate_synthetic(spec);
    for (const Sample& s : ds.samples) {
        CHECK(s.visual_evidence.empty());
        CHECK(s.textual_evidence.empty());
        CHECK(s.pages.empty());
    }
    fs::path dir = temp_dir("noevidence");
    save_dataset(ds, dir);
    CHECK(load_dataset(dir).samples.size() == 4);
}
