// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ooc/model.hpp"
#include "ooc/ops.hpp"
#include "testutil.hpp"

using namespace ooc;
using namespace ooc::test;

namespace {

// ---- naive attention oracle: explicit loops, no shared code path ----

struct OracleResult {
    Matrix output;
    Matrix avg_weights;
};

Matrix oracle_affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y(x.rows(), w.cols());
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < w.cols(); ++j) {
            double acc = static_cast<double>(b(0, j));
            for (int k = 0; k < x.cols(); ++k)
                acc += static_cast<double>(x(i, k)) * static_cast<double>(w(k, j));
            y(i, j) = Scalar(acc);
        }
    return y;
}

OracleResult oracle_attention(const Matrix& query, const Matrix& keys, const Matrix& values,
                              const AttentionBlockParams& p, int n_heads) {
    int d = p.dim();
    int dh = d / n_heads;
    Matrix q = oracle_affine(query, p.w_q.value, p.b_q.value);
    Matrix k = oracle_affine(keys, p.w_k.value, p.b_k.value);
    Matrix v = oracle_affine(values, p.w_v.value, p.b_v.value);

    int m = query.rows();
    int n = keys.rows();
    Matrix concat(m, d);
    Matrix avg(m, n);
    for (int h = 0; h < n_heads; ++h) {
        for (int i = 0; i < m; ++i) {
            std::vector<double> logits(n);
            double mx = -1e300;
            for (int j = 0; j < n; ++j) {
                double dot = 0;
                for (int c = 0; c < dh; ++c)
                    dot += static_cast<double>(q(i, h * dh + c)) *
                           static_cast<double>(k(j, h * dh + c));
                logits[j] = dot / std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, logits[j]);
            }
            double z = 0;
            for (int j = 0; j < n; ++j) z += std::exp(logits[j] - mx);
            for (int j = 0; j < n; ++j) {
                double w = std::exp(logits[j] - mx) / z;
                avg(i, j) += Scalar(w / n_heads);
                for (int c = 0; c < dh; ++c)
                    concat(i, h * dh + c) += Scalar(w * static_cast<double>(v(j, h * dh + c)));
            }
        }
    }
    OracleResult res;
    res.output = oracle_affine(concat, p.w_o.value, p.b_o.value);
    res.avg_weights = avg;
    return res;
}

double oracle_cosine(const Matrix& a, const Matrix& b) {
    double dot = 0, na = 0, nb = 0;
    for (int j = 0; j < a.cols(); ++j) {
        dot += static_cast<double>(a(0, j)) * static_cast<double>(b(0, j));
        na += static_cast<double>(a(0, j)) * static_cast<double>(a(0, j));
        nb += static_cast<double>(b(0, j)) * static_cast<double>(b(0, j));
    }
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

AttentionBlockParams identity_block(int d) {
    AttentionBlockParams p;
    p.w_q = ParamTensor("w_q", Matrix::identity(d));
    p.b_q = ParamTensor("b_q", Matrix(1, d));
    p.w_k = ParamTensor("w_k", Matrix::identity(d));
    p.b_k = ParamTensor("b_k", Matrix(1, d));
    p.w_v = ParamTensor("w_v", Matrix::identity(d));
    p.b_v = ParamTensor("b_v", Matrix(1, d));
    p.w_o = ParamTensor("w_o", Matrix::identity(d));
    p.b_o = ParamTensor("b_o", Matrix(1, d));
    return p;
}

ModelConfig tiny_config() {
    ModelConfig config;
    config.d_v = 8;
    config.d_t = 8;
    config.d_mm = 8;
    config.n_heads = 2;
    config.hidden_mm = 16;
    return config;
}

/// Synthetic sample with the given evidence counts, dimensioned for `config`.
Sample make_sample(const ModelConfig& config, uint64_t seed, int n_vis, int n_txt, int n_pages,
                   int label = 0) {
    Rng rng(seed);
    auto unit = [&](int d) {
        std::vector<float> v(d);
        double norm = 0;
        for (float& x : v) {
            x = static_cast<float>(rng.normal());
            norm += double(x) * x;
        }
        norm = std::sqrt(norm);
        for (float& x : v) x = static_cast<float>(x / norm);
        return v;
    };
    Sample s;
    s.sample_id = "fixture" + std::to_string(seed);
    s.image_embedding = unit(config.d_v);
    s.caption_text = "fixture caption";
    s.caption_embedding = unit(config.d_t);
    s.labels_embedding = unit(config.d_t);
    s.pair_embedding = unit(config.d_mm);
    s.label = label;
    for (int i = 0; i < n_pages; ++i) {
        PageRecord p;
        p.page_id = "p" + std::to_string(i);
        p.url = "https://example.org/" + p.page_id;
        p.title = "title " + std::to_string(i);
        p.content = "content " + std::to_string(i);
        p.embedding = unit(config.d_t);
        s.pages.push_back(std::move(p));
    }
    for (int i = 0; i < n_vis; ++i) {
        VisualEvidence e;
        e.embedding = unit(config.d_v);
        e.labels_embedding = unit(config.d_t);
        e.page_id = "p" + std::to_string(i % std::max(1, n_pages));
        s.visual_evidence.push_back(std::move(e));
    }
    for (int i = 0; i < n_txt; ++i) {
        TextualEvidence e;
        e.embedding = unit(config.d_t);
        e.page_id = "p" + std::to_string((n_vis + i) % std::max(1, n_pages));
        s.textual_evidence.push_back(std::move(e));
    }
    return s;
}

} // namespace

// ---- parameter counting ------------------------------------------------------

TEST_CASE("count_parameters reproduces the twelve lightweight table rows") {
    struct Row {
        int d_t;
        bool drop_labels, drop_pages;
        double millions;
    };
    // versions 13..24: d_v = 768, d_mm = 4096 throughout
    const Row rows[] = {
        {768, false, false, 10.5}, {768, true, false, 8.1}, {768, false, true, 8.1},
        {768, true, true, 5.8},    {384, false, false, 5.2}, {384, true, false, 4.6},
        {384, false, true, 4.6},   {384, true, true, 4.0},  {768, false, false, 10.5},
        {768, true, false, 8.1},   {768, false, true, 8.1}, {768, true, true, 5.8},
    };
    for (const Row& row : rows) {
        ModelConfig config;
        config.d_v = 768;
        config.d_t = row.d_t;
        config.d_mm = 4096;
        config.use_label_block = !row.drop_labels;
        config.use_page_block = !row.drop_pages;
        double millions = std::round(double(count_parameters(config)) / 1e6 * 10.0) / 10.0;
        CAPTURE(row.d_t);
        CAPTURE(row.drop_labels);
        CAPTURE(row.drop_pages);
        CHECK(millions == doctest::Approx(row.millions));
    }
}

TEST_CASE("count_parameters exact spot values") {
    ModelConfig v13;
    v13.d_v = 768;
    v13.d_t = 768;
    v13.d_mm = 4096;
    CHECK(count_parameters(v13) == 10498577);

    ModelConfig v17 = v13;
    v17.d_t = 384;
    CHECK(count_parameters(v17) == 5185553);

    ModelConfig v20 = v17;
    v20.use_label_block = false;
    v20.use_page_block = false;
    CHECK(count_parameters(v20) == 4002827);
}

TEST_CASE("instantiated parameters match the formula for every block layout") {
    for (bool labels : {false, true}) {
        for (bool pages : {false, true}) {
            ModelConfig config = tiny_config();
            config.use_label_block = labels;
            config.use_page_block = pages;
            ModelParams params = ModelParams::init(config, 1);
            CHECK(params.parameter_count() == count_parameters(config));
        }
    }
}

TEST_CASE("dropping a block changes the count by exactly that block plus head width") {
    ModelConfig full = tiny_config();
    ModelConfig no_labels = full;
    no_labels.use_label_block = false;
    long long block = 4LL * (full.d_t * full.d_t + full.d_t);
    // one fused slot fewer: batchnorm affine loses 2, head linear loses 1
    CHECK(count_parameters(full) - count_parameters(no_labels) == block + 3);
}

TEST_CASE("model config validation") {
    ModelConfig config = tiny_config();
    config.n_heads = 3; // does not divide 8
    CHECK_THROWS_AS(config.validate(), Error);
    config = tiny_config();
    config.threshold = 1.0;
    CHECK_THROWS_AS(config.validate(), Error);
    config = tiny_config();
    config.dropout_p = 1.0;
    CHECK_THROWS_AS(config.validate(), Error);
}

// ---- multi-head attention ---------------------------------------------------

TEST_CASE("single key attention weight is one") {
    ModelConfig config = tiny_config();
    AttentionBlockParams p = AttentionBlockParams::init("b", 8, 3);
    Rng rng(2);
    Matrix query = random_matrix(3, 8, rng);
    Matrix key = random_matrix(1, 8, rng);
    MhaResult res = multi_head_attention(query, key, key, p, config.n_heads);
    REQUIRE(res.avg_weights.rows() == 3);
    REQUIRE(res.avg_weights.cols() == 1);
    for (int i = 0; i < 3; ++i) CHECK(res.avg_weights(i, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("identity projections over identical keys reproduce the key vector") {
    AttentionBlockParams p = identity_block(8);
    Rng rng(3);
    Matrix v = random_matrix(1, 8, rng);
    Matrix keys(4, 8);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 8; ++j) keys(i, j) = v(0, j);
    Matrix query = random_matrix(2, 8, rng);
    MhaResult res = multi_head_attention(query, keys, keys, p, 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 8; ++j)
            CHECK(res.output(i, j) == doctest::Approx(double(v(0, j))).epsilon(1e-12));
}

TEST_CASE("attention rejects an empty key set") {
    AttentionBlockParams p = identity_block(8);
    Matrix query(1, 8);
    Matrix keys(0, 8);
    CHECK_THROWS_WITH_AS(multi_head_attention(query, keys, keys, p, 2),
                         doctest::Contains("empty key set"), Error);
}

TEST_CASE("attention matches the naive loop oracle on randomized instances") {
    for (uint64_t seed = 0; seed < 60; ++seed) {
        Rng rng(derive_seed(seed, "mha-oracle"));
        const int heads_options[] = {1, 2, 4};
        int n_heads = heads_options[rng.below(3)];
        int d = n_heads * (1 + static_cast<int>(rng.below(static_cast<uint64_t>(16 / n_heads))));
        int m = 1 + static_cast<int>(rng.below(4));
        int n = 1 + static_cast<int>(rng.below(8));

        AttentionBlockParams p = AttentionBlockParams::init("b", d, derive_seed(seed, "params"));
        Matrix query = random_matrix(m, d, rng);
        Matrix keys = random_matrix(n, d, rng);
        Matrix values = random_matrix(n, d, rng);

        MhaResult res = multi_head_attention(query, keys, values, p, n_heads);
        OracleResult oracle = oracle_attention(query, keys, values, p, n_heads);
        for (size_t i = 0; i < res.output.size(); ++i)
            CHECK(std::fabs(double(res.output.values()[i] - oracle.output.values()[i])) < 1e-10);
        for (size_t i = 0; i < res.avg_weights.size(); ++i)
            CHECK(std::fabs(double(res.avg_weights.values()[i] - oracle.avg_weights.values()[i])) <
                  1e-10);
    }
}

TEST_CASE("attention rows are a probability distribution") {
    for (uint64_t seed = 0; seed < 30; ++seed) {
        Rng rng(seed);
        AttentionBlockParams p = AttentionBlockParams::init("b", 8, seed);
        Matrix query = random_matrix(2, 8, rng);
        Matrix keys = random_matrix(5, 8, rng);
        MhaResult res = multi_head_attention(query, keys, keys, p, 2);
        for (int i = 0; i < res.avg_weights.rows(); ++i) {
            double sum = 0;
            for (int j = 0; j < res.avg_weights.cols(); ++j) {
                CHECK(res.avg_weights(i, j) >= Scalar(0));
                sum += double(res.avg_weights(i, j));
            }
            CHECK(std::fabs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("attention backward matches finite differences for params and inputs") {
    Rng rng(41);
    AttentionBlockParams p = AttentionBlockParams::init("b", 6, 17);
    Matrix query = random_matrix(2, 6, rng);
    Matrix keys = random_matrix(3, 6, rng);
    Matrix values = random_matrix(3, 6, rng);
    Matrix u = random_matrix(2, 6, rng);

    auto loss = [&] {
        MhaResult res = multi_head_attention(query, keys, values, p, 2);
        double acc = 0;
        for (size_t i = 0; i < res.output.size(); ++i)
            acc += double(res.output.values()[i]) * double(u.values()[i]);
        return acc;
    };

    MhaCache cache;
    multi_head_attention(query, keys, values, p, 2, &cache);
    p.for_each([](ParamTensor& t) { t.zero_grad(); });
    MhaInputGrads input_grads = multi_head_attention_backward(u, cache, p, 2);

    p.for_each([&](ParamTensor& t) {
        CAPTURE(t.name);
        CHECK(max_grad_err(loss, t.value, t.grad) < kGradTol);
    });
    CHECK(max_grad_err(loss, query, input_grads.d_query) < kGradTol);
    CHECK(max_grad_err(loss, keys, input_grads.d_keys) < kGradTol);
    CHECK(max_grad_err(loss, values, input_grads.d_values) < kGradTol);
}

TEST_CASE("permutation of the evidence permutes weights and preserves the score") {
    ModelConfig config = tiny_config();
    AttentionBlockParams p = AttentionBlockParams::init("b", 8, 23);
    Rng rng(5);
    Matrix query = random_unit_row(8, rng);
    Matrix evidence = random_matrix(5, 8, rng);

    BlockEval base = image_consistency(query, evidence, p, config.n_heads);

    std::vector<int> perm{3, 0, 4, 1, 2};
    Matrix permuted(5, 8);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 8; ++j) permuted(i, j) = evidence(perm[i], j);
    BlockEval shuffled = image_consistency(query, permuted, p, config.n_heads);

    REQUIRE(base.score.has_value());
    REQUIRE(shuffled.score.has_value());
    CHECK(std::fabs(double(*base.score - *shuffled.score)) < 1e-10);
    for (int i = 0; i < 5; ++i)
        CHECK(std::fabs(double(shuffled.avg_weights(0, i) - base.avg_weights(0, perm[i]))) < 1e-10);
}

// ---- consistency blocks -------------------------------------------------------

TEST_CASE("image consistency of the query with itself is one") {
    AttentionBlockParams p = identity_block(8);
    Rng rng(6);
    Matrix query = random_unit_row(8, rng);
    BlockEval eval = image_consistency(query, query, p, 2);
    REQUIRE(eval.score.has_value());
    CHECK(*eval.score == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("missing evidence yields an absent score and empty weights") {
    AttentionBlockParams p = identity_block(8);
    Matrix query(1, 8);
    query(0, 0) = Scalar(1);
    BlockEval eval = image_consistency(query, Matrix(0, 8), p, 2);
    CHECK_FALSE(eval.score.has_value());
    CHECK(eval.avg_weights.empty());
}

TEST_CASE("cosine blocks match the composed oracle") {
    for (uint64_t seed = 0; seed < 25; ++seed) {
        Rng rng(derive_seed(seed, "block-oracle"));
        AttentionBlockParams p = AttentionBlockParams::init("b", 8, derive_seed(seed, "bp"));
        Matrix query = random_unit_row(8, rng);
        Matrix evidence = random_matrix(4, 8, rng);
        BlockEval eval = caption_consistency(query, evidence, p, 2);
        OracleResult oracle = oracle_attention(query, evidence, evidence, p, 2);
        REQUIRE(eval.score.has_value());
        CHECK(std::fabs(double(*eval.score) - oracle_cosine(query, oracle.output)) < 1e-10);
    }
}

TEST_CASE("page block on a single page") {
    AttentionBlockParams p = identity_block(8);
    Rng rng(7);
    Matrix page = random_unit_row(8, rng);
    PageBlockEval eval = page_consistency(page, p, 2);
    REQUIRE(eval.score.has_value());
    CHECK(*eval.score == doctest::Approx(1.0).epsilon(1e-12));
    REQUIRE(eval.page_importance.size() == 1);
    CHECK(eval.page_importance[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("page block on identical pages gives score one and uniform importance") {
    AttentionBlockParams p = identity_block(8);
    Rng rng(8);
    Matrix row = random_unit_row(8, rng);
    Matrix pages(3, 8);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 8; ++j) pages(i, j) = row(0, j);
    PageBlockEval eval = page_consistency(pages, p, 2);
    REQUIRE(eval.score.has_value());
    CHECK(*eval.score == doctest::Approx(1.0).epsilon(1e-12));
    for (Scalar imp : eval.page_importance)
        CHECK(imp == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("page block matches the per-row oracle") {
    Rng rng(9);
    AttentionBlockParams p = AttentionBlockParams::init("b", 8, 31);
    Matrix pages = random_matrix(3, 8, rng);
    PageBlockEval eval = page_consistency(pages, p, 2);
    OracleResult oracle = oracle_attention(pages, pages, pages, p, 2);
    double acc = 0;
    for (int l = 0; l < 3; ++l) {
        Matrix page_row(1, 8);
        Matrix proj_row(1, 8);
        for (int j = 0; j < 8; ++j) {
            page_row(0, j) = pages(l, j);
            proj_row(0, j) = oracle.output(l, j);
        }
        acc += oracle_cosine(page_row, proj_row);
    }
    REQUIRE(eval.score.has_value());
    CHECK(std::fabs(double(*eval.score) - acc / 3.0) < 1e-10);
    // importance is the column mean of the head-averaged weights
    for (int j = 0; j < 3; ++j) {
        double col = 0;
        for (int i = 0; i < 3; ++i) col += double(oracle.avg_weights(i, j));
        CHECK(std::fabs(double(eval.page_importance[j]) - col / 3.0) < 1e-10);
    }
}

TEST_CASE("empty page set yields an absent page score") {
    AttentionBlockParams p = identity_block(8);
    PageBlockEval eval = page_consistency(Matrix(0, 8), p, 2);
    CHECK_FALSE(eval.score.has_value());
    CHECK(eval.page_importance.empty());
}

TEST_CASE("multimodal block value cases") {
    ModelConfig config = tiny_config();
    ModelParams params = ModelParams::init(config, 3);

    // all-zero weights/biases -> 0
    params.mm_inner_w.value.set_zero();
    params.mm_inner_b.value.set_zero();
    params.mm_outer_w.value.set_zero();
    params.mm_outer_b.value.set_zero();
    Rng rng(10);
    Matrix pair = random_matrix(1, config.d_mm, rng);
    CHECK(multimodal_consistency(pair, params, config.dropout_p, Mode::Eval, 0) == Scalar(0));

    // eval mode is deterministic regardless of seed
    params = ModelParams::init(config, 4);
    Scalar a = multimodal_consistency(pair, params, config.dropout_p, Mode::Eval, 1);
    Scalar b = multimodal_consistency(pair, params, config.dropout_p, Mode::Eval, 999);
    CHECK(a == b);

    // eval mode matches a direct two-layer evaluation
    Matrix hidden = oracle_affine(pair, params.mm_inner_w.value, params.mm_inner_b.value);
    for (Scalar& v : hidden.values())
        if (v < Scalar(0)) v = Scalar(0);
    Matrix out = oracle_affine(hidden, params.mm_outer_w.value, params.mm_outer_b.value);
    CHECK(std::fabs(double(a - out(0, 0))) < 1e-10);
}

// ---- forward ------------------------------------------------------------------

TEST_CASE("forward with both optional blocks dropped has a 3-entry score vector") {
    ModelConfig config = tiny_config();
    config.use_label_block = false;
    config.use_page_block = false;
    ModelParams params = ModelParams::init(config, 5);
    Sample sample = make_sample(config, 1, 2, 2, 2);
    ForwardResult res = forward(sample, params, config);
    CHECK(res.scores.fused.size() == 3);
    CHECK_FALSE(res.scores.s_labels.has_value());
    CHECK_FALSE(res.scores.s_pages.has_value());
}

TEST_CASE("all blocks selecting one source page dedupes the attended list") {
    ModelConfig config = tiny_config();
    ModelParams params = ModelParams::init(config, 6);
    Sample sample = make_sample(config, 2, 1, 1, 1); // everything lives on page p0
    ForwardResult res = forward(sample, params, config);
    REQUIRE(res.ranking.attended_page_ids.size() == 1);
    CHECK(res.ranking.attended_page_ids[0] == "p0");
}

TEST_CASE("forward golden fixture matches a straight-line oracle evaluation") {
    ModelConfig config = tiny_config();
    ModelParams params = ModelParams::init(config, 77);
    Sample sample = make_sample(config, 99, 3, 2, 4);

    ForwardResult res = forward(sample, params, config);

    // Straight-line evaluation with independent loop-based pieces.
    auto to_row = [](const std::vector<float>& v) {
        Matrix m(1, static_cast<int>(v.size()));
        for (size_t i = 0; i < v.size(); ++i) m(0, static_cast<int>(i)) = Scalar(v[i]);
        return m;
    };
    auto stack = [&](int rows, int cols, auto getter) {
        Matrix m(rows, cols);
        for (int i = 0; i < rows; ++i) {
            std::vector<float> v = getter(i);
            for (int j = 0; j < cols; ++j) m(i, j) = Scalar(v[j]);
        }
        return m;
    };

    Matrix iq = to_row(sample.image_embedding);
    Matrix ie = stack(3, config.d_v, [&](int i) { return sample.visual_evidence[i].embedding; });
    double s_images = oracle_cosine(iq, oracle_attention(iq, ie, ie, params.image_block, 2).output);

    Matrix lq = to_row(sample.labels_embedding);
    Matrix le =
        stack(3, config.d_t, [&](int i) { return sample.visual_evidence[i].labels_embedding; });
    double s_labels = oracle_cosine(lq, oracle_attention(lq, le, le, *params.label_block, 2).output);

    Matrix cq = to_row(sample.caption_embedding);
    Matrix ce = stack(2, config.d_t, [&](int i) { return sample.textual_evidence[i].embedding; });
    double s_cpt = oracle_cosine(cq, oracle_attention(cq, ce, ce, params.caption_block, 2).output);

    Matrix pe = stack(4, config.d_t, [&](int i) { return sample.pages[i].embedding; });
    OracleResult page_proj = oracle_attention(pe, pe, pe, *params.page_block, 2);
    double s_pages = 0;
    for (int l = 0; l < 4; ++l) {
        Matrix a(1, 8), b(1, 8);
        for (int j = 0; j < 8; ++j) {
            a(0, j) = pe(l, j);
            b(0, j) = page_proj.output(l, j);
        }
        s_pages += oracle_cosine(a, b);
    }
    s_pages /= 4.0;

    Matrix pair = to_row(sample.pair_embedding);
    Matrix hidden = oracle_affine(pair, params.mm_inner_w.value, params.mm_inner_b.value);
    for (Scalar& v : hidden.values())
        if (v < Scalar(0)) v = Scalar(0);
    double s_logit = double(oracle_affine(hidden, params.mm_outer_w.value, params.mm_outer_b.value)(0, 0));

    REQUIRE(res.scores.s_images.has_value());
    REQUIRE(res.scores.s_labels.has_value());
    REQUIRE(res.scores.s_cpt.has_value());
    REQUIRE(res.scores.s_pages.has_value());
    CHECK(std::fabs(double(*res.scores.s_images) - s_images) < 1e-10);
    CHECK(std::fabs(double(*res.scores.s_labels) - s_labels) < 1e-10);
    CHECK(std::fabs(double(*res.scores.s_cpt) - s_cpt) < 1e-10);
    CHECK(std::fabs(double(*res.scores.s_pages) - s_pages) < 1e-10);
    CHECK(std::fabs(double(res.scores.s_logit) - s_logit) < 1e-10);

    // Head: eval-mode batchnorm (fresh running stats), linear, sigmoid.
    double fused[5] = {s_images, s_labels, s_cpt, s_pages, s_logit};
    double z = double(params.head_b.value(0, 0));
    for (int j = 0; j < 5; ++j) {
        double x_hat = (fused[j] - double(params.head_bn_state.running_mean(0, j))) /
                       std::sqrt(double(params.head_bn_state.running_var(0, j)) + 1e-5);
        double y = double(params.head_gamma.value(0, j)) * x_hat +
                   double(params.head_beta.value(0, j));
        z += y * double(params.head_w.value(j, 0));
    }
    double p_class = 1.0 / (1.0 + std::exp(-z));
    CHECK(std::fabs(double(res.prediction.p_class) - p_class) < 1e-10);
    CHECK(res.prediction.verdict ==
          (p_class >= config.threshold ? Verdict::Falsified : Verdict::Pristine));
}

TEST_CASE("forward is pure given params, mode and seed") {
    ModelConfig config = tiny_config();
    ModelParams params = ModelParams::init(config, 12);
    Sample sample = make_sample(config, 3, 2, 2, 3);
    ForwardResult a = forward(sample, params, config);
    ForwardResult b = forward(sample, params, config);
    CHECK(a.prediction.p_class == b.prediction.p_class);
    CHECK(a.scores.fused == b.scores.fused);
}

TEST_CASE("train-mode single-sample forward hits the batchnorm batch-size error") {
    ModelConfig config = tiny_config();
    ModelParams params = ModelParams::init(config, 13);
    Sample sample = make_sample(config, 4, 1, 1, 1);
    CHECK_THROWS_WITH_AS(forward(sample, params, config, Mode::Train, 1),
                         doctest::Contains("size >= 2"), Error);
}

TEST_CASE("sample/config dimension mismatches are reported") {
    ModelConfig config = tiny_config();
    ModelParams params = ModelParams::init(config, 14);
    Sample sample = make_sample(config, 5, 1, 1, 1);
    sample.image_embedding.resize(5);
    CHECK_THROWS_WITH_AS(forward(sample, params, config),
                         doctest::Contains("image_embedding"), Error);
}

TEST_CASE("score ranges hold over 1000 random samples") {
    ModelConfig config = tiny_config();
    for (uint64_t model_seed = 0; model_seed < 10; ++model_seed) {
        ModelParams params = ModelParams::init(config, derive_seed(model_seed, "range-model"));
        for (uint64_t i = 0; i < 100; ++i) {
            Rng rng(derive_seed(model_seed * 1000 + i, "range-sample"));
            Sample sample = make_sample(config, rng.next_u64(), 1 + int(rng.below(4)),
                                        int(rng.below(4)), 1 + int(rng.below(5)),
                                        int(rng.below(2)));
            ForwardResult res = forward(sample, params, config);
            auto bounded = [](const std::optional<Scalar>& s) {
                if (s) {
                    CHECK(*s >= Scalar(-1));
                    CHECK(*s <= Scalar(1));
                }
            };
            bounded(res.scores.s_images);
            bounded(res.scores.s_labels);
            bounded(res.scores.s_cpt);
            bounded(res.scores.s_pages);
            CHECK(res.prediction.p_class >= Scalar(0));
            CHECK(res.prediction.p_class <= Scalar(1));
        }
    }
}

TEST_CASE("sigmoid head is monotone in the logit") {
    // Increasing the head bias strictly increases p_class.
    ModelConfig config = tiny_config();
    ModelParams params = ModelParams::init(config, 15);
    Sample sample = make_sample(config, 6, 2, 2, 2);
    Scalar base = forward(sample, params, config).prediction.p_class;
    params.head_b.value(0, 0) += Scalar(1);
    Scalar raised = forward(sample, params, config).prediction.p_class;
    CHECK(raised > base);
}

TEST_CASE("ablating a block leaves the other scores untouched") {
    ModelConfig full = tiny_config();
    ModelParams params_full = ModelParams::init(full, 21);

    ModelConfig ablated = full;
    ablated.use_label_block = false;
    ModelParams params_ablated = ModelParams::init(ablated, 21);

    Sample sample = make_sample(full, 8, 3, 3, 3);
    ForwardResult a = forward(sample, params_full, full);
    ForwardResult b = forward(sample, params_ablated, ablated);

    CHECK(a.scores.fused.size() == 5);
    CHECK(b.scores.fused.size() == 4);
    CHECK_FALSE(b.scores.s_labels.has_value());
    // Per-tensor seeding makes shared blocks identical across layouts.
    CHECK(*a.scores.s_images == *b.scores.s_images);
    CHECK(*a.scores.s_cpt == *b.scores.s_cpt);
    CHECK(*a.scores.s_pages == *b.scores.s_pages);
    CHECK(a.scores.s_logit == b.scores.s_logit);
}

TEST_CASE("every block layout is constructible and trainable end to end") {
    for (bool labels : {false, true}) {
        for (bool pages : {false, true}) {
            ModelConfig config = tiny_config();
            config.use_label_block = labels;
            config.use_page_block = pages;
            ModelParams params = ModelParams::init(config, 31);

            std::vector<Sample> samples;
            std::vector<const Sample*> batch;
            for (uint64_t i = 0; i < 4; ++i)
                samples.push_back(make_sample(config, i, 2, 2, 2, int(i % 2)));
            for (const Sample& s : samples) batch.push_back(&s);

            BatchTrace trace;
            BatchOutput out = forward_batch(batch, params, config, Mode::Train, 7, &trace);
            Matrix y(4, 1);
            for (int i = 0; i < 4; ++i) y(i, 0) = Scalar(samples[i].label);
            params.zero_grads();
            backward_batch(ops::bce_backward(out.probs, y), trace, params, config);

            double grad_norm = 0;
            params.for_each_param([&](const ParamTensor& p) {
                for (Scalar g : p.grad.values()) grad_norm += double(g) * double(g);
            });
            CHECK(std::isfinite(grad_norm));
            CHECK(grad_norm > 0);
            CHECK(out.scores[0].fused.size() == size_t(config.active_blocks()));
        }
    }
}

TEST_CASE("full-model eval-mode gradient check against finite differences") {
    ModelConfig config = tiny_config();
    ModelParams params = ModelParams::init(config, 51);

    std::vector<Sample> samples;
    samples.push_back(make_sample(config, 1, 2, 2, 3, 1));
    samples.push_back(make_sample(config, 2, 1, 3, 2, 0));
    samples.push_back(make_sample(config, 3, 3, 1, 1, 1));
    std::vector<const Sample*> batch;
    for (const Sample& s : samples) batch.push_back(&s);
    Matrix labels(3, 1);
    for (int i = 0; i < 3; ++i) labels(i, 0) = Scalar(samples[i].label);

    auto loss = [&] {
        BatchOutput out = forward_batch(batch, params, config, Mode::Eval, 0, nullptr);
        return static_cast<double>(ops::bce_loss(out.probs, labels));
    };

    BatchTrace trace;
    BatchOutput out = forward_batch(batch, params, config, Mode::Eval, 0, &trace);
    params.zero_grads();
    backward_batch(ops::bce_backward(out.probs, labels), trace, params, config);

    params.for_each_param([&](ParamTensor& p) {
        CAPTURE(p.name);
        CHECK(max_grad_err(loss, p.value, p.grad) < kGradTol);
    });
}
