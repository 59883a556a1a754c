// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#include "ooc/model.hpp"

#include <cmath>
#include <unordered_set>

namespace ooc {

void ModelConfig::validate() const {
    if (d_v <= 0 || d_t <= 0 || d_mm <= 0) throw Error("model config: dimensions must be positive");
    if (n_heads <= 0) throw Error("model config: n_heads must be positive");
    if (d_v % n_heads != 0 || d_t % n_heads != 0)
        throw Error("model config: n_heads must divide d_v and d_t");
    if (hidden_mm <= 0) throw Error("model config: hidden_mm must be positive");
    if (dropout_p < 0.0 || dropout_p >= 1.0)
        throw Error("model config: dropout_p must satisfy 0 <= p < 1");
    if (threshold <= 0.0 || threshold >= 1.0)
        throw Error("model config: threshold must lie in (0, 1)");
}

const char* verdict_name(Verdict v) {
    return v == Verdict::Falsified ? "Falsified" : "Pristine";
}

std::vector<ScoreSlot> score_layout(const ModelConfig& config) {
    std::vector<ScoreSlot> layout;
    layout.push_back(ScoreSlot::Images);
    if (config.use_label_block) layout.push_back(ScoreSlot::Labels);
    layout.push_back(ScoreSlot::Captions);
    if (config.use_page_block) layout.push_back(ScoreSlot::Pages);
    layout.push_back(ScoreSlot::Logit);
    return layout;
}

// ---- parameter containers ------------------------------------------------------

namespace {

Matrix xavier(int rows, int cols, uint64_t seed) {
    Rng rng(seed);
    double limit = std::sqrt(6.0 / (rows + cols));
    Matrix m(rows, cols);
    for (Scalar& v : m.values()) v = Scalar((rng.uniform() * 2.0 - 1.0) * limit);
    return m;
}

ParamTensor make_weight(const std::string& name, int rows, int cols, uint64_t seed) {
    return ParamTensor(name, xavier(rows, cols, derive_seed(seed, name)));
}

ParamTensor make_bias(const std::string& name, int cols) {
    return ParamTensor(name, Matrix(1, cols));
}

} // namespace

AttentionBlockParams AttentionBlockParams::init(const std::string& name, int dim, uint64_t seed) {
    AttentionBlockParams p;
    p.w_q = make_weight(name + ".w_q", dim, dim, seed);
    p.b_q = make_bias(name + ".b_q", dim);
    p.w_k = make_weight(name + ".w_k", dim, dim, seed);
    p.b_k = make_bias(name + ".b_k", dim);
    p.w_v = make_weight(name + ".w_v", dim, dim, seed);
    p.b_v = make_bias(name + ".b_v", dim);
    p.w_o = make_weight(name + ".w_o", dim, dim, seed);
    p.b_o = make_bias(name + ".b_o", dim);
    return p;
}

void AttentionBlockParams::for_each(const std::function<void(ParamTensor&)>& fn) {
    fn(w_q);
    fn(b_q);
    fn(w_k);
    fn(b_k);
    fn(w_v);
    fn(b_v);
    fn(w_o);
    fn(b_o);
}

ModelParams ModelParams::init(const ModelConfig& config, uint64_t seed) {
    config.validate();
    ModelParams p;
    p.image_block = AttentionBlockParams::init("image_block", config.d_v, seed);
    p.caption_block = AttentionBlockParams::init("caption_block", config.d_t, seed);
    if (config.use_label_block)
        p.label_block = AttentionBlockParams::init("label_block", config.d_t, seed);
    if (config.use_page_block)
        p.page_block = AttentionBlockParams::init("page_block", config.d_t, seed);

    p.mm_inner_w = make_weight("mm_inner.w", config.d_mm, config.hidden_mm, seed);
    p.mm_inner_b = make_bias("mm_inner.b", config.hidden_mm);
    p.mm_outer_w = make_weight("mm_outer.w", config.hidden_mm, 1, seed);
    p.mm_outer_b = make_bias("mm_outer.b", 1);

    int k = config.active_blocks();
    Matrix ones(1, k);
    ones.fill(Scalar(1));
    p.head_gamma = ParamTensor("head_bn.gamma", ones);
    p.head_beta = make_bias("head_bn.beta", k);
    p.head_bn_state = ops::BatchNormState(k);
    p.head_w = make_weight("head.w", k, 1, seed);
    p.head_b = make_bias("head.b", 1);
    return p;
}

void ModelParams::for_each_param(const std::function<void(ParamTensor&)>& fn) {
    image_block.for_each(fn);
    caption_block.for_each(fn);
    if (label_block) label_block->for_each(fn);
    if (page_block) page_block->for_each(fn);
    fn(mm_inner_w);
    fn(mm_inner_b);
    fn(mm_outer_w);
    fn(mm_outer_b);
    fn(head_gamma);
    fn(head_beta);
    fn(head_w);
    fn(head_b);
}

void ModelParams::for_each_param(const std::function<void(const ParamTensor&)>& fn) const {
    const_cast<ModelParams*>(this)->for_each_param(
        [&](ParamTensor& p) { fn(static_cast<const ParamTensor&>(p)); });
}

void ModelParams::zero_grads() {
    for_each_param([](ParamTensor& p) { p.zero_grad(); });
}

long long ModelParams::parameter_count() const {
    long long total = 0;
    for_each_param([&](const ParamTensor& p) { total += static_cast<long long>(p.size()); });
    return total;
}

long long count_parameters(const ModelConfig& config) {
    config.validate();
    auto attention_block = [](long long d) { return 4 * (d * d + d); };
    long long total = attention_block(config.d_v) + attention_block(config.d_t);
    if (config.use_label_block) total += attention_block(config.d_t);
    if (config.use_page_block) total += attention_block(config.d_t);
    total += static_cast<long long>(config.d_mm) * config.hidden_mm + config.hidden_mm;
    total += config.hidden_mm + 1;
    long long k = config.active_blocks();
    total += 2 * k + (k + 1);
    return total;
}

// ---- attention -------------------------------------------------------------------

namespace {

Matrix head_cols(const Matrix& m, int head, int head_dim) {
    Matrix out(m.rows(), head_dim);
    int offset = head * head_dim;
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < head_dim; ++j) out(i, j) = m(i, offset + j);
    return out;
}

void set_head_cols(Matrix& full, const Matrix& part, int head, int head_dim) {
    int offset = head * head_dim;
    for (int i = 0; i < part.rows(); ++i)
        for (int j = 0; j < head_dim; ++j) full(i, offset + j) = part(i, j);
}

Matrix row_of(const Matrix& m, int r) {
    Matrix out(1, m.cols());
    for (int j = 0; j < m.cols(); ++j) out(0, j) = m(r, j);
    return out;
}

} // namespace

MhaResult multi_head_attention(const Matrix& query, const Matrix& keys, const Matrix& values,
                               const AttentionBlockParams& params, int n_heads, MhaCache* cache) {
    int d = params.dim();
    if (keys.rows() == 0) throw Error("multi_head_attention: empty key set");
    if (query.cols() != d || keys.cols() != d || values.cols() != d)
        throw Error("multi_head_attention: input width does not match projection dim " +
                    std::to_string(d));
    if (values.rows() != keys.rows())
        throw Error("multi_head_attention: keys and values row counts differ");
    if (n_heads <= 0 || d % n_heads != 0)
        throw Error("multi_head_attention: n_heads must divide the model dim");

    int m = query.rows();
    int n = keys.rows();
    int head_dim = d / n_heads;
    Scalar scale = Scalar(1) / std::sqrt(Scalar(head_dim));

    Matrix q_proj = ops::linear(query, params.w_q.value, params.b_q.value);
    Matrix k_proj = ops::linear(keys, params.w_k.value, params.b_k.value);
    Matrix v_proj = ops::linear(values, params.w_v.value, params.b_v.value);

    Matrix concat(m, d);
    Matrix avg_weights(m, n);
    std::vector<Matrix> head_weights;
    head_weights.reserve(n_heads);
    for (int h = 0; h < n_heads; ++h) {
        Matrix q_h = head_cols(q_proj, h, head_dim);
        Matrix k_h = head_cols(k_proj, h, head_dim);
        Matrix v_h = head_cols(v_proj, h, head_dim);
        Matrix scores = scaled(matmul_nt(q_h, k_h), scale);
        Matrix weights = ops::softmax_rows(scores);
        add_scaled(avg_weights, weights, Scalar(1) / Scalar(n_heads));
        set_head_cols(concat, matmul(weights, v_h), h, head_dim);
        head_weights.push_back(std::move(weights));
    }

    MhaResult result;
    result.output = ops::linear(concat, params.w_o.value, params.b_o.value);
    result.avg_weights = std::move(avg_weights);
    if (cache) {
        cache->query = query;
        cache->keys = keys;
        cache->values = values;
        cache->q_proj = std::move(q_proj);
        cache->k_proj = std::move(k_proj);
        cache->v_proj = std::move(v_proj);
        cache->head_weights = std::move(head_weights);
        cache->concat = std::move(concat);
    }
    return result;
}

MhaInputGrads multi_head_attention_backward(const Matrix& d_output, const MhaCache& cache,
                                            AttentionBlockParams& params, int n_heads) {
    int d = params.dim();
    int head_dim = d / n_heads;
    Scalar scale = Scalar(1) / std::sqrt(Scalar(head_dim));

    ops::LinearGrads out_grads = ops::linear_backward(d_output, cache.concat, params.w_o.value);
    add_in_place(params.w_o.grad, out_grads.d_w);
    add_in_place(params.b_o.grad, out_grads.d_b);
    const Matrix& d_concat = out_grads.d_x;

    Matrix d_q_proj(cache.q_proj.rows(), d);
    Matrix d_k_proj(cache.k_proj.rows(), d);
    Matrix d_v_proj(cache.v_proj.rows(), d);
    for (int h = 0; h < n_heads; ++h) {
        Matrix d_out_h = head_cols(d_concat, h, head_dim);
        Matrix q_h = head_cols(cache.q_proj, h, head_dim);
        Matrix k_h = head_cols(cache.k_proj, h, head_dim);
        Matrix v_h = head_cols(cache.v_proj, h, head_dim);
        const Matrix& weights = cache.head_weights[h];

        Matrix d_weights = matmul_nt(d_out_h, v_h);
        Matrix d_v_h = matmul_tn(weights, d_out_h);
        Matrix d_scores = scaled(ops::softmax_backward(d_weights, weights), scale);
        Matrix d_q_h = matmul(d_scores, k_h);
        Matrix d_k_h = matmul_tn(d_scores, q_h);

        set_head_cols(d_q_proj, d_q_h, h, head_dim);
        set_head_cols(d_k_proj, d_k_h, h, head_dim);
        set_head_cols(d_v_proj, d_v_h, h, head_dim);
    }

    MhaInputGrads grads;
    ops::LinearGrads qg = ops::linear_backward(d_q_proj, cache.query, params.w_q.value);
    add_in_place(params.w_q.grad, qg.d_w);
    add_in_place(params.b_q.grad, qg.d_b);
    grads.d_query = std::move(qg.d_x);

    ops::LinearGrads kg = ops::linear_backward(d_k_proj, cache.keys, params.w_k.value);
    add_in_place(params.w_k.grad, kg.d_w);
    add_in_place(params.b_k.grad, kg.d_b);
    grads.d_keys = std::move(kg.d_x);

    ops::LinearGrads vg = ops::linear_backward(d_v_proj, cache.values, params.w_v.value);
    add_in_place(params.w_v.grad, vg.d_w);
    add_in_place(params.b_v.grad, vg.d_b);
    grads.d_values = std::move(vg.d_x);
    return grads;
}

// ---- consistency blocks --------------------------------------------------------

namespace {

BlockEval query_evidence_consistency(const Matrix& query, const Matrix& evidence,
                                     const AttentionBlockParams& params, int n_heads,
                                     CosBlockCache* cache) {
    BlockEval out;
    if (evidence.rows() == 0) return out;
    MhaCache local;
    MhaCache* mha_cache = cache ? &cache->mha : &local;
    MhaResult attn = multi_head_attention(query, evidence, evidence, params, n_heads, mha_cache);
    out.score = ops::cosine_similarity(query, attn.output);
    out.avg_weights = attn.avg_weights;
    if (cache) {
        cache->query = query;
        cache->attn_out = attn.output;
    }
    return out;
}

} // namespace

BlockEval image_consistency(const Matrix& image_query, const Matrix& image_evidence,
                            const AttentionBlockParams& params, int n_heads,
                            CosBlockCache* cache) {
    return query_evidence_consistency(image_query, image_evidence, params, n_heads, cache);
}

BlockEval label_consistency(const Matrix& labels_query, const Matrix& labels_evidence,
                            const AttentionBlockParams& params, int n_heads,
                            CosBlockCache* cache) {
    return query_evidence_consistency(labels_query, labels_evidence, params, n_heads, cache);
}

BlockEval caption_consistency(const Matrix& caption_query, const Matrix& caption_evidence,
                              const AttentionBlockParams& params, int n_heads,
                              CosBlockCache* cache) {
    return query_evidence_consistency(caption_query, caption_evidence, params, n_heads, cache);
}

PageBlockEval page_consistency(const Matrix& pages, const AttentionBlockParams& params,
                               int n_heads, PageBlockCache* cache) {
    PageBlockEval out;
    int p = pages.rows();
    if (p == 0) return out;
    MhaCache local;
    MhaCache* mha_cache = cache ? &cache->mha : &local;
    MhaResult attn = multi_head_attention(pages, pages, pages, params, n_heads, mha_cache);

    Scalar acc = 0;
    for (int l = 0; l < p; ++l)
        acc += ops::cosine_similarity(row_of(pages, l), row_of(attn.output, l));
    out.score = acc / Scalar(p);
    out.avg_weights = attn.avg_weights;
    out.page_importance.resize(p);
    for (int j = 0; j < p; ++j) {
        Scalar col = 0;
        for (int i = 0; i < p; ++i) col += attn.avg_weights(i, j);
        out.page_importance[j] = col / Scalar(p);
    }
    if (cache) {
        cache->pages = pages;
        cache->proj = attn.output;
    }
    return out;
}

Scalar multimodal_consistency(const Matrix& pair_embedding, const ModelParams& params,
                              double dropout_p, Mode mode, uint64_t seed, MmCache* cache) {
    if (pair_embedding.rows() != 1 || pair_embedding.cols() != params.mm_inner_w.value.rows())
        throw Error("multimodal_consistency: pair embedding width does not match d_mm");
    Matrix inner = ops::linear(pair_embedding, params.mm_inner_w.value, params.mm_inner_b.value);
    ops::DropoutResult drop = ops::dropout(inner, dropout_p, mode, seed);
    Matrix activated = ops::relu(drop.y);
    Matrix out = ops::linear(activated, params.mm_outer_w.value, params.mm_outer_b.value);
    if (cache) {
        cache->input = pair_embedding;
        cache->inner = std::move(inner);
        cache->drop = std::move(drop);
        cache->activated = std::move(activated);
    }
    return out(0, 0);
}

// ---- sample plumbing --------------------------------------------------------------

namespace {

Matrix to_row(const std::vector<float>& v) {
    Matrix m(1, static_cast<int>(v.size()));
    for (size_t i = 0; i < v.size(); ++i) m(0, static_cast<int>(i)) = Scalar(v[i]);
    return m;
}

Matrix stack_rows(const std::vector<std::vector<float>>& rows, int cols) {
    Matrix m(static_cast<int>(rows.size()), cols);
    for (size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < cols; ++j) m(static_cast<int>(i), j) = Scalar(rows[i][j]);
    return m;
}

void check_sample_dims(const Sample& s, const ModelConfig& config) {
    DatasetManifest m;
    m.d_v = config.d_v;
    m.d_t = config.d_t;
    m.d_mm = config.d_mm;
    m.split = "test";
    m.sample_count = 1;
    validate_sample(s, m);
}

int argmax_row(const Matrix& weights, int row) {
    int best = 0;
    for (int j = 1; j < weights.cols(); ++j)
        if (weights(row, j) > weights(row, best)) best = j;
    return best;
}

int argmax_vec(const std::vector<Scalar>& v) {
    int best = 0;
    for (size_t j = 1; j < v.size(); ++j)
        if (v[j] > v[best]) best = static_cast<int>(j);
    return best;
}

struct SampleBlockEvals {
    BlockEval image, label, caption;
    PageBlockEval page;
    Scalar logit = 0;
};

ConsistencyScores assemble_scores(const SampleBlockEvals& evals, const ModelConfig& config) {
    ConsistencyScores s;
    s.s_images = evals.image.score;
    if (config.use_label_block) s.s_labels = evals.label.score;
    s.s_cpt = evals.caption.score;
    if (config.use_page_block) s.s_pages = evals.page.score;
    s.s_logit = evals.logit;
    for (ScoreSlot slot : score_layout(config)) {
        switch (slot) {
            case ScoreSlot::Images: s.fused.push_back(evals.image.score.value_or(0)); break;
            case ScoreSlot::Labels: s.fused.push_back(evals.label.score.value_or(0)); break;
            case ScoreSlot::Captions: s.fused.push_back(evals.caption.score.value_or(0)); break;
            case ScoreSlot::Pages: s.fused.push_back(evals.page.score.value_or(0)); break;
            case ScoreSlot::Logit: s.fused.push_back(evals.logit); break;
        }
    }
    return s;
}

AttentionRanking assemble_ranking(const Sample& sample, const ModelConfig& config,
                                  const SampleBlockEvals& evals) {
    AttentionRanking r;
    if (evals.image.score) {
        BlockAttention b;
        b.avg_weights = evals.image.avg_weights;
        b.argmax = argmax_row(b.avg_weights, 0);
        b.selected_page_id = sample.visual_evidence[b.argmax].page_id;
        r.image_block = std::move(b);
    }
    if (config.use_label_block && evals.label.score) {
        BlockAttention b;
        b.avg_weights = evals.label.avg_weights;
        b.argmax = argmax_row(b.avg_weights, 0);
        // Label evidence belongs to the visual evidence image at the same index.
        b.selected_page_id = sample.visual_evidence[b.argmax].page_id;
        r.label_block = std::move(b);
    }
    if (evals.caption.score) {
        BlockAttention b;
        b.avg_weights = evals.caption.avg_weights;
        b.argmax = argmax_row(b.avg_weights, 0);
        b.selected_page_id = sample.textual_evidence[b.argmax].page_id;
        r.caption_block = std::move(b);
    }
    if (config.use_page_block && evals.page.score) {
        BlockAttention b;
        b.avg_weights = evals.page.avg_weights;
        b.argmax = argmax_vec(evals.page.page_importance);
        b.selected_page_id = sample.pages[b.argmax].page_id;
        r.page_block = std::move(b);
        r.page_importance = evals.page.page_importance;
    }

    std::unordered_set<std::string> seen;
    auto push = [&](const std::optional<BlockAttention>& b) {
        if (b && seen.insert(b->selected_page_id).second)
            r.attended_page_ids.push_back(b->selected_page_id);
    };
    push(r.image_block);
    push(r.label_block);
    push(r.caption_block);
    push(r.page_block);
    return r;
}

SampleBlockEvals eval_blocks(const Sample& sample, const ModelParams& params,
                             const ModelConfig& config, Mode mode, uint64_t dropout_seed,
                             SampleTrace* trace) {
    check_sample_dims(sample, config);
    SampleBlockEvals evals;

    std::vector<std::vector<float>> vis_embeddings, vis_labels, txt_embeddings, page_embeddings;
    for (const VisualEvidence& e : sample.visual_evidence) {
        vis_embeddings.push_back(e.embedding);
        vis_labels.push_back(e.labels_embedding);
    }
    for (const TextualEvidence& e : sample.textual_evidence) txt_embeddings.push_back(e.embedding);
    for (const PageRecord& p : sample.pages) page_embeddings.push_back(p.embedding);

    Matrix image_query = to_row(sample.image_embedding);
    Matrix image_evidence = stack_rows(vis_embeddings, config.d_v);
    if (trace && image_evidence.rows() > 0) trace->image.emplace();
    evals.image = image_consistency(image_query, image_evidence, params.image_block,
                                    config.n_heads, trace && trace->image ? &*trace->image : nullptr);

    if (config.use_label_block) {
        Matrix labels_query = to_row(sample.labels_embedding);
        Matrix labels_evidence = stack_rows(vis_labels, config.d_t);
        if (trace && labels_evidence.rows() > 0) trace->label.emplace();
        evals.label = label_consistency(labels_query, labels_evidence, *params.label_block,
                                        config.n_heads,
                                        trace && trace->label ? &*trace->label : nullptr);
    }

    Matrix caption_query = to_row(sample.caption_embedding);
    Matrix caption_evidence = stack_rows(txt_embeddings, config.d_t);
    if (trace && caption_evidence.rows() > 0) trace->caption.emplace();
    evals.caption = caption_consistency(caption_query, caption_evidence, params.caption_block,
                                        config.n_heads,
                                        trace && trace->caption ? &*trace->caption : nullptr);

    if (config.use_page_block) {
        Matrix pages = stack_rows(page_embeddings, config.d_t);
        if (trace && pages.rows() > 0) trace->page.emplace();
        evals.page = page_consistency(pages, *params.page_block, config.n_heads,
                                      trace && trace->page ? &*trace->page : nullptr);
    }

    evals.logit = multimodal_consistency(to_row(sample.pair_embedding), params, config.dropout_p,
                                         mode, dropout_seed, trace ? &trace->mm : nullptr);
    return evals;
}

Prediction make_prediction(Scalar p_class, const ModelConfig& config) {
    Prediction pred;
    pred.p_class = p_class;
    pred.threshold_used = Scalar(config.threshold);
    pred.verdict = p_class >= pred.threshold_used ? Verdict::Falsified : Verdict::Pristine;
    return pred;
}

BatchOutput forward_impl(const std::vector<const Sample*>& batch, const ModelParams& params,
                         const ModelConfig& config, Mode mode, uint64_t seed,
                         ops::BatchNormState& bn_state, BatchTrace* trace) {
    config.validate();
    if (batch.empty()) throw Error("forward: empty batch");
    int n = static_cast<int>(batch.size());
    int k = config.active_blocks();

    if (trace) {
        trace->samples.assign(static_cast<size_t>(n), SampleTrace{});
        trace->mode = mode;
    }

    Matrix score_matrix(n, k);
    BatchOutput out;
    out.scores.reserve(n);
    out.rankings.reserve(n);
    std::vector<SampleBlockEvals> all_evals;
    all_evals.reserve(n);
    for (int i = 0; i < n; ++i) {
        const Sample& sample = *batch[i];
        SampleBlockEvals evals =
            eval_blocks(sample, params, config, mode, derive_seed(seed, "dropout", i),
                        trace ? &trace->samples[i] : nullptr);
        ConsistencyScores scores = assemble_scores(evals, config);
        for (int j = 0; j < k; ++j) score_matrix(i, j) = scores.fused[j];
        out.rankings.push_back(assemble_ranking(sample, config, evals));
        out.scores.push_back(std::move(scores));
        all_evals.push_back(std::move(evals));
    }

    ops::BatchNormCache local_bn;
    Matrix bn_out = ops::batchnorm(score_matrix, params.head_gamma.value, params.head_beta.value,
                                   bn_state, mode, trace ? &trace->bn : &local_bn);
    Matrix z = ops::linear(bn_out, params.head_w.value, params.head_b.value);
    Matrix probs = ops::sigmoid(z);

    out.predictions.reserve(n);
    for (int i = 0; i < n; ++i) out.predictions.push_back(make_prediction(probs(i, 0), config));
    if (trace) {
        trace->score_matrix = std::move(score_matrix);
        trace->bn_out = std::move(bn_out);
        trace->z = std::move(z);
        trace->probs = probs;
    }
    out.probs = std::move(probs);
    return out;
}

} // namespace

ForwardResult forward(const Sample& sample, const ModelParams& params, const ModelConfig& config,
                      Mode mode, uint64_t seed) {
    // Copy the running stats so a const forward never mutates the model.
    ops::BatchNormState state = params.head_bn_state;
    std::vector<const Sample*> batch{&sample};
    BatchOutput out = forward_impl(batch, params, config, mode, seed, state, nullptr);
    return ForwardResult{out.predictions[0], std::move(out.scores[0]), std::move(out.rankings[0])};
}

BatchOutput forward_batch(const std::vector<const Sample*>& batch, ModelParams& params,
                          const ModelConfig& config, Mode mode, uint64_t seed, BatchTrace* trace) {
    return forward_impl(batch, params, config, mode, seed, params.head_bn_state, trace);
}

BatchOutput forward_batch(const std::vector<const Sample*>& batch, const ModelParams& params,
                          const ModelConfig& config) {
    ops::BatchNormState state = params.head_bn_state;
    return forward_impl(batch, params, config, Mode::Eval, 0, state, nullptr);
}

// ---- backward ---------------------------------------------------------------------

namespace {

void cos_block_backward(Scalar d_score, const CosBlockCache& cache, AttentionBlockParams& params,
                        int n_heads) {
    ops::CosineGrads cg = ops::cosine_backward(d_score, cache.query, cache.attn_out);
    // The query is data, not a parameter; only the attention path carries grads.
    multi_head_attention_backward(cg.d_b, cache.mha, params, n_heads);
}

void page_block_backward(Scalar d_score, const PageBlockCache& cache,
                         AttentionBlockParams& params, int n_heads) {
    int p = cache.pages.rows();
    Matrix d_proj(p, cache.pages.cols());
    Scalar d_each = d_score / Scalar(p);
    for (int l = 0; l < p; ++l) {
        ops::CosineGrads cg =
            ops::cosine_backward(d_each, row_of(cache.pages, l), row_of(cache.proj, l));
        for (int j = 0; j < d_proj.cols(); ++j) d_proj(l, j) = cg.d_b(0, j);
    }
    multi_head_attention_backward(d_proj, cache.mha, params, n_heads);
}

void mm_backward(Scalar d_logit, const MmCache& cache, ModelParams& params) {
    Matrix d_out(1, 1);
    d_out(0, 0) = d_logit;
    ops::LinearGrads og = ops::linear_backward(d_out, cache.activated, params.mm_outer_w.value);
    add_in_place(params.mm_outer_w.grad, og.d_w);
    add_in_place(params.mm_outer_b.grad, og.d_b);
    Matrix d_dropped = ops::relu_backward(og.d_x, cache.drop.y);
    Matrix d_inner = ops::dropout_backward(d_dropped, cache.drop);
    ops::LinearGrads ig = ops::linear_backward(d_inner, cache.input, params.mm_inner_w.value);
    add_in_place(params.mm_inner_w.grad, ig.d_w);
    add_in_place(params.mm_inner_b.grad, ig.d_b);
}

} // namespace

void backward_batch(const Matrix& d_probs, const BatchTrace& trace, ModelParams& params,
                    const ModelConfig& config) {
    Matrix d_z = ops::sigmoid_backward(d_probs, trace.probs);
    ops::LinearGrads hg = ops::linear_backward(d_z, trace.bn_out, params.head_w.value);
    add_in_place(params.head_w.grad, hg.d_w);
    add_in_place(params.head_b.grad, hg.d_b);

    ops::BatchNormGrads bg = ops::batchnorm_backward(hg.d_x, trace.bn);
    add_in_place(params.head_gamma.grad, bg.d_gamma);
    add_in_place(params.head_beta.grad, bg.d_beta);

    std::vector<ScoreSlot> layout = score_layout(config);
    for (size_t i = 0; i < trace.samples.size(); ++i) {
        const SampleTrace& st = trace.samples[i];
        for (size_t j = 0; j < layout.size(); ++j) {
            Scalar g = bg.d_x(static_cast<int>(i), static_cast<int>(j));
            switch (layout[j]) {
                case ScoreSlot::Images:
                    if (st.image) cos_block_backward(g, *st.image, params.image_block, config.n_heads);
                    break;
                case ScoreSlot::Labels:
                    if (st.label)
                        cos_block_backward(g, *st.label, *params.label_block, config.n_heads);
                    break;
                case ScoreSlot::Captions:
                    if (st.caption)
                        cos_block_backward(g, *st.caption, params.caption_block, config.n_heads);
                    break;
                case ScoreSlot::Pages:
                    if (st.page)
                        page_block_backward(g, *st.page, *params.page_block, config.n_heads);
                    break;
                case ScoreSlot::Logit:
                    mm_backward(g, st.mm, params);
                    break;
            }
        }
    }
}

} // namespace ooc
