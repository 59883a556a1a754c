// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ooc/dataset.hpp"
#include "ooc/matrix.hpp"
#include "ooc/ops.hpp"

namespace ooc {

struct ModelConfig {
    int d_v = 768;
    int d_t = 768;
    int d_mm = 4096;
    int n_heads = 8;
    int hidden_mm = 256;
    double dropout_p = 0.2;
    bool use_label_block = true;
    bool use_page_block = true;
    double threshold = 0.5;

    /// Number of entries in the fused score vector (3..5).
    int active_blocks() const { return 3 + (use_label_block ? 1 : 0) + (use_page_block ? 1 : 0); }
    void validate() const;
};

/// Q/K/V/O projections with biases for one attention block. No residual
/// connection and no layer normalization; a single attention layer.
struct AttentionBlockParams {
    ParamTensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;

    int dim() const { return w_q.value.rows(); }
    static AttentionBlockParams init(const std::string& name, int dim, uint64_t seed);
    void for_each(const std::function<void(ParamTensor&)>& fn);
};

struct ModelParams {
    AttentionBlockParams image_block;
    AttentionBlockParams caption_block;
    std::optional<AttentionBlockParams> label_block;
    std::optional<AttentionBlockParams> page_block;

    ParamTensor mm_inner_w, mm_inner_b; // d_mm -> hidden_mm
    ParamTensor mm_outer_w, mm_outer_b; // hidden_mm -> 1

    ParamTensor head_gamma, head_beta; // batchnorm affine over k features
    ops::BatchNormState head_bn_state;
    ParamTensor head_w, head_b;        // k -> 1

    static ModelParams init(const ModelConfig& config, uint64_t seed);

    /// Visits every trainable tensor in a fixed order (running stats excluded).
    void for_each_param(const std::function<void(ParamTensor&)>& fn);
    void for_each_param(const std::function<void(const ParamTensor&)>& fn) const;
    void zero_grads();
    long long parameter_count() const;
};

/// Trainable-parameter count implied by a configuration.
long long count_parameters(const ModelConfig& config);

/// Which entry of the fused score vector a position holds.
enum class ScoreSlot { Images, Labels, Captions, Pages, Logit };
std::vector<ScoreSlot> score_layout(const ModelConfig& config);

struct ConsistencyScores {
    std::optional<Scalar> s_images;
    std::optional<Scalar> s_labels;
    std::optional<Scalar> s_cpt;
    std::optional<Scalar> s_pages;
    Scalar s_logit = 0;
    /// Active scores in order images, labels, captions, pages, logit; a block
    /// with no evidence contributes the neutral value 0.
    std::vector<Scalar> fused;
};

enum class Verdict { Falsified, Pristine };
const char* verdict_name(Verdict v);

struct Prediction {
    Scalar p_class = 0;           // probability the pair is falsified
    Verdict verdict = Verdict::Pristine;
    Scalar threshold_used = 0.5;
};

struct BlockAttention {
    Matrix avg_weights;          // query rows x evidence, averaged over heads
    int argmax = -1;             // ties broken by lowest index
    std::string selected_page_id;
};

struct AttentionRanking {
    std::optional<BlockAttention> image_block;
    std::optional<BlockAttention> label_block;
    std::optional<BlockAttention> caption_block;
    std::optional<BlockAttention> page_block;
    std::vector<Scalar> page_importance; // per page, column mean of page self-attention
    /// Deduplicated page ids in block order image, label, caption, page.
    std::vector<std::string> attended_page_ids;
};

// ---- attention -------------------------------------------------------------

struct MhaCache {
    Matrix query, keys, values;
    Matrix q_proj, k_proj, v_proj;
    std::vector<Matrix> head_weights; // per head, m x n
    Matrix concat;                    // m x d
};

struct MhaResult {
    Matrix output;      // m x d
    Matrix avg_weights; // m x n, mean over heads
};

/// Scaled dot-product multi-head attention with Q/K/V/O projections.
MhaResult multi_head_attention(const Matrix& query, const Matrix& keys, const Matrix& values,
                               const AttentionBlockParams& params, int n_heads,
                               MhaCache* cache = nullptr);

struct MhaInputGrads {
    Matrix d_query, d_keys, d_values;
};

/// Accumulates parameter gradients into `params` and returns input gradients.
MhaInputGrads multi_head_attention_backward(const Matrix& d_output, const MhaCache& cache,
                                            AttentionBlockParams& params, int n_heads);

// ---- consistency blocks ------------------------------------------------------

struct CosBlockCache {
    MhaCache mha;
    Matrix query;    // 1 x d
    Matrix attn_out; // 1 x d
};

struct BlockEval {
    std::optional<Scalar> score; // absent when there is no evidence
    Matrix avg_weights;          // empty when there is no evidence
};

BlockEval image_consistency(const Matrix& image_query, const Matrix& image_evidence,
                            const AttentionBlockParams& params, int n_heads,
                            CosBlockCache* cache = nullptr);
BlockEval label_consistency(const Matrix& labels_query, const Matrix& labels_evidence,
                            const AttentionBlockParams& params, int n_heads,
                            CosBlockCache* cache = nullptr);
BlockEval caption_consistency(const Matrix& caption_query, const Matrix& caption_evidence,
                              const AttentionBlockParams& params, int n_heads,
                              CosBlockCache* cache = nullptr);

struct PageBlockCache {
    MhaCache mha;
    Matrix pages; // p x d
    Matrix proj;  // p x d
};

struct PageBlockEval {
    std::optional<Scalar> score;
    Matrix avg_weights;                  // p x p
    std::vector<Scalar> page_importance; // length p
};

/// Self-attention inter-agreement over page embeddings: the score is the mean
/// over rows of cossim(page, projected page); importance is incoming
/// attention mass (column mean of the head-averaged weights).
PageBlockEval page_consistency(const Matrix& pages, const AttentionBlockParams& params,
                               int n_heads, PageBlockCache* cache = nullptr);

struct MmCache {
    Matrix input;     // 1 x d_mm
    Matrix inner;     // 1 x hidden
    ops::DropoutResult drop;
    Matrix activated; // 1 x hidden
};

/// S_logit = outer(relu(dropout(inner(pair)))); dropout active in train mode only.
Scalar multimodal_consistency(const Matrix& pair_embedding, const ModelParams& params,
                              double dropout_p, Mode mode, uint64_t seed,
                              MmCache* cache = nullptr);

// ---- full forward ------------------------------------------------------------

struct ForwardResult {
    Prediction prediction;
    ConsistencyScores scores;
    AttentionRanking ranking;
};

/// Per-sample forward pass. Train mode applies dropout in the multimodal
/// block but fails at the head (batch normalization needs a batch); use the
/// batched path for training.
ForwardResult forward(const Sample& sample, const ModelParams& params, const ModelConfig& config,
                      Mode mode = Mode::Eval, uint64_t seed = 0);

struct SampleTrace {
    std::optional<CosBlockCache> image, label, caption;
    std::optional<PageBlockCache> page;
    MmCache mm;
};

struct BatchTrace {
    std::vector<SampleTrace> samples;
    Matrix score_matrix; // n x k
    ops::BatchNormCache bn;
    Matrix bn_out; // n x k
    Matrix z;      // n x 1 logits
    Matrix probs;  // n x 1
    Mode mode = Mode::Eval;
};

struct BatchOutput {
    Matrix probs; // n x 1
    std::vector<ConsistencyScores> scores;
    std::vector<Prediction> predictions;
    std::vector<AttentionRanking> rankings;
};

/// Batched forward pass. Train mode uses batch statistics in the head and
/// updates the running stats in `params`; eval mode leaves them untouched.
BatchOutput forward_batch(const std::vector<const Sample*>& batch, ModelParams& params,
                          const ModelConfig& config, Mode mode, uint64_t seed,
                          BatchTrace* trace = nullptr);

/// Eval-mode batched forward that never mutates the model.
BatchOutput forward_batch(const std::vector<const Sample*>& batch, const ModelParams& params,
                          const ModelConfig& config);

/// Accumulates gradients for every trainable tensor given d(loss)/d(probs).
void backward_batch(const Matrix& d_probs, const BatchTrace& trace, ModelParams& params,
                    const ModelConfig& config);

} // namespace ooc
