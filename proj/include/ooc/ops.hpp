// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "ooc/matrix.hpp"

// Forward/backward primitives for the consistency network. Every backward is
// analytic; callers keep whatever forward values the backward needs.
namespace ooc::ops {

inline constexpr double kCosineNormEps = 1e-12;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBceClamp = 1e-7;

// ---- affine ----------------------------------------------------------------

/// y = x * w + b, bias broadcast over rows. x: n x d_in, w: d_in x d_out, b: 1 x d_out.
Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b);

struct LinearGrads {
    Matrix d_x;
    Matrix d_w;
    Matrix d_b;
};
LinearGrads linear_backward(const Matrix& d_y, const Matrix& x, const Matrix& w);

// ---- softmax ---------------------------------------------------------------

/// Row-wise softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& x);

/// d_x given upstream d_y and the forward output y.
Matrix softmax_backward(const Matrix& d_y, const Matrix& y);

// ---- cosine similarity -----------------------------------------------------

/// cossim(a, b) over 1 x d row vectors, clamped into [-1, 1].
Scalar cosine_similarity(const Matrix& a, const Matrix& b);

struct CosineGrads {
    Matrix d_a;
    Matrix d_b;
};
CosineGrads cosine_backward(Scalar d_s, const Matrix& a, const Matrix& b);

// ---- relu / dropout --------------------------------------------------------

Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& d_y, const Matrix& x);

struct DropoutResult {
    Matrix y;
    std::vector<uint8_t> kept; // empty when the pass was an identity
    Scalar scale = Scalar(1);
};

/// Inverted dropout: train mode keeps entries with probability 1-p and scales
/// them by 1/(1-p); eval mode (or p == 0) is the identity. 0 <= p < 1.
DropoutResult dropout(const Matrix& x, double p, Mode mode, uint64_t seed);
Matrix dropout_backward(const Matrix& d_y, const DropoutResult& result);

// ---- batch normalization ---------------------------------------------------

struct BatchNormState {
    Matrix running_mean; // 1 x k
    Matrix running_var;  // 1 x k

    explicit BatchNormState(int features = 0);
};

struct BatchNormCache {
    Mode mode = Mode::Eval;
    Matrix x_hat;
    Matrix inv_std; // 1 x k
    Matrix gamma;   // 1 x k
};

/// Train mode normalizes by batch statistics (n >= 2) and updates the running
/// stats; eval mode normalizes by the running stats and leaves them untouched.
Matrix batchnorm(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                 BatchNormState& state, Mode mode, BatchNormCache* cache = nullptr);

struct BatchNormGrads {
    Matrix d_x;
    Matrix d_gamma;
    Matrix d_beta;
};
BatchNormGrads batchnorm_backward(const Matrix& d_y, const BatchNormCache& cache);

// ---- sigmoid / bce ---------------------------------------------------------

Matrix sigmoid(const Matrix& x);
Matrix sigmoid_backward(const Matrix& d_y, const Matrix& y);

/// Mean of -[y log x + (1-y) log(1-x)] with x clamped into
/// [kBceClamp, 1-kBceClamp] before the logs. labels must be 0 or 1.
Scalar bce_loss(const Matrix& probs, const Matrix& labels);
Matrix bce_backward(const Matrix& probs, const Matrix& labels);

} // namespace ooc::ops
