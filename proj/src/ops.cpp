// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#include "ooc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ooc::ops {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw Error(msg);
}

} // namespace

// ---- affine ----------------------------------------------------------------

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
    require(x.cols() == w.rows(), "linear: input width " + std::to_string(x.cols()) +
                                      " does not match weight rows " + std::to_string(w.rows()));
    require(b.rows() == 1 && b.cols() == w.cols(), "linear: bias shape mismatch");
    Matrix y = matmul(x, w);
    for (int i = 0; i < y.rows(); ++i) {
        Scalar* row = y.row_ptr(i);
        const Scalar* bias = b.row_ptr(0);
        for (int j = 0; j < y.cols(); ++j) row[j] += bias[j];
    }
    return y;
}

LinearGrads linear_backward(const Matrix& d_y, const Matrix& x, const Matrix& w) {
    require(d_y.rows() == x.rows() && d_y.cols() == w.cols(), "linear_backward: shape mismatch");
    LinearGrads g;
    g.d_x = matmul_nt(d_y, w);   // d_y * w^T
    g.d_w = matmul_tn(x, d_y);   // x^T * d_y
    g.d_b = col_sums(d_y);
    return g;
}

// ---- softmax ---------------------------------------------------------------

Matrix softmax_rows(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i) {
        const Scalar* in = x.row_ptr(i);
        Scalar* out = y.row_ptr(i);
        Scalar mx = in[0];
        for (int j = 1; j < x.cols(); ++j) mx = std::max(mx, in[j]);
        Scalar sum = Scalar(0);
        for (int j = 0; j < x.cols(); ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        for (int j = 0; j < x.cols(); ++j) out[j] /= sum;
    }
    return y;
}

Matrix softmax_backward(const Matrix& d_y, const Matrix& y) {
    require(d_y.same_shape(y), "softmax_backward: shape mismatch");
    Matrix d_x(y.rows(), y.cols());
    for (int i = 0; i < y.rows(); ++i) {
        const Scalar* dy = d_y.row_ptr(i);
        const Scalar* yr = y.row_ptr(i);
        Scalar dot = Scalar(0);
        for (int j = 0; j < y.cols(); ++j) dot += dy[j] * yr[j];
        Scalar* dx = d_x.row_ptr(i);
        for (int j = 0; j < y.cols(); ++j) dx[j] = yr[j] * (dy[j] - dot);
    }
    return d_x;
}

// ---- cosine similarity -----------------------------------------------------

namespace {

Scalar vector_norm(const Matrix& v) {
    Scalar acc = Scalar(0);
    for (Scalar x : v.values()) acc += x * x;
    return std::sqrt(acc);
}

Scalar vector_dot(const Matrix& a, const Matrix& b) {
    Scalar acc = Scalar(0);
    for (size_t i = 0; i < a.size(); ++i) acc += a.values()[i] * b.values()[i];
    return acc;
}

} // namespace

Scalar cosine_similarity(const Matrix& a, const Matrix& b) {
    require(a.rows() == 1 && b.rows() == 1 && a.cols() == b.cols(),
            "cosine_similarity: expects two 1 x d vectors of equal length");
    Scalar na = vector_norm(a);
    Scalar nb = vector_norm(b);
    require(na > Scalar(kCosineNormEps), "cosine_similarity: first argument has near-zero norm");
    require(nb > Scalar(kCosineNormEps), "cosine_similarity: second argument has near-zero norm");
    Scalar c = vector_dot(a, b) / (na * nb);
    return std::clamp(c, Scalar(-1), Scalar(1));
}

CosineGrads cosine_backward(Scalar d_s, const Matrix& a, const Matrix& b) {
    Scalar na = vector_norm(a);
    Scalar nb = vector_norm(b);
    Scalar dot = vector_dot(a, b);
    Scalar denom = na * nb;
    Scalar c = dot / denom;
    CosineGrads g{Matrix(1, a.cols()), Matrix(1, b.cols())};
    for (int j = 0; j < a.cols(); ++j) {
        Scalar av = a(0, j);
        Scalar bv = b(0, j);
        g.d_a(0, j) = d_s * (bv / denom - c * av / (na * na));
        g.d_b(0, j) = d_s * (av / denom - c * bv / (nb * nb));
    }
    return g;
}

// ---- relu / dropout --------------------------------------------------------

Matrix relu(const Matrix& x) {
    Matrix y = x;
    for (Scalar& v : y.values())
        if (v < Scalar(0)) v = Scalar(0);
    return y;
}

Matrix relu_backward(const Matrix& d_y, const Matrix& x) {
    require(d_y.same_shape(x), "relu_backward: shape mismatch");
    Matrix d_x = d_y;
    for (size_t i = 0; i < x.size(); ++i)
        if (x.values()[i] <= Scalar(0)) d_x.values()[i] = Scalar(0);
    return d_x;
}

DropoutResult dropout(const Matrix& x, double p, Mode mode, uint64_t seed) {
    require(p >= 0.0 && p < 1.0, "dropout: p must satisfy 0 <= p < 1");
    DropoutResult res;
    if (mode == Mode::Eval || p == 0.0) {
        res.y = x;
        return res;
    }
    Rng rng(seed);
    res.kept.resize(x.size());
    res.scale = Scalar(1.0 / (1.0 - p));
    res.y = Matrix(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) {
        bool keep = rng.uniform() >= p;
        res.kept[i] = keep ? 1 : 0;
        res.y.values()[i] = keep ? x.values()[i] * res.scale : Scalar(0);
    }
    return res;
}

Matrix dropout_backward(const Matrix& d_y, const DropoutResult& result) {
    if (result.kept.empty()) return d_y;
    require(d_y.size() == result.kept.size(), "dropout_backward: shape mismatch");
    Matrix d_x = d_y;
    for (size_t i = 0; i < d_x.size(); ++i)
        d_x.values()[i] = result.kept[i] ? d_x.values()[i] * result.scale : Scalar(0);
    return d_x;
}

// ---- batch normalization ---------------------------------------------------

BatchNormState::BatchNormState(int features)
    : running_mean(1, features), running_var(1, features) {
    running_var.fill(Scalar(1));
}

Matrix batchnorm(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                 BatchNormState& state, Mode mode, BatchNormCache* cache) {
    int n = x.rows();
    int k = x.cols();
    require(gamma.rows() == 1 && gamma.cols() == k && beta.rows() == 1 && beta.cols() == k,
            "batchnorm: affine parameter shape mismatch");
    require(state.running_mean.cols() == k && state.running_var.cols() == k,
            "batchnorm: running-stats width mismatch");

    Matrix mean(1, k);
    Matrix inv_std(1, k);
    if (mode == Mode::Train) {
        require(n >= 2, "batchnorm: train mode requires a batch of size >= 2");
        Matrix var(1, k);
        for (int j = 0; j < k; ++j) {
            Scalar m = Scalar(0);
            for (int i = 0; i < n; ++i) m += x(i, j);
            m /= Scalar(n);
            Scalar v = Scalar(0);
            for (int i = 0; i < n; ++i) {
                Scalar d = x(i, j) - m;
                v += d * d;
            }
            v /= Scalar(n); // biased variance normalizes the batch
            mean(0, j) = m;
            var(0, j) = v;
            inv_std(0, j) = Scalar(1) / std::sqrt(v + Scalar(kBatchNormEps));
        }
        Scalar momentum = Scalar(kBatchNormMomentum);
        Scalar unbias = Scalar(n) / Scalar(n - 1);
        for (int j = 0; j < k; ++j) {
            state.running_mean(0, j) =
                (Scalar(1) - momentum) * state.running_mean(0, j) + momentum * mean(0, j);
            state.running_var(0, j) =
                (Scalar(1) - momentum) * state.running_var(0, j) + momentum * var(0, j) * unbias;
        }
    } else {
        for (int j = 0; j < k; ++j) {
            mean(0, j) = state.running_mean(0, j);
            inv_std(0, j) = Scalar(1) / std::sqrt(state.running_var(0, j) + Scalar(kBatchNormEps));
        }
    }

    Matrix x_hat(n, k);
    Matrix y(n, k);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
            Scalar xh = (x(i, j) - mean(0, j)) * inv_std(0, j);
            x_hat(i, j) = xh;
            y(i, j) = gamma(0, j) * xh + beta(0, j);
        }
    }
    if (cache) {
        cache->mode = mode;
        cache->x_hat = x_hat;
        cache->inv_std = inv_std;
        cache->gamma = gamma;
    }
    return y;
}

BatchNormGrads batchnorm_backward(const Matrix& d_y, const BatchNormCache& cache) {
    const Matrix& x_hat = cache.x_hat;
    require(d_y.same_shape(x_hat), "batchnorm_backward: shape mismatch");
    int n = d_y.rows();
    int k = d_y.cols();
    BatchNormGrads g{Matrix(n, k), Matrix(1, k), Matrix(1, k)};
    for (int j = 0; j < k; ++j) {
        Scalar sum_dy = Scalar(0);
        Scalar sum_dy_xhat = Scalar(0);
        for (int i = 0; i < n; ++i) {
            sum_dy += d_y(i, j);
            sum_dy_xhat += d_y(i, j) * x_hat(i, j);
        }
        g.d_beta(0, j) = sum_dy;
        g.d_gamma(0, j) = sum_dy_xhat;
        Scalar gj = cache.gamma(0, j);
        Scalar isj = cache.inv_std(0, j);
        if (cache.mode == Mode::Train) {
            for (int i = 0; i < n; ++i) {
                Scalar d_xhat = d_y(i, j) * gj;
                g.d_x(i, j) = isj / Scalar(n) *
                              (Scalar(n) * d_xhat - gj * sum_dy - x_hat(i, j) * gj * sum_dy_xhat);
            }
        } else {
            // Eval mode is an affine map with frozen statistics.
            for (int i = 0; i < n; ++i) g.d_x(i, j) = d_y(i, j) * gj * isj;
        }
    }
    return g;
}

// ---- sigmoid / bce ---------------------------------------------------------

Matrix sigmoid(const Matrix& x) {
    Matrix y = x;
    for (Scalar& v : y.values()) {
        if (v >= Scalar(0)) {
            v = Scalar(1) / (Scalar(1) + std::exp(-v));
        } else {
            Scalar e = std::exp(v);
            v = e / (Scalar(1) + e);
        }
    }
    return y;
}

Matrix sigmoid_backward(const Matrix& d_y, const Matrix& y) {
    require(d_y.same_shape(y), "sigmoid_backward: shape mismatch");
    Matrix d_x = d_y;
    for (size_t i = 0; i < y.size(); ++i) {
        Scalar p = y.values()[i];
        d_x.values()[i] *= p * (Scalar(1) - p);
    }
    return d_x;
}

namespace {

void check_bce_shapes(const Matrix& probs, const Matrix& labels) {
    require(probs.same_shape(labels), "bce: probs and labels must have the same shape");
    require(probs.size() > 0, "bce: empty batch");
    for (Scalar y : labels.values())
        require(y == Scalar(0) || y == Scalar(1), "bce: labels must be 0 or 1");
}

} // namespace

Scalar bce_loss(const Matrix& probs, const Matrix& labels) {
    check_bce_shapes(probs, labels);
    Scalar lo = Scalar(kBceClamp);
    Scalar hi = Scalar(1) - Scalar(kBceClamp);
    Scalar acc = Scalar(0);
    for (size_t i = 0; i < probs.size(); ++i) {
        Scalar x = std::clamp(probs.values()[i], lo, hi);
        Scalar y = labels.values()[i];
        acc += -(y * std::log(x) + (Scalar(1) - y) * std::log(Scalar(1) - x));
    }
    return acc / Scalar(probs.size());
}

Matrix bce_backward(const Matrix& probs, const Matrix& labels) {
    check_bce_shapes(probs, labels);
    Scalar lo = Scalar(kBceClamp);
    Scalar hi = Scalar(1) - Scalar(kBceClamp);
    Scalar inv_n = Scalar(1) / Scalar(probs.size());
    Matrix d_x(probs.rows(), probs.cols());
    for (size_t i = 0; i < probs.size(); ++i) {
        Scalar x = probs.values()[i];
        if (x <= lo || x >= hi) continue; // clamped region: derivative is zero
        Scalar y = labels.values()[i];
        d_x.values()[i] = inv_n * (-(y / x) + (Scalar(1) - y) / (Scalar(1) - x));
    }
    return d_x;
}

} // namespace ooc::ops
