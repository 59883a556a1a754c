// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#include "ooc/matrix.hpp"

#include <algorithm>
#include <utility>

namespace ooc {

namespace {

void check_shape(bool ok, const char* what) {
    if (!ok) throw Error(std::string("matrix: shape mismatch in ") + what);
}

} // namespace

Matrix::Matrix(int rows, int cols)
    : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, Scalar(0)) {
    if (rows < 0 || cols < 0) throw Error("matrix: negative dimension");
}

Matrix::Matrix(int rows, int cols, std::vector<Scalar> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (rows < 0 || cols < 0) throw Error("matrix: negative dimension");
    if (data_.size() != static_cast<size_t>(rows) * cols)
        throw Error("matrix: data length does not match rows*cols");
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = Scalar(1);
    return m;
}

Matrix Matrix::row_vector(std::vector<Scalar> values) {
    int n = static_cast<int>(values.size());
    return Matrix(1, n, std::move(values));
}

void Matrix::fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_shape(a.cols() == b.rows(), "matmul");
    Matrix out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        const Scalar* arow = a.row_ptr(i);
        Scalar* orow = out.row_ptr(i);
        for (int k = 0; k < a.cols(); ++k) {
            Scalar aik = arow[k];
            if (aik == Scalar(0)) continue;
            const Scalar* brow = b.row_ptr(k);
            for (int j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    check_shape(a.rows() == b.rows(), "matmul_tn");
    Matrix out(a.cols(), b.cols());
    for (int k = 0; k < a.rows(); ++k) {
        const Scalar* arow = a.row_ptr(k);
        const Scalar* brow = b.row_ptr(k);
        for (int i = 0; i < a.cols(); ++i) {
            Scalar aki = arow[i];
            if (aki == Scalar(0)) continue;
            Scalar* orow = out.row_ptr(i);
            for (int j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    check_shape(a.cols() == b.cols(), "matmul_nt");
    Matrix out(a.rows(), b.rows());
    for (int i = 0; i < a.rows(); ++i) {
        const Scalar* arow = a.row_ptr(i);
        Scalar* orow = out.row_ptr(i);
        for (int j = 0; j < b.rows(); ++j) {
            const Scalar* brow = b.row_ptr(j);
            Scalar acc = Scalar(0);
            for (int k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
            orow[j] = acc;
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Matrix col_sums(const Matrix& a) {
    Matrix out(1, a.cols());
    for (int i = 0; i < a.rows(); ++i) {
        const Scalar* arow = a.row_ptr(i);
        Scalar* orow = out.row_ptr(0);
        for (int j = 0; j < a.cols(); ++j) orow[j] += arow[j];
    }
    return out;
}

void add_in_place(Matrix& dst, const Matrix& src) {
    check_shape(dst.same_shape(src), "add_in_place");
    for (size_t i = 0; i < dst.size(); ++i) dst.values()[i] += src.values()[i];
}

void add_scaled(Matrix& dst, const Matrix& src, Scalar factor) {
    check_shape(dst.same_shape(src), "add_scaled");
    for (size_t i = 0; i < dst.size(); ++i) dst.values()[i] += factor * src.values()[i];
}

Matrix scaled(const Matrix& a, Scalar factor) {
    Matrix out = a;
    for (Scalar& v : out.values()) v *= factor;
    return out;
}

} // namespace ooc
