// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "ooc/common.hpp"

namespace ooc {

/// Dense row-major matrix in the globally configured precision.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols);
    Matrix(int rows, int cols, std::vector<Scalar> values);

    static Matrix identity(int n);
    static Matrix row_vector(std::vector<Scalar> values);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    Scalar& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    Scalar operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

    Scalar* row_ptr(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
    const Scalar* row_ptr(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

    std::vector<Scalar>& values() { return data_; }
    const std::vector<Scalar>& values() const { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    void fill(Scalar v);
    void set_zero() { fill(Scalar(0)); }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<Scalar> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix transpose(const Matrix& a);
Matrix col_sums(const Matrix& a);                    // 1 x cols
void add_in_place(Matrix& dst, const Matrix& src);
void add_scaled(Matrix& dst, const Matrix& src, Scalar factor);
Matrix scaled(const Matrix& a, Scalar factor);

/// Trainable tensor: a value paired with its gradient accumulator.
struct ParamTensor {
    Matrix value;
    Matrix grad;
    std::string name;

    ParamTensor() = default;
    ParamTensor(std::string name, Matrix value_in)
        : value(std::move(value_in)),
          grad(value.rows(), value.cols()),
          name(std::move(name)) {}

    void zero_grad() { grad.set_zero(); }
    size_t size() const { return value.size(); }
};

} // namespace ooc
