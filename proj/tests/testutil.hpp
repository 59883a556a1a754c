// Copyright 2026 the oocd authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "ooc/matrix.hpp"

namespace ooc::test {

inline constexpr bool kDoublePrecision = sizeof(Scalar) == 8;

/// Gradient-check tolerances for the configured precision.
inline constexpr double kGradTol = kDoublePrecision ? 1e-7 : 1e-4;
inline constexpr double kFdStep = kDoublePrecision ? 1e-5 : 1e-2;

/// Relative error with a floor so near-zero gradients are judged on a tight
/// absolute scale instead of exploding the ratio.
inline double rel_err(double a, double b) {
    double floor = kDoublePrecision ? 1e-3 : 1e-1;
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

/// Central finite difference of f with respect to a single entry.
inline double central_diff(const std::function<double()>& f, Scalar& x, double h = kFdStep) {
    Scalar saved = x;
    x = saved + Scalar(h);
    double fp = f();
    x = saved - Scalar(h);
    double fm = f();
    x = saved;
    return (fp - fm) / (2.0 * h);
}

/// Max rel_err between analytic gradients and finite differences of f over
/// every entry of `values`.
inline double max_grad_err(const std::function<double()>& f, Matrix& values,
                           const Matrix& analytic) {
    double worst = 0.0;
    for (size_t i = 0; i < values.size(); ++i) {
        double fd = central_diff(f, values.values()[i]);
        worst = std::max(worst, rel_err(static_cast<double>(analytic.values()[i]), fd));
    }
    return worst;
}

inline Matrix random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Scalar& v : m.values()) v = Scalar(rng.normal() * scale);
    return m;
}

inline Matrix random_unit_row(int cols, Rng& rng) {
    Matrix m = random_matrix(1, cols, rng);
    double norm = 0.0;
    for (Scalar v : m.values()) norm += static_cast<double>(v) * static_cast<double>(v);
    norm = std::sqrt(norm);
    for (Scalar& v : m.values()) v = Scalar(v / norm);
    return m;
}

} // namespace ooc::test
