#pragma once

#include <cmath>

#include "ddvi/tensor.hpp"

namespace ddvi::la {

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::check(a.is_matrix() && b.is_matrix() && a.cols() == b.rows(),
                  "la::matmul: bad shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor c({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.data.data() + i * k;
        double* ci = c.data.data() + i * m;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ai[kk];
            if (av == 0.0) continue;
            const double* bk = b.data.data() + kk * m;
            for (std::size_t j = 0; j < m; ++j) ci[j] += av * bk[j];
        }
    }
    return c;
}

inline void add_row_inplace(Tensor& a, const Tensor& r) {
    detail::check(r.rows() == 1 && r.cols() == a.cols(), "la::add_row: shape mismatch");
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) += r.data[j];
}

inline void relu_inplace(Tensor& a) {
    for (double& v : a.data)
        if (v < 0.0) v = 0.0;
}

inline double sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline void sigmoid_inplace(Tensor& a) {
    for (double& v : a.data) v = sigmoid(v);
}

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline Tensor transpose(const Tensor& a) {
    Tensor t({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

inline double logsumexp(std::span<const double> xs) {
    double mx = xs[0];
    for (double x : xs) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : xs) s += std::exp(x - mx);
    return mx + std::log(s);
}

}  // namespace ddvi::la
