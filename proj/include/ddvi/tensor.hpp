#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddvi {

// Dense n-dimensional array of doubles. Values are stored flat in row-major
// order; most of the library works with 1-D vectors and 2-D matrices.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty unless populated by an optimizer/backward pass

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(count(shape), fill) {}

    static Tensor zeros(std::size_t r, std::size_t c) { return Tensor({r, c}); }

    static Tensor scalar(double v) {
        Tensor t({1, 1});
        t.data[0] = v;
        return t;
    }

    static Tensor row(std::vector<double> v) {
        Tensor t;
        t.shape = {1, v.size()};
        t.data = std::move(v);
        return t;
    }

    static Tensor column(std::vector<double> v) {
        Tensor t;
        t.shape = {v.size(), 1};
        t.data = std::move(v);
        return t;
    }

    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
        if (v.size() != r * c) throw std::invalid_argument("Tensor::matrix: size mismatch");
        Tensor t;
        t.shape = {r, c};
        t.data = std::move(v);
        return t;
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    std::size_t numel() const { return data.size(); }
    bool is_matrix() const { return shape.size() == 2; }

    std::size_t rows() const {
        require_matrix("rows");
        return shape[0];
    }
    std::size_t cols() const {
        require_matrix("cols");
        return shape[1];
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    std::span<double> row_span(std::size_t i) {
        return {data.data() + i * shape[1], shape[1]};
    }
    std::span<const double> row_span(std::size_t i) const {
        return {data.data() + i * shape[1], shape[1]};
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

private:
    void require_matrix(const char* what) const {
        if (shape.size() != 2)
            throw std::invalid_argument(std::string("Tensor::") + what + ": tensor is not 2-D");
    }
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace detail {

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

}  // namespace ddvi
