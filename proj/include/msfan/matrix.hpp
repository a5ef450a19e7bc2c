#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "msfan/error.hpp"

namespace msfan {

// Dense row-major matrix of doubles. The single carrier type for batches,
// parameters, memory banks and prototypes.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { data.assign(data.size(), v); }

    bool operator==(const Matrix& other) const = default;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// Plain products; _nt multiplies by the transpose of b, _tn by the transpose of a.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);

} // namespace msfan
