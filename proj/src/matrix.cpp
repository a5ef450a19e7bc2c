#include "msfan/matrix.hpp"

#include <string>

namespace msfan {

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm2(std::span<const double> a) {
    double acc = 0.0;
    for (double v : a) acc += v * v;
    return std::sqrt(acc);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw DimensionError("axpy: size mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw DimensionError("matmul: " + std::to_string(a.cols) + " vs " + std::to_string(b.rows));
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
        }
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols)
        throw DimensionError("matmul_nt: " + std::to_string(a.cols) + " vs " + std::to_string(b.cols));
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.rows; ++j) out(i, j) = dot(a.row(i), b.row(j));
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows)
        throw DimensionError("matmul_tn: " + std::to_string(a.rows) + " vs " + std::to_string(b.rows));
    Matrix out(a.cols, b.cols);
    for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double ari = a(r, i);
            if (ari == 0.0) continue;
            for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += ari * b(r, j);
        }
    return out;
}

} // namespace msfan
