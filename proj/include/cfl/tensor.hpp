#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cfl {

// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

// Flattened model parameters. Layout is fixed by whichever model produced it.
struct ParamVector {
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
    friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

// Gradient of a batch loss; same layout as the ParamVector it was taken at.
struct GradientVector {
    std::vector<double> values;

    std::size_t size() const noexcept { return values.size(); }
    friend bool operator==(const GradientVector&, const GradientVector&) = default;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
bool all_finite(std::span<const double> a);

} // namespace cfl
