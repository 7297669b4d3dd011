#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "chn/errors.hpp"

namespace chn {

// Dense row-major matrix of doubles. All math in this project is 64-bit.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::size_t size() const { return data.size(); }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

// Named view into one parameter tensor. Vectors are exposed as 1 x n.
// The order in which views are collected defines the flattening, update,
// checkpoint, and hash order for a model, so it must be deterministic.
struct TensorView {
    std::string name;
    double* data = nullptr;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const { return rows * cols; }
};

using TensorList = std::vector<TensorView>;

inline TensorView view(std::string name, Matrix& m) {
    return TensorView{std::move(name), m.data.data(), m.rows, m.cols};
}

inline TensorView view(std::string name, std::vector<double>& v) {
    return TensorView{std::move(name), v.data(), 1, v.size()};
}

inline TensorView view(std::string name, double& s) { return TensorView{std::move(name), &s, 1, 1}; }

inline std::size_t total_size(const TensorList& tensors) {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

inline std::vector<double> flatten(const TensorList& tensors) {
    std::vector<double> out;
    out.reserve(total_size(tensors));
    for (const auto& t : tensors) out.insert(out.end(), t.data, t.data + t.size());
    return out;
}

inline void unflatten(std::span<const double> flat, const TensorList& tensors) {
    if (flat.size() != total_size(tensors)) throw std::invalid_argument("unflatten: size mismatch");
    std::size_t pos = 0;
    for (const auto& t : tensors) {
        std::memcpy(t.data, flat.data() + pos, t.size() * sizeof(double));
        pos += t.size();
    }
}

inline void require_all_finite(const TensorList& tensors, const char* where) {
    for (const auto& t : tensors)
        for (std::size_t i = 0; i < t.size(); ++i)
            if (!std::isfinite(t.data[i]))
                throw NumericalError(std::string(where) + ": non-finite value in " + t.name);
}

// FNV-1a over tensor names and raw value bytes, in collection order.
inline std::uint64_t hash_tensors(const TensorList& tensors) {
    std::uint64_t h = 14695981039346656037ull;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& t : tensors) {
        mix(t.name.data(), t.name.size());
        mix(t.data, t.size() * sizeof(double));
    }
    return h;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace chn
