#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "chn/matrix.hpp"
#include "chn/rng.hpp"

namespace chn {

// Xavier (Glorot) uniform init: entries i.i.d. Uniform(-a, a), a = sqrt(6/(fan_in+fan_out)).
// Returned matrix is [fan_out x fan_in]; biases are always initialized to zero elsewhere.
inline Matrix xavier_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    if (fan_in == 0 || fan_out == 0) throw std::invalid_argument("xavier_init: zero fan dimension");
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix m(fan_out, fan_in);
    for (auto& x : m.data) x = rng.uniform(-a, a);
    return m;
}

struct MlpLayer {
    Matrix W;               // [out x in]
    std::vector<double> b;  // [out]
};

// Feed-forward net: tanh on every hidden layer, identity at the output.
// Link functions (sigmoid etc.) are applied by consumers.
struct MlpParams {
    std::vector<MlpLayer> layers;

    std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().W.cols; }
    std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().W.rows; }
};

// dims = {in, hidden..., out}
inline MlpParams make_mlp(const std::vector<std::size_t>& dims, Rng& rng) {
    if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least in and out dims");
    MlpParams p;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
        p.layers.push_back({xavier_init(dims[i], dims[i + 1], rng), std::vector<double>(dims[i + 1], 0.0)});
    return p;
}

inline MlpParams zero_like(const MlpParams& p) {
    MlpParams g;
    for (const auto& l : p.layers)
        g.layers.push_back({Matrix(l.W.rows, l.W.cols), std::vector<double>(l.b.size(), 0.0)});
    return g;
}

inline void collect(MlpParams& p, const std::string& prefix, TensorList& out) {
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        out.push_back(view(prefix + ".L" + std::to_string(i) + ".W", p.layers[i].W));
        out.push_back(view(prefix + ".L" + std::to_string(i) + ".b", p.layers[i].b));
    }
}

// Cached activations from one forward pass; act.back() is the output.
struct MlpTape {
    std::vector<double> input;
    std::vector<std::vector<double>> act;
};

inline std::vector<double> mlp_forward(const MlpParams& p, std::span<const double> input,
                                       MlpTape* tape = nullptr) {
    if (p.layers.empty()) throw std::invalid_argument("mlp_forward: empty net");
    if (input.size() != p.in_dim()) throw std::invalid_argument("mlp_forward: input dim mismatch");
    if (tape) {
        tape->input.assign(input.begin(), input.end());
        tape->act.clear();
        tape->act.reserve(p.layers.size());
    }
    std::vector<double> cur(input.begin(), input.end());
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
        const auto& l = p.layers[li];
        const bool last = li + 1 == p.layers.size();
        std::vector<double> next(l.W.rows);
        for (std::size_t r = 0; r < l.W.rows; ++r) {
            double s = l.b[r];
            const double* wr = l.W.data.data() + r * l.W.cols;
            for (std::size_t c = 0; c < l.W.cols; ++c) s += wr[c] * cur[c];
            next[r] = last ? s : std::tanh(s);
        }
        cur = std::move(next);
        if (tape) tape->act.push_back(cur);
    }
    return cur;
}

// Reverse pass for (output_grad . output). Accumulates parameter gradients
// into `grad` (same shapes as `p`) and returns the gradient w.r.t. the input.
inline std::vector<double> mlp_backward(const MlpParams& p, const MlpTape& tape,
                                        std::span<const double> output_grad, MlpParams& grad) {
    if (tape.act.size() != p.layers.size()) throw std::invalid_argument("mlp_backward: stale tape");
    if (output_grad.size() != p.out_dim()) throw std::invalid_argument("mlp_backward: grad dim mismatch");
    if (grad.layers.size() != p.layers.size()) throw std::invalid_argument("mlp_backward: grad shape mismatch");

    std::vector<double> d(output_grad.begin(), output_grad.end());
    for (std::size_t li = p.layers.size(); li-- > 0;) {
        const auto& l = p.layers[li];
        auto& gl = grad.layers[li];
        const bool last = li + 1 == p.layers.size();
        if (!last) {
            // tanh'(pre) = 1 - act^2, from the stored post-activation
            const auto& a = tape.act[li];
            for (std::size_t r = 0; r < d.size(); ++r) d[r] *= 1.0 - a[r] * a[r];
        }
        const std::vector<double>& below = (li == 0) ? tape.input : tape.act[li - 1];
        for (std::size_t r = 0; r < l.W.rows; ++r) {
            gl.b[r] += d[r];
            double* gw = gl.W.data.data() + r * l.W.cols;
            for (std::size_t c = 0; c < l.W.cols; ++c) gw[c] += d[r] * below[c];
        }
        std::vector<double> dprev(l.W.cols, 0.0);
        for (std::size_t r = 0; r < l.W.rows; ++r) {
            const double* wr = l.W.data.data() + r * l.W.cols;
            for (std::size_t c = 0; c < l.W.cols; ++c) dprev[c] += wr[c] * d[r];
        }
        d = std::move(dprev);
    }
    return d;
}

}  // namespace chn
