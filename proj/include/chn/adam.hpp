#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "chn/errors.hpp"
#include "chn/matrix.hpp"

namespace chn {

// Adam with bias correction. Epsilon is added after the square root
// (denominator = sqrt(v_hat) + eps), the standard formulation.
struct AdamState {
    std::size_t step = 0;
    std::vector<double> m, v;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// One minimization step. `grads` must mirror `params` tensor-for-tensor.
// Weight decay is the classic L2-on-gradient form: g += wd * param.
inline void adam_step(AdamState& state, const TensorList& params, const TensorList& grads, double lr,
                      double weight_decay = 0.0) {
    if (lr <= 0.0) throw std::invalid_argument("adam_step: lr must be positive");
    const std::size_t n = total_size(params);
    if (n != total_size(grads)) throw std::invalid_argument("adam_step: param/grad size mismatch");
    if (state.m.size() != n) throw std::invalid_argument("adam_step: state size mismatch");

    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    std::size_t pos = 0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        double* p = params[t].data;
        const double* g = grads[t].data;
        for (std::size_t i = 0; i < params[t].size(); ++i, ++pos) {
            double gi = g[i];
            if (!std::isfinite(gi)) throw NumericalError("adam_step: non-finite gradient in " + grads[t].name);
            gi += weight_decay * p[i];
            state.m[pos] = state.beta1 * state.m[pos] + (1.0 - state.beta1) * gi;
            state.v[pos] = state.beta2 * state.v[pos] + (1.0 - state.beta2) * gi * gi;
            const double mhat = state.m[pos] / c1;
            const double vhat = state.v[pos] / c2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace chn
