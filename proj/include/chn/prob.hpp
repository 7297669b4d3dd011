#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "chn/rng.hpp"

namespace chn {

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

// Clamp applied before every exponentiation of a log-variance, identically
// in forward and backward passes (gradient is zero outside the range).
inline double clamp_logvar(double lv) {
    if (lv < kLogvarMin) return kLogvarMin;
    if (lv > kLogvarMax) return kLogvarMax;
    return lv;
}

inline bool logvar_in_range(double lv) { return lv > kLogvarMin && lv < kLogvarMax; }

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// z = mu + exp(logvar/2) * eps, eps ~ N(0, I). The draws are returned so a
// backward pass can route gradients to mu and logvar.
inline std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar,
                                          Rng& rng, std::vector<double>* eps_out = nullptr) {
    if (mu.size() != logvar.size()) throw std::invalid_argument("reparameterize: shape mismatch");
    std::vector<double> z(mu.size());
    if (eps_out) eps_out->resize(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double eps = rng.normal();
        if (eps_out) (*eps_out)[i] = eps;
        z[i] = mu[i] + std::exp(clamp_logvar(logvar[i]) / 2.0) * eps;
    }
    return z;
}

// dL/dmu += dz, dL/dlogvar += dz * eps * exp(lv/2) / 2
inline void reparameterize_backward(std::span<const double> logvar, std::span<const double> eps,
                                    std::span<const double> dz, std::span<double> dmu,
                                    std::span<double> dlogvar) {
    for (std::size_t i = 0; i < dz.size(); ++i) {
        dmu[i] += dz[i];
        if (logvar_in_range(logvar[i]))
            dlogvar[i] += dz[i] * eps[i] * 0.5 * std::exp(clamp_logvar(logvar[i]) / 2.0);
    }
}

// KL(N(mu, diag(exp(logvar))) || N(0, I)) in nats; >= 0, zero iff mu=0, logvar=0.
inline double kl_standard_normal(std::span<const double> mu, std::span<const double> logvar) {
    if (mu.size() != logvar.size()) throw std::invalid_argument("kl_standard_normal: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double lv = clamp_logvar(logvar[i]);
        s += 0.5 * (mu[i] * mu[i] + std::exp(lv) - 1.0 - lv);
    }
    return s;
}

inline void kl_standard_normal_backward(std::span<const double> mu, std::span<const double> logvar,
                                        double dkl, std::span<double> dmu, std::span<double> dlogvar) {
    for (std::size_t i = 0; i < mu.size(); ++i) {
        dmu[i] += dkl * mu[i];
        if (logvar_in_range(logvar[i]))
            dlogvar[i] += dkl * 0.5 * (std::exp(clamp_logvar(logvar[i])) - 1.0);
    }
}

// Negative log density of N(mu, var) at x, fixed variance.
inline double gaussian_nll(double x, double mu, double var) {
    if (var <= 0.0) throw std::invalid_argument("gaussian_nll: var must be positive");
    const double d = x - mu;
    return 0.5 * std::log(2.0 * std::numbers::pi * var) + d * d / (2.0 * var);
}

inline double gaussian_nll_dmu(double x, double mu, double var) { return (mu - x) / var; }

// -[x log sigma(l) + (1-x) log(1-sigma(l))], stable for |l| up to ~700.
inline double bernoulli_nll_from_logit(double x, double logit_val) {
    if (x != 0.0 && x != 1.0) throw std::invalid_argument("bernoulli_nll_from_logit: x must be 0 or 1");
    const double m = logit_val > 0.0 ? logit_val : 0.0;
    return m - x * logit_val + std::log1p(std::exp(-std::fabs(logit_val)));
}

inline double bernoulli_nll_dlogit(double x, double logit_val) { return sigmoid(logit_val) - x; }

}  // namespace chn
