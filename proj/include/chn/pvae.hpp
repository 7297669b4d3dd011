#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "chn/adam.hpp"
#include "chn/dataset.hpp"
#include "chn/errors.hpp"
#include "chn/matrix.hpp"
#include "chn/mlp.hpp"
#include "chn/prob.hpp"
#include "chn/rng.hpp"

namespace chn {

enum class Link { kIdentity, kSigmoid };

inline Link link_for(FeatureKind kind) {
    return kind == FeatureKind::kBinary ? Link::kSigmoid : Link::kIdentity;
}

inline double apply_link(Link link, double eta) {
    return link == Link::kSigmoid ? sigmoid(eta) : eta;
}

// Feature-specific decoder head: one weight column and a bias extending the
// shared decoder output to one more feature.
struct HeadParams {
    std::vector<double> w;
    double b = 0.0;
    Link link = Link::kIdentity;
};

struct SetEncoderParams {
    Matrix embeddings;   // [n_features x e_dim], rows exist for every feature
    MlpParams point_net; // [e_j ; x_j] -> set-embedding contribution
};

struct EncoderParams {
    MlpParams trunk;        // set embedding -> hidden (tanh applied on output)
    MlpParams mu_head;      // hidden -> latent
    MlpParams logvar_head;  // hidden -> latent
};

struct DecoderParams {
    MlpParams trunk;  // z -> d (identity output of size d_dim)
    std::map<std::size_t, HeadParams> heads;
};

struct PvaeConfig {
    std::size_t e_dim = 30;
    std::size_t set_dim = 30;
    std::size_t latent_dim = 20;
    std::vector<std::size_t> point_hidden{30};
    std::vector<std::size_t> enc_hidden{30};
    std::vector<std::size_t> dec_hidden{30};
    std::size_t d_dim = 30;
    double output_variance = 0.1;
};

struct PvaeModel {
    PvaeConfig cfg;
    SetEncoderParams set_encoder;
    EncoderParams encoder;
    DecoderParams decoder;
    bool frozen = false;

    std::size_t n_features() const { return set_encoder.embeddings.rows; }
    std::size_t latent_dim() const { return cfg.latent_dim; }
    std::size_t d_dim() const { return cfg.d_dim; }
};

inline PvaeModel make_pvae(const PvaeConfig& cfg, std::size_t n_features, Rng& rng) {
    PvaeModel m;
    m.cfg = cfg;
    m.set_encoder.embeddings = Matrix(n_features, cfg.e_dim);
    const double a = std::sqrt(3.0 / static_cast<double>(cfg.e_dim));
    for (auto& x : m.set_encoder.embeddings.data) x = rng.uniform(-a, a);

    std::vector<std::size_t> pdims{cfg.e_dim + 1};
    pdims.insert(pdims.end(), cfg.point_hidden.begin(), cfg.point_hidden.end());
    pdims.push_back(cfg.set_dim);
    m.set_encoder.point_net = make_mlp(pdims, rng);

    std::vector<std::size_t> edims{cfg.set_dim};
    edims.insert(edims.end(), cfg.enc_hidden.begin(), cfg.enc_hidden.end());
    m.encoder.trunk = make_mlp(edims, rng);
    m.encoder.mu_head = make_mlp({edims.back(), cfg.latent_dim}, rng);
    m.encoder.logvar_head = make_mlp({edims.back(), cfg.latent_dim}, rng);

    std::vector<std::size_t> ddims{cfg.latent_dim};
    ddims.insert(ddims.end(), cfg.dec_hidden.begin(), cfg.dec_hidden.end());
    ddims.push_back(cfg.d_dim);
    m.decoder.trunk = make_mlp(ddims, rng);
    return m;
}

inline void freeze(PvaeModel& m) { m.frozen = true; }

// Heads are created per train-split feature before base training; the frozen
// base never gains or loses heads afterwards.
inline void attach_heads(PvaeModel& m, const std::vector<std::size_t>& features,
                         const std::vector<FeatureKind>& kinds, Rng& rng) {
    if (m.frozen) throw ContractViolation("attach_heads: model is frozen");
    for (std::size_t f : features) {
        HeadParams h;
        Matrix w = xavier_init(m.d_dim(), 1, rng);
        h.w = w.data;
        h.b = 0.0;
        h.link = link_for(kinds[f]);
        m.decoder.heads[f] = std::move(h);
    }
}

inline const HeadParams& head_at(const PvaeModel& m, std::size_t feature) {
    auto it = m.decoder.heads.find(feature);
    if (it == m.decoder.heads.end())
        throw std::invalid_argument("missing decoder head for feature " + std::to_string(feature));
    return it->second;
}

// All base-model tensors in a fixed order (embeddings, point net, encoder,
// decoder trunk, heads sorted by feature). This order defines flattening,
// checkpointing, and hashing.
inline TensorList collect_theta0(PvaeModel& m) {
    TensorList t;
    t.push_back(view("set_encoder.embeddings", m.set_encoder.embeddings));
    collect(m.set_encoder.point_net, "set_encoder.point_net", t);
    collect(m.encoder.trunk, "encoder.trunk", t);
    collect(m.encoder.mu_head, "encoder.mu_head", t);
    collect(m.encoder.logvar_head, "encoder.logvar_head", t);
    collect(m.decoder.trunk, "decoder.trunk", t);
    for (auto& [f, h] : m.decoder.heads) {
        t.push_back(view("decoder.head." + std::to_string(f) + ".w", h.w));
        t.push_back(view("decoder.head." + std::to_string(f) + ".b", h.b));
    }
    return t;
}

inline std::uint64_t theta0_hash(const PvaeModel& m) {
    return hash_tensors(collect_theta0(const_cast<PvaeModel&>(m)));
}

// ---------------------------------------------------------------------------
// Encoding

struct EncodeTape {
    std::vector<ObsPair> obs;  // sorted by feature index
    std::vector<MlpTape> point_tapes;
    std::vector<double> c;
    MlpTape trunk_tape;
    std::vector<double> h;  // post-tanh hidden
    MlpTape mu_tape, logvar_tape;
    std::vector<double> mu, logvar;
};

// c = sum_j point_net([e_j ; x_j]) over observed pairs (ascending feature
// index, making the reduction order fixed and the result permutation
// invariant bit-for-bit), then (mu, logvar) = encoder(c).
inline void encode_partial(const PvaeModel& m, std::span<const ObsPair> observed, EncodeTape& tape) {
    tape.obs.assign(observed.begin(), observed.end());
    std::sort(tape.obs.begin(), tape.obs.end(),
              [](const ObsPair& a, const ObsPair& b) { return a.feature < b.feature; });

    tape.c.assign(m.cfg.set_dim, 0.0);
    tape.point_tapes.clear();
    tape.point_tapes.resize(tape.obs.size());
    std::vector<double> in(m.cfg.e_dim + 1);
    for (std::size_t i = 0; i < tape.obs.size(); ++i) {
        const auto& o = tape.obs[i];
        if (o.feature >= m.n_features())
            throw std::invalid_argument("encode_partial: unknown feature index " + std::to_string(o.feature));
        auto e = m.set_encoder.embeddings.row(o.feature);
        std::copy(e.begin(), e.end(), in.begin());
        in[m.cfg.e_dim] = o.value;
        auto p = mlp_forward(m.set_encoder.point_net, in, &tape.point_tapes[i]);
        for (std::size_t d = 0; d < tape.c.size(); ++d) tape.c[d] += p[d];
    }

    auto hpre = mlp_forward(m.encoder.trunk, tape.c, &tape.trunk_tape);
    tape.h.resize(hpre.size());
    for (std::size_t i = 0; i < hpre.size(); ++i) tape.h[i] = std::tanh(hpre[i]);
    tape.mu = mlp_forward(m.encoder.mu_head, tape.h, &tape.mu_tape);
    tape.logvar = mlp_forward(m.encoder.logvar_head, tape.h, &tape.logvar_tape);
}

inline std::pair<std::vector<double>, std::vector<double>> encode_partial(
    const PvaeModel& m, std::span<const ObsPair> observed) {
    EncodeTape tape;
    encode_partial(m, observed, tape);
    return {tape.mu, tape.logvar};
}

// Posterior mean (no sampling) - the representation handed to adaptation
// methods. Read-only and deterministic.
inline std::vector<double> latent_mean(const PvaeModel& m, std::span<const ObsPair> observed) {
    return encode_partial(m, observed).first;
}

struct DecodeTape {
    MlpTape trunk_tape;
    std::vector<double> d;  // shared decoder output
};

inline void decode_trunk(const PvaeModel& m, std::span<const double> z, DecodeTape& tape) {
    tape.d = mlp_forward(m.decoder.trunk, z, &tape.trunk_tape);
}

inline std::vector<double> decode_trunk(const PvaeModel& m, std::span<const double> z) {
    DecodeTape t;
    decode_trunk(m, z, t);
    return t.d;
}

inline double head_eta(const HeadParams& h, std::span<const double> d) {
    if (h.w.size() != d.size()) throw std::invalid_argument("head/trunk dimension mismatch");
    return dot(h.w, d) + h.b;
}

// Pre-link prediction parameter per feature; factorizes across features.
inline std::vector<double> decode(const PvaeModel& m, std::span<const double> z,
                                  std::span<const std::size_t> features) {
    const auto d = decode_trunk(m, z);
    std::vector<double> eta;
    eta.reserve(features.size());
    for (std::size_t f : features) eta.push_back(head_eta(head_at(m, f), d));
    return eta;
}

// link(w . d(z-hat) + b) with z-hat the posterior mean of the observed pairs.
// The predicted feature's own value must not appear in `observed`.
inline double predict_feature(const PvaeModel& m, const HeadParams& head,
                              std::span<const ObsPair> observed) {
    const auto mu = latent_mean(m, observed);
    const auto d = decode_trunk(m, mu);
    return apply_link(head.link, head_eta(head, d));
}

// ---------------------------------------------------------------------------
// ELBO

struct HeadGrads {
    std::vector<double> w;
    double b = 0.0;
};

struct PvaeGrads {
    Matrix d_embeddings;
    MlpParams d_point_net, d_enc_trunk, d_mu_head, d_logvar_head, d_dec_trunk;
    std::map<std::size_t, HeadGrads> d_heads;
};

inline PvaeGrads zero_grads(const PvaeModel& m) {
    PvaeGrads g;
    g.d_embeddings = Matrix(m.set_encoder.embeddings.rows, m.set_encoder.embeddings.cols);
    g.d_point_net = zero_like(m.set_encoder.point_net);
    g.d_enc_trunk = zero_like(m.encoder.trunk);
    g.d_mu_head = zero_like(m.encoder.mu_head);
    g.d_logvar_head = zero_like(m.encoder.logvar_head);
    g.d_dec_trunk = zero_like(m.decoder.trunk);
    for (const auto& [f, h] : m.decoder.heads) g.d_heads[f] = {std::vector<double>(h.w.size(), 0.0), 0.0};
    return g;
}

inline TensorList collect_grads(PvaeGrads& g) {
    TensorList t;
    t.push_back(view("set_encoder.embeddings", g.d_embeddings));
    collect(g.d_point_net, "set_encoder.point_net", t);
    collect(g.d_enc_trunk, "encoder.trunk", t);
    collect(g.d_mu_head, "encoder.mu_head", t);
    collect(g.d_logvar_head, "encoder.logvar_head", t);
    collect(g.d_dec_trunk, "decoder.trunk", t);
    for (auto& [f, h] : g.d_heads) {
        t.push_back(view("decoder.head." + std::to_string(f) + ".w", h.w));
        t.push_back(view("decoder.head." + std::to_string(f) + ".b", h.b));
    }
    return t;
}

// Single-sample Monte Carlo ELBO of one row: reconstruction log-likelihood of
// every feature with a ground truth (kept after masking plus masked-out) minus
// KL(q(z|kept) || N(0, I)). When `grads` is given, exact gradients of the
// returned value w.r.t. every base parameter are accumulated into it.
// `kl_weight` (training-time warm-up) scales the KL term; 1 is the true ELBO.
inline double elbo(const PvaeModel& m, const std::vector<ObsPair>& kept,
                   const std::vector<ObsPair>& hidden, Rng& reparam_rng, PvaeGrads* grads = nullptr,
                   double kl_weight = 1.0, double* kl_out = nullptr) {
    std::vector<ObsPair> targets;
    targets.reserve(kept.size() + hidden.size());
    std::merge(kept.begin(), kept.end(), hidden.begin(), hidden.end(), std::back_inserter(targets),
               [](const ObsPair& a, const ObsPair& b) { return a.feature < b.feature; });
    if (targets.empty()) throw std::invalid_argument("elbo: no reconstruction targets");

    EncodeTape etape;
    encode_partial(m, kept, etape);
    std::vector<double> eps;
    const auto z = reparameterize(etape.mu, etape.logvar, reparam_rng, &eps);
    DecodeTape dtape;
    decode_trunk(m, z, dtape);

    double recon_nll = 0.0;
    std::vector<double> deta(targets.size());  // d(elbo)/d eta per target
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto& [f, x] = targets[i];
        const HeadParams& h = head_at(m, f);
        const double eta = head_eta(h, dtape.d);
        if (h.link == Link::kSigmoid) {
            recon_nll += bernoulli_nll_from_logit(x, eta);
            deta[i] = -bernoulli_nll_dlogit(x, eta);
        } else {
            recon_nll += gaussian_nll(x, eta, m.cfg.output_variance);
            deta[i] = -gaussian_nll_dmu(x, eta, m.cfg.output_variance);
        }
    }
    const double kl = kl_standard_normal(etape.mu, etape.logvar);
    if (kl_out) *kl_out = kl;
    const double value = -recon_nll - kl_weight * kl;
    if (!grads) return value;

    // reconstruction -> shared decoder output
    std::vector<double> dd(m.d_dim(), 0.0);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const std::size_t f = targets[i].feature;
        const HeadParams& h = m.decoder.heads.at(f);
        HeadGrads& hg = grads->d_heads.at(f);
        for (std::size_t k = 0; k < dd.size(); ++k) {
            hg.w[k] += deta[i] * dtape.d[k];
            dd[k] += deta[i] * h.w[k];
        }
        hg.b += deta[i];
    }
    auto dz = mlp_backward(m.decoder.trunk, dtape.trunk_tape, dd, grads->d_dec_trunk);

    // through the sample into (mu, logvar); KL contributes with weight -1
    std::vector<double> dmu(m.latent_dim(), 0.0), dlv(m.latent_dim(), 0.0);
    reparameterize_backward(etape.logvar, eps, dz, dmu, dlv);
    kl_standard_normal_backward(etape.mu, etape.logvar, -kl_weight, dmu, dlv);

    auto dh1 = mlp_backward(m.encoder.mu_head, etape.mu_tape, dmu, grads->d_mu_head);
    auto dh2 = mlp_backward(m.encoder.logvar_head, etape.logvar_tape, dlv, grads->d_logvar_head);
    std::vector<double> dh(dh1.size());
    for (std::size_t i = 0; i < dh.size(); ++i) dh[i] = (dh1[i] + dh2[i]) * (1.0 - etape.h[i] * etape.h[i]);
    auto dc = mlp_backward(m.encoder.trunk, etape.trunk_tape, dh, grads->d_enc_trunk);

    // every point contribution receives dc; embeddings pick up their slice
    for (std::size_t i = 0; i < etape.obs.size(); ++i) {
        auto din = mlp_backward(m.set_encoder.point_net, etape.point_tapes[i], dc, grads->d_point_net);
        auto erow = grads->d_embeddings.row(etape.obs[i].feature);
        for (std::size_t k = 0; k < m.cfg.e_dim; ++k) erow[k] += din[k];
    }
    return value;
}

// ---------------------------------------------------------------------------
// Base training

struct TrainBaseConfig {
    std::size_t epochs = 300;
    std::size_t batch_size = 100;
    double lr = 1e-2;
    double weight_decay = 0.0;
    double p_keep = 0.8;
    // KL weight ramps linearly from 0 to 1 over this many epochs; guards
    // against posterior collapse at desk scale.
    std::size_t kl_warmup_epochs = 50;
};

// Mini-batch Adam ascent on the per-row ELBO with Bernoulli masking resampled
// per row per epoch. Meta-train and meta-test features are invisible: they
// never enter the encoder input or the reconstruction targets. Returns the
// per-epoch mean ELBO trace.
inline std::vector<double> train_base(PvaeModel& m, const SparseDataset& ds,
                                      const std::vector<std::size_t>& train_features,
                                      const TrainBaseConfig& cfg, std::uint64_t seed) {
    if (m.frozen) throw ContractViolation("train_base: model is frozen");
    if (train_features.empty()) throw std::invalid_argument("train_base: empty train set");
    if (m.decoder.heads.size() != train_features.size())
        throw std::invalid_argument("train_base: heads must exist exactly for the train features");
    for (std::size_t f : train_features)
        if (!m.decoder.heads.count(f))
            throw std::invalid_argument("train_base: missing head for train feature " + std::to_string(f));

    Rng shuffle_rng(seed, stream::kShuffle);
    Rng mask_rng(seed, stream::kMask);
    Rng reparam_rng(seed, stream::kReparam);
    const auto train_mask = feature_mask(train_features, ds.n_features);

    TensorList params = collect_theta0(m);
    AdamState adam(total_size(params));
    std::vector<double> trace;
    trace.reserve(cfg.epochs);

    std::vector<std::size_t> order(ds.n_rows);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            const std::size_t j = i + static_cast<std::size_t>(shuffle_rng.below(order.size() - i));
            std::swap(order[i], order[j]);
        }
        const double kl_weight = cfg.kl_warmup_epochs == 0
                                     ? 1.0
                                     : std::min(1.0, static_cast<double>(epoch + 1) /
                                                         static_cast<double>(cfg.kl_warmup_epochs));
        double epoch_sum = 0.0;
        std::size_t epoch_rows = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            PvaeGrads grads = zero_grads(m);
            std::size_t used = 0;
            for (std::size_t i = start; i < stop; ++i) {
                const auto obs = observed_pairs(ds, order[i], &train_mask);
                if (obs.empty()) continue;
                const auto masked = bernoulli_mask(obs, cfg.p_keep, mask_rng);
                double kl = 0.0;
                const double v = elbo(m, masked.kept, masked.hidden, reparam_rng, &grads, kl_weight, &kl);
                epoch_sum += v - (1.0 - kl_weight) * kl;  // trace reports the true ELBO
                ++used;
            }
            if (used == 0) continue;
            epoch_rows += used;
            TensorList gl = collect_grads(grads);
            const double scale = -1.0 / static_cast<double>(used);  // ascent on the mean ELBO
            for (auto& t : gl)
                for (std::size_t k = 0; k < t.size(); ++k) t.data[k] *= scale;
            adam_step(adam, params, gl, cfg.lr, cfg.weight_decay);
        }
        trace.push_back(epoch_rows ? epoch_sum / static_cast<double>(epoch_rows) : 0.0);
    }
    return trace;
}

// ---------------------------------------------------------------------------
// Frozen-model row cache

// Once the base is frozen, each row's latent mean and shared decoder output
// are constants; adaptation and evaluation reuse them heavily.
struct RowCache {
    Matrix z;  // n_rows x latent_dim
    Matrix d;  // n_rows x d_dim
};

inline RowCache build_row_cache(const PvaeModel& m, const SparseDataset& ds,
                                const std::vector<std::uint8_t>& visible_features) {
    if (!m.frozen) throw ContractViolation("build_row_cache: base model must be frozen");
    RowCache cache;
    cache.z = Matrix(ds.n_rows, m.latent_dim());
    cache.d = Matrix(ds.n_rows, m.d_dim());
    for (std::size_t r = 0; r < ds.n_rows; ++r) {
        const auto obs = observed_pairs(ds, r, &visible_features);
        const auto mu = latent_mean(m, obs);
        std::copy(mu.begin(), mu.end(), cache.z.row(r).begin());
        const auto d = decode_trunk(m, mu);
        std::copy(d.begin(), d.end(), cache.d.row(r).begin());
    }
    return cache;
}

}  // namespace chn
