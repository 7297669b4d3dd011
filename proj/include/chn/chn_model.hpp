#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "chn/adam.hpp"
#include "chn/dataset.hpp"
#include "chn/errors.hpp"
#include "chn/matrix.hpp"
#include "chn/mlp.hpp"
#include "chn/pvae.hpp"
#include "chn/prob.hpp"
#include "chn/rng.hpp"

namespace chn {

// The hypernetwork psi: per-point net f over [z ; x_n], aggregation by sum,
// context net g, metadata net h, and the parameter-prediction net emitting
// the flat head parameters (w_n, b_n).
struct ChnParams {
    MlpParams f_net;     // [latent_dim + 1] -> point embedding
    MlpParams g_net;     // point embedding -> context vector c_n
    MlpParams h_net;     // metadata input -> m_n (absent in no-metadata mode)
    MlpParams pred_net;  // [c_n ; m_n] -> d_dim + 1
    bool use_metadata = true;
    std::size_t meta_dim = 0;

    std::size_t d_dim() const { return pred_net.out_dim() - 1; }
    std::size_t context_dim() const { return g_net.out_dim(); }
};

struct ChnConfig {
    std::size_t point_dim = 25;
    std::vector<std::size_t> f_hidden{16};
    std::size_t context_dim = 25;
    std::vector<std::size_t> g_hidden{50};
    std::size_t meta_dim = 5;
    std::vector<std::size_t> h_hidden{10};
    std::vector<std::size_t> pred_hidden{256, 256};
};

// pred_net's final layer starts at zero so the untrained hypernetwork emits
// the neutral head (w = 0, b = 0) for every input.
inline ChnParams make_chn(const ChnConfig& cfg, std::size_t latent_dim, std::size_t d_dim,
                          std::size_t meta_input_dim, Rng& rng) {
    ChnParams p;
    std::vector<std::size_t> fd{latent_dim + 1};
    fd.insert(fd.end(), cfg.f_hidden.begin(), cfg.f_hidden.end());
    fd.push_back(cfg.point_dim);
    p.f_net = make_mlp(fd, rng);

    std::vector<std::size_t> gd{cfg.point_dim};
    gd.insert(gd.end(), cfg.g_hidden.begin(), cfg.g_hidden.end());
    gd.push_back(cfg.context_dim);
    p.g_net = make_mlp(gd, rng);

    p.use_metadata = meta_input_dim > 0;
    p.meta_dim = cfg.meta_dim;
    if (p.use_metadata) {
        std::vector<std::size_t> hd{meta_input_dim};
        hd.insert(hd.end(), cfg.h_hidden.begin(), cfg.h_hidden.end());
        hd.push_back(cfg.meta_dim);
        p.h_net = make_mlp(hd, rng);
    }

    std::vector<std::size_t> pd{cfg.context_dim + cfg.meta_dim};
    pd.insert(pd.end(), cfg.pred_hidden.begin(), cfg.pred_hidden.end());
    pd.push_back(d_dim + 1);
    p.pred_net = make_mlp(pd, rng);
    auto& last = p.pred_net.layers.back();
    std::fill(last.W.data.begin(), last.W.data.end(), 0.0);
    std::fill(last.b.begin(), last.b.end(), 0.0);
    return p;
}

inline TensorList collect_psi(ChnParams& p) {
    TensorList t;
    collect(p.f_net, "f_net", t);
    collect(p.g_net, "g_net", t);
    if (p.use_metadata) collect(p.h_net, "h_net", t);
    collect(p.pred_net, "pred_net", t);
    return t;
}

inline std::uint64_t psi_hash(const ChnParams& p) {
    return hash_tensors(collect_psi(const_cast<ChnParams&>(p)));
}

struct ChnGrads {
    MlpParams f_net, g_net, h_net, pred_net;
};

inline ChnGrads zero_grads(const ChnParams& p) {
    ChnGrads g;
    g.f_net = zero_like(p.f_net);
    g.g_net = zero_like(p.g_net);
    if (p.use_metadata) g.h_net = zero_like(p.h_net);
    g.pred_net = zero_like(p.pred_net);
    return g;
}

inline TensorList collect_grads(ChnGrads& g, bool use_metadata) {
    TensorList t;
    collect(g.f_net, "f_net", t);
    collect(g.g_net, "g_net", t);
    if (use_metadata) collect(g.h_net, "h_net", t);
    collect(g.pred_net, "pred_net", t);
    return t;
}

// One context observation: the row's frozen-base latent mean and the revealed
// value of the new feature in that row.
struct ContextPoint {
    std::size_t row = 0;
    std::span<const double> z;
    double x = 0.0;
};

// One scored target: the row's frozen shared-decoder output and ground truth.
struct TargetPoint {
    std::size_t row = 0;
    std::span<const double> d;
    double x = 0.0;
};

// Everything the hypernetwork needs about one adaptation task.
struct ChnEpisode {
    std::size_t feature = 0;
    Link link = Link::kSigmoid;
    std::vector<ContextPoint> context;
    std::vector<TargetPoint> targets;
    std::vector<double> meta_input;  // empty in no-metadata mode
};

struct ChnTape {
    std::vector<MlpTape> f_tapes;
    std::vector<double> sum;  // aggregated point embeddings
    MlpTape g_tape, h_tape, pred_tape;
    std::vector<double> c, m, out;
};

namespace detail {

// Forward through f/g/h/pred. Context points are processed in ascending row
// order so the sum has a fixed reduction order.
inline void chn_forward(const ChnParams& chn, const ChnEpisode& ep, ChnTape& tape) {
    std::vector<std::size_t> order(ep.context.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return ep.context[a].row < ep.context[b].row; });

    const std::size_t zdim = chn.f_net.in_dim() - 1;
    tape.sum.assign(chn.f_net.out_dim(), 0.0);
    tape.f_tapes.clear();
    tape.f_tapes.resize(ep.context.size());
    std::vector<double> in(zdim + 1);
    for (std::size_t idx = 0; idx < order.size(); ++idx) {
        const auto& cp = ep.context[order[idx]];
        if (cp.z.size() != zdim) throw std::invalid_argument("encode_context: latent dim mismatch");
        std::copy(cp.z.begin(), cp.z.end(), in.begin());
        in[zdim] = cp.x;
        auto p = mlp_forward(chn.f_net, in, &tape.f_tapes[idx]);
        for (std::size_t d = 0; d < tape.sum.size(); ++d) tape.sum[d] += p[d];
    }
    tape.c = mlp_forward(chn.g_net, tape.sum, &tape.g_tape);

    if (chn.use_metadata) {
        if (ep.meta_input.size() != chn.h_net.in_dim())
            throw std::invalid_argument("encode_metadata: metadata length mismatch");
        tape.m = mlp_forward(chn.h_net, ep.meta_input, &tape.h_tape);
    } else {
        tape.m.assign(chn.meta_dim, 0.0);
    }

    std::vector<double> pin;
    pin.reserve(tape.c.size() + tape.m.size());
    pin.insert(pin.end(), tape.c.begin(), tape.c.end());
    pin.insert(pin.end(), tape.m.begin(), tape.m.end());
    tape.out = mlp_forward(chn.pred_net, pin, &tape.pred_tape);
}

// Backward from d(out) into psi gradients.
inline void chn_backward(const ChnParams& chn, const ChnEpisode& ep, const ChnTape& tape,
                         std::span<const double> dout, ChnGrads& grads) {
    auto dpin = mlp_backward(chn.pred_net, tape.pred_tape, dout, grads.pred_net);
    std::span<const double> dc(dpin.data(), tape.c.size());
    std::span<const double> dm(dpin.data() + tape.c.size(), tape.m.size());

    auto dsum = mlp_backward(chn.g_net, tape.g_tape, dc, grads.g_net);
    for (std::size_t i = 0; i < tape.f_tapes.size(); ++i)
        mlp_backward(chn.f_net, tape.f_tapes[i], dsum, grads.f_net);
    (void)ep;
    if (chn.use_metadata) mlp_backward(chn.h_net, tape.h_tape, dm, grads.h_net);
}

}  // namespace detail

// c_n = g(sum_i f([z_i ; x_i])); the empty context sums to the zero vector,
// so k = 0 is well defined.
inline std::vector<double> encode_context(const ChnParams& chn, const ChnEpisode& ep) {
    ChnTape tape;
    ChnEpisode ctx_only = ep;
    if (!chn.use_metadata) ctx_only.meta_input.clear();
    detail::chn_forward(chn, ctx_only, tape);
    return tape.c;
}

// m_n = h([tags ; scalar]); zero vector when the dataset has no metadata.
inline std::vector<double> encode_metadata(const ChnParams& chn, std::span<const double> meta_input) {
    if (!chn.use_metadata) return std::vector<double>(chn.meta_dim, 0.0);
    if (meta_input.size() != chn.h_net.in_dim())
        throw std::invalid_argument("encode_metadata: metadata length mismatch");
    return mlp_forward(chn.h_net, meta_input);
}

// Single deterministic forward pass mapping (context, metadata) to head
// parameters; no optimization anywhere.
inline HeadParams predict_head(const ChnParams& chn, const ChnEpisode& ep) {
    ChnTape tape;
    detail::chn_forward(chn, ep, tape);
    HeadParams h;
    h.w.assign(tape.out.begin(), tape.out.end() - 1);
    h.b = tape.out.back();
    h.link = ep.link;
    return h;
}

// Builds the per-episode view against the frozen base. Context latents and
// target decoder outputs come from the row cache (valid because adaptation
// features are never part of the base encoder's visible set).
inline ChnEpisode make_chn_episode(const SparseDataset& ds, const Episode& ep, const RowCache& cache,
                                   const MetadataSet* meta, bool use_metadata) {
    ChnEpisode out;
    out.feature = ep.feature;
    out.link = link_for(ds.kinds[ep.feature]);
    out.context.reserve(ep.context_rows.size());
    for (std::size_t r : ep.context_rows) {
        const auto v = value_at(ds, r, ep.feature);
        if (!v) throw std::invalid_argument("make_chn_episode: context row lacks the feature value");
        out.context.push_back({r, cache.z.row(r), *v});
    }
    out.targets.reserve(ep.target_rows.size());
    for (std::size_t r : ep.target_rows) {
        const auto v = value_at(ds, r, ep.feature);
        if (!v) throw std::invalid_argument("make_chn_episode: target row lacks the feature value");
        out.targets.push_back({r, cache.d.row(r), *v});
    }
    if (use_metadata && meta) out.meta_input = meta->input_vector(ep.feature);
    return out;
}

// Mean per-target log-likelihood of the generated heads over a batch of
// episodes, normalized by the total target count. Gradients (of the returned
// value) flow through the generated heads into psi only; the frozen base
// contributes constants.
inline double meta_loss(const ChnParams& chn, std::span<const ChnEpisode> episodes,
                        double output_variance, ChnGrads* grads = nullptr) {
    std::size_t total_targets = 0;
    for (const auto& ep : episodes) total_targets += ep.targets.size();
    if (total_targets == 0) throw std::invalid_argument("meta_loss: batch has no targets");

    const double inv_n = 1.0 / static_cast<double>(total_targets);
    double ll = 0.0;
    for (const auto& ep : episodes) {
        ChnTape tape;
        detail::chn_forward(chn, ep, tape);
        std::span<const double> w(tape.out.data(), tape.out.size() - 1);
        const double b = tape.out.back();

        std::vector<double> dout;
        if (grads) dout.assign(tape.out.size(), 0.0);
        for (const auto& tp : ep.targets) {
            const double eta = dot(w, tp.d) + b;
            double deta;  // d(ll)/d(eta), already divided by total targets
            if (ep.link == Link::kSigmoid) {
                ll -= bernoulli_nll_from_logit(tp.x, eta) * inv_n;
                deta = -bernoulli_nll_dlogit(tp.x, eta) * inv_n;
            } else {
                ll -= gaussian_nll(tp.x, eta, output_variance) * inv_n;
                deta = -gaussian_nll_dmu(tp.x, eta, output_variance) * inv_n;
            }
            if (grads) {
                for (std::size_t k = 0; k < w.size(); ++k) dout[k] += deta * tp.d[k];
                dout.back() += deta;
            }
        }
        if (grads) detail::chn_backward(chn, ep, tape, dout, *grads);
    }
    return ll;
}

struct MetaTrainConfig {
    std::size_t epochs = 300;
    std::size_t feature_batch_size = 8;
    double lr = 1e-3;
    double weight_decay = 1e-3;
    std::size_t k_max = 32;
    std::size_t target_cap = 256;
};

// Episodic meta-training: per epoch, shuffle the meta-train features, resample
// k_n ~ Uniform{0..k_max} and a fresh episode for each, and take one Adam
// ascent step on l(psi) per feature batch. Returns the per-epoch mean l(psi).
inline std::vector<double> meta_train(ChnParams& chn, const PvaeModel& base, const SparseDataset& ds,
                                      const std::vector<std::size_t>& meta_train_features,
                                      const RowCache& cache, const MetadataSet* meta,
                                      const MetaTrainConfig& cfg, std::uint64_t seed) {
    if (!base.frozen) throw ContractViolation("meta_train: base model must be frozen");
    if (meta_train_features.empty()) throw std::invalid_argument("meta_train: empty meta-train set");

    Rng shuffle_rng(seed, stream::kChnShuffle);
    Rng episode_rng(seed, stream::kChnEpisode);

    TensorList params = collect_psi(chn);
    AdamState adam(total_size(params));
    std::vector<double> trace;
    trace.reserve(cfg.epochs);

    std::vector<std::size_t> order = meta_train_features;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            const std::size_t j = i + static_cast<std::size_t>(shuffle_rng.below(order.size() - i));
            std::swap(order[i], order[j]);
        }
        double epoch_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.feature_batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.feature_batch_size);
            std::vector<ChnEpisode> batch;
            std::vector<Episode> raw;
            batch.reserve(stop - start);
            raw.reserve(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                const std::size_t k = sample_context_size(episode_rng, cfg.k_max);
                Episode ep = sample_episode(ds, order[i], k, episode_rng);
                cap_targets(ep, cfg.target_cap, episode_rng);
                raw.push_back(std::move(ep));
            }
            std::size_t total_targets = 0;
            for (const auto& ep : raw) total_targets += ep.target_rows.size();
            if (total_targets == 0) continue;  // k saturated every feature
            for (const auto& ep : raw)
                batch.push_back(make_chn_episode(ds, ep, cache, meta, chn.use_metadata));

            ChnGrads grads = zero_grads(chn);
            epoch_sum += meta_loss(chn, batch, base.cfg.output_variance, &grads);
            ++batches;
            TensorList gl = collect_grads(grads, chn.use_metadata);
            for (auto& t : gl)  // ascent
                for (std::size_t k = 0; k < t.size(); ++k) t.data[k] = -t.data[k];
            adam_step(adam, params, gl, cfg.lr, cfg.weight_decay);
        }
        trace.push_back(batches ? epoch_sum / static_cast<double>(batches) : 0.0);
    }
    return trace;
}

}  // namespace chn
