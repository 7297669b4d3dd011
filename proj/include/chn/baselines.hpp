#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "chn/adam.hpp"
#include "chn/chn_model.hpp"
#include "chn/dataset.hpp"
#include "chn/errors.hpp"
#include "chn/pvae.hpp"
#include "chn/rng.hpp"

namespace chn {

// Trained heads of the frozen base, keyed by feature, ascending.
struct HeadBank {
    std::vector<std::pair<std::size_t, HeadParams>> entries;
};

inline HeadBank make_head_bank(const PvaeModel& base) {
    HeadBank bank;
    bank.entries.assign(base.decoder.heads.begin(), base.decoder.heads.end());
    return bank;
}

// Xavier weights, zero bias.
inline HeadParams random_head(std::size_t d_dim, FeatureKind kind, Rng& rng) {
    if (d_dim < 1) throw std::invalid_argument("random_head: d_dim must be >= 1");
    HeadParams h;
    h.w = xavier_init(d_dim, 1, rng).data;
    h.b = 0.0;
    h.link = link_for(kind);
    return h;
}

inline constexpr double kMeanClamp = 1e-6;

// w = 0, b = link^{-1}(context mean); an empty context falls back to the
// training-split global mean of observed values.
inline HeadParams mean_impute_head(std::span<const double> context_values, FeatureKind kind,
                                   double global_mean, std::size_t d_dim) {
    double mean = global_mean;
    if (!context_values.empty()) {
        double s = 0.0;
        for (double v : context_values) s += v;
        mean = s / static_cast<double>(context_values.size());
    }
    HeadParams h;
    h.w.assign(d_dim, 0.0);
    h.link = link_for(kind);
    if (kind == FeatureKind::kBinary) {
        mean = std::clamp(mean, kMeanClamp, 1.0 - kMeanClamp);
        h.b = logit(mean);
    } else {
        h.b = mean;
    }
    return h;
}

// Element-wise mean over every bank entry, ascending feature order.
inline HeadParams mean_head(const HeadBank& bank, FeatureKind kind) {
    if (bank.entries.empty()) throw std::invalid_argument("mean_head: empty bank");
    HeadParams h;
    h.w.assign(bank.entries.front().second.w.size(), 0.0);
    h.b = 0.0;
    for (const auto& [f, head] : bank.entries) {
        for (std::size_t k = 0; k < h.w.size(); ++k) h.w[k] += head.w[k];
        h.b += head.b;
    }
    const double inv = 1.0 / static_cast<double>(bank.entries.size());
    for (auto& w : h.w) w *= inv;
    h.b *= inv;
    h.link = link_for(kind);
    return h;
}

// Mean restricted to bank features whose tag vector equals the new feature's
// exactly; no matches fall back to the full mean.
inline HeadParams mean_head_matching(const HeadBank& bank, const MetadataSet& meta,
                                     const std::vector<double>& new_tags, FeatureKind kind) {
    HeadBank matched;
    for (const auto& [f, head] : bank.entries)
        if (meta.metas[f].tags == new_tags) matched.entries.push_back({f, head});
    if (matched.entries.empty()) return mean_head(bank, kind);
    return mean_head(matched, kind);
}

// Per-feature column vectors over all rows with column-wise mean imputation
// of unobserved cells; the new feature's column is built from the context.
struct KnnColumns {
    Matrix columns;                     // bank_size x n_rows
    std::vector<std::size_t> features;  // bank order
};

inline KnnColumns build_knn_columns(const SparseDataset& ds, const HeadBank& bank) {
    KnnColumns out;
    out.columns = Matrix(bank.entries.size(), ds.n_rows);
    out.features.reserve(bank.entries.size());
    for (std::size_t i = 0; i < bank.entries.size(); ++i) {
        const std::size_t f = bank.entries[i].first;
        out.features.push_back(f);
        const double mean = ds.feature_mean(f);
        auto col = out.columns.row(i);
        for (std::size_t r = 0; r < ds.n_rows; ++r) col[r] = mean;
        for (const auto& o : ds.feat_obs[f]) col[o.row] = o.value;
    }
    return out;
}

// Mean head of the k nearest training columns by Euclidean distance; ties
// break toward the lower feature index. k >= bank size degenerates to the
// full mean.
inline HeadParams knn_head(const SparseDataset& ds, const HeadBank& bank, const KnnColumns& columns,
                           std::span<const std::pair<std::size_t, double>> context, FeatureKind kind,
                           double empty_fallback_mean, std::size_t k_neighbors) {
    if (k_neighbors < 1) throw std::invalid_argument("knn_head: k_neighbors must be >= 1");
    if (bank.entries.empty()) throw std::invalid_argument("knn_head: empty bank");

    double fill = empty_fallback_mean;
    if (!context.empty()) {
        double s = 0.0;
        for (const auto& [r, v] : context) s += v;
        fill = s / static_cast<double>(context.size());
    }
    std::vector<double> newcol(ds.n_rows, fill);
    for (const auto& [r, v] : context) newcol[r] = v;

    std::vector<std::pair<double, std::size_t>> dist;  // (distance^2, bank position)
    dist.reserve(bank.entries.size());
    for (std::size_t i = 0; i < bank.entries.size(); ++i) {
        auto col = columns.columns.row(i);
        double d2 = 0.0;
        for (std::size_t r = 0; r < ds.n_rows; ++r) {
            const double diff = newcol[r] - col[r];
            d2 += diff * diff;
        }
        dist.push_back({d2, i});
    }
    std::sort(dist.begin(), dist.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return columns.features[a.second] < columns.features[b.second];
    });

    const std::size_t k = std::min(k_neighbors, bank.entries.size());
    HeadBank nearest;
    for (std::size_t i = 0; i < k; ++i) nearest.entries.push_back(bank.entries[dist[i].second]);
    std::sort(nearest.entries.begin(), nearest.entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return mean_head(nearest, kind);
}

// Mean negative log-likelihood of the context observations under a head.
inline double context_loss(const HeadParams& head, std::span<const TargetPoint> context,
                           double output_variance) {
    if (context.empty()) return 0.0;
    double s = 0.0;
    for (const auto& cp : context) {
        const double eta = dot(head.w, cp.d) + head.b;
        s += head.link == Link::kSigmoid ? bernoulli_nll_from_logit(cp.x, eta)
                                         : gaussian_nll(cp.x, eta, output_variance);
    }
    return s / static_cast<double>(context.size());
}

// Full-batch Adam on the context NLL w.r.t. (w, b) only; theta0 untouched.
// An empty context returns the init unchanged.
inline HeadParams train_head(const HeadParams& init, std::span<const TargetPoint> context,
                             std::size_t epochs, double lr, double output_variance,
                             std::vector<double>* loss_trace = nullptr) {
    HeadParams head = init;
    if (context.empty() || epochs == 0 || lr == 0.0) {
        if (loss_trace && !context.empty())
            loss_trace->assign(1, context_loss(head, context, output_variance));
        return head;
    }
    AdamState adam(head.w.size() + 1);
    TensorList params{view("w", head.w), view("b", head.b)};
    const double inv = 1.0 / static_cast<double>(context.size());
    for (std::size_t e = 0; e < epochs; ++e) {
        if (loss_trace) loss_trace->push_back(context_loss(head, context, output_variance));
        std::vector<double> gw(head.w.size(), 0.0);
        double gb = 0.0;
        for (const auto& cp : context) {
            const double eta = dot(head.w, cp.d) + head.b;
            const double deta = (head.link == Link::kSigmoid ? bernoulli_nll_dlogit(cp.x, eta)
                                                             : gaussian_nll_dmu(cp.x, eta, output_variance)) *
                                inv;
            for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += deta * cp.d[k];
            gb += deta;
        }
        TensorList grads{view("w", gw), view("b", gb)};
        adam_step(adam, params, grads, lr);
    }
    if (loss_trace) loss_trace->push_back(context_loss(head, context, output_variance));
    return head;
}

// Fine-tune a fresh random init on the context set.
inline HeadParams train_from_random(const PvaeModel& base, const HeadParams& init,
                                    std::span<const TargetPoint> context, std::size_t epochs, double lr) {
    if (!base.frozen) throw ContractViolation("train_from_random: base model must be frozen");
    return train_head(init, context, epochs, lr, base.cfg.output_variance);
}

// ---------------------------------------------------------------------------
// Feature-wise MAML (first-order)

struct MamlConfig {
    double inner_lr = 1e-2;   // alpha
    double outer_lr = 1e-2;   // beta
    std::size_t inner_steps = 10;  // N
    std::size_t meta_batch = 4;    // M
    std::size_t epochs = 60;
    std::size_t k_max = 32;
    std::size_t target_cap = 256;
};

struct MamlInit {
    HeadParams theta;  // link set per-feature at adaptation time
    MamlConfig cfg;
};

inline TensorList collect_maml(MamlInit& m) {
    return {view("theta.w", m.theta.w), view("theta.b", m.theta.b)};
}

// Meta-learn a head initialization: inner-adapt a copy per sampled feature on
// its context loss, then apply the first-order outer update with the target
// losses' gradients taken at the adapted parameters.
inline MamlInit maml_meta_train(const PvaeModel& base, const SparseDataset& ds,
                                const std::vector<std::size_t>& meta_train_features,
                                const RowCache& cache, const MamlConfig& cfg, std::uint64_t seed,
                                std::vector<double>* outer_trace = nullptr) {
    if (!base.frozen) throw ContractViolation("maml_meta_train: base model must be frozen");
    if (meta_train_features.size() < cfg.meta_batch)
        throw std::invalid_argument("maml_meta_train: need at least meta_batch features");

    Rng init_rng(seed, stream::kMamlInit);
    Rng shuffle_rng(seed, stream::kMamlShuffle);
    Rng episode_rng(seed, stream::kMamlEpisode);

    MamlInit init;
    init.cfg = cfg;
    init.theta = random_head(base.d_dim(), FeatureKind::kBinary, init_rng);

    TensorList params = collect_maml(init);
    AdamState adam(total_size(params));
    const double var = base.cfg.output_variance;

    auto points_for = [&](const std::vector<std::size_t>& rows, std::size_t feature) {
        std::vector<TargetPoint> pts;
        pts.reserve(rows.size());
        for (std::size_t r : rows) {
            const auto v = value_at(ds, r, feature);
            pts.push_back({r, cache.d.row(r), *v});
        }
        return pts;
    };

    std::vector<std::size_t> order = meta_train_features;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            const std::size_t j = i + static_cast<std::size_t>(shuffle_rng.below(order.size() - i));
            std::swap(order[i], order[j]);
        }
        double epoch_loss = 0.0;
        std::size_t epoch_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.meta_batch) {
            const std::size_t stop = std::min(order.size(), start + cfg.meta_batch);
            std::vector<double> gw(init.theta.w.size(), 0.0);
            double gb = 0.0;
            double batch_loss = 0.0;
            std::size_t used = 0;
            for (std::size_t i = start; i < stop; ++i) {
                const std::size_t feature = order[i];
                const std::size_t k = sample_context_size(episode_rng, cfg.k_max);
                Episode ep = sample_episode(ds, feature, k, episode_rng);
                cap_targets(ep, cfg.target_cap, episode_rng);
                if (ep.target_rows.empty()) continue;
                const auto ctx = points_for(ep.context_rows, feature);
                const auto tgt = points_for(ep.target_rows, feature);

                HeadParams task = init.theta;
                task.link = link_for(ds.kinds[feature]);
                const HeadParams adapted = train_head(task, ctx, cfg.inner_steps, cfg.inner_lr, var);

                // first-order outer gradient at the adapted parameters
                const double inv = 1.0 / static_cast<double>(tgt.size());
                for (const auto& tp : tgt) {
                    const double eta = dot(adapted.w, tp.d) + adapted.b;
                    double deta;
                    if (adapted.link == Link::kSigmoid) {
                        batch_loss += bernoulli_nll_from_logit(tp.x, eta) * inv;
                        deta = bernoulli_nll_dlogit(tp.x, eta) * inv;
                    } else {
                        batch_loss += gaussian_nll(tp.x, eta, var) * inv;
                        deta = gaussian_nll_dmu(tp.x, eta, var) * inv;
                    }
                    for (std::size_t d = 0; d < gw.size(); ++d) gw[d] += deta * tp.d[d];
                    gb += deta;
                }
                ++used;
            }
            if (used == 0) continue;
            const double inv_m = 1.0 / static_cast<double>(used);
            for (auto& g : gw) g *= inv_m;
            gb *= inv_m;
            TensorList grads{view("theta.w", gw), view("theta.b", gb)};
            adam_step(adam, params, grads, cfg.outer_lr);
            epoch_loss += batch_loss * inv_m;
            ++epoch_batches;
        }
        if (outer_trace)
            outer_trace->push_back(epoch_batches ? epoch_loss / static_cast<double>(epoch_batches) : 0.0);
    }
    return init;
}

// Fine-tune from the meta-learned initialization with lr = alpha;
// zero epochs (or an empty context) returns the initialization as-is.
inline HeadParams maml_adapt(const MamlInit& init, const PvaeModel& base,
                             std::span<const TargetPoint> context, FeatureKind kind,
                             std::size_t fine_tune_epochs) {
    if (!base.frozen) throw ContractViolation("maml_adapt: base model must be frozen");
    HeadParams start = init.theta;
    start.link = link_for(kind);
    return train_head(start, context, fine_tune_epochs, init.cfg.inner_lr, base.cfg.output_variance);
}

}  // namespace chn
