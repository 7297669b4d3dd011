#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>
#include <sstream>

#include "chn/baselines.hpp"
#include "chn/chn_model.hpp"
#include "chn/dataset.hpp"
#include "chn/errors.hpp"
#include "chn/metrics.hpp"
#include "chn/pvae.hpp"
#include "chn/rng.hpp"

namespace chn {

// ---------------------------------------------------------------------------
// Method identifiers

struct MethodId {
    enum class Kind {
        kChn,
        kRandom,
        kMeanImpute,
        kMeanHead,
        kMeanHeadMatching,
        kKnn,
        kTrainFromRandom,
        kMaml,
        kChnThenFinetune,
    };
    Kind kind = Kind::kChn;
    std::size_t param = 0;  // knn k / fine-tuning epochs
};

inline MethodId parse_method(const std::string& text) {
    std::string name = text;
    std::size_t param = 0;
    bool has_param = false;
    if (const auto colon = text.find(':'); colon != std::string::npos) {
        name = text.substr(0, colon);
        param = static_cast<std::size_t>(std::stoull(text.substr(colon + 1)));
        has_param = true;
    }
    using Kind = MethodId::Kind;
    if (name == "chn") return {Kind::kChn, 0};
    if (name == "random") return {Kind::kRandom, 0};
    if (name == "mean_impute") return {Kind::kMeanImpute, 0};
    if (name == "mean_head") return {Kind::kMeanHead, 0};
    if (name == "mean_head_matching") return {Kind::kMeanHeadMatching, 0};
    if (name == "knn") return {Kind::kKnn, has_param ? param : 10};
    if (name == "train_from_random") return {Kind::kTrainFromRandom, has_param ? param : 10};
    if (name == "maml") return {Kind::kMaml, has_param ? param : 10};
    if (name == "chn_then_finetune") return {Kind::kChnThenFinetune, has_param ? param : 10};
    throw DataError("unknown method '" + text + "'");
}

inline std::string to_string(const MethodId& m) {
    using Kind = MethodId::Kind;
    switch (m.kind) {
        case Kind::kChn: return "chn";
        case Kind::kRandom: return "random";
        case Kind::kMeanImpute: return "mean_impute";
        case Kind::kMeanHead: return "mean_head";
        case Kind::kMeanHeadMatching: return "mean_head_matching";
        case Kind::kKnn: return "knn:" + std::to_string(m.param);
        case Kind::kTrainFromRandom: return "train_from_random:" + std::to_string(m.param);
        case Kind::kMaml: return "maml:" + std::to_string(m.param);
        case Kind::kChnThenFinetune: return "chn_then_finetune:" + std::to_string(m.param);
    }
    return "?";
}

inline std::vector<MethodId> parse_methods(const std::string& csv) {
    std::vector<MethodId> out;
    std::string item;
    std::istringstream ss(csv);
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(parse_method(item));
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation context: everything trained and staged for head production

struct EvalContext {
    const SparseDataset& ds;
    const MetadataSet* meta = nullptr;
    const FeatureSplit& split;
    const PvaeModel& base;
    const RowCache& cache;
    const ChnParams* chn = nullptr;
    const MamlInit* maml = nullptr;
    HeadBank bank;
    KnnColumns knn_columns;
    double global_mean = 0.5;
    double fine_tune_lr = 1e-2;
};

inline EvalContext make_eval_context(const SparseDataset& ds, const MetadataSet* meta,
                                     const FeatureSplit& split, const PvaeModel& base,
                                     const RowCache& cache, const ChnParams* chn = nullptr,
                                     const MamlInit* maml = nullptr, double fine_tune_lr = 1e-2) {
    if (!base.frozen) throw ContractViolation("make_eval_context: base model must be frozen");
    EvalContext ctx{ds, meta, split, base, cache, chn, maml, {}, {}, 0.5, fine_tune_lr};
    ctx.bank = make_head_bank(base);
    ctx.knn_columns = build_knn_columns(ds, ctx.bank);
    ctx.global_mean = global_observed_mean(ds, split.train);
    return ctx;
}

inline HeadParams produce_head(const EvalContext& ctx, const MethodId& method, const ChnEpisode& ep,
                               Rng& method_rng) {
    using Kind = MethodId::Kind;
    const FeatureKind kind = ctx.ds.kinds[ep.feature];
    const std::size_t d_dim = ctx.base.d_dim();
    switch (method.kind) {
        case Kind::kChn: {
            if (!ctx.chn) throw std::invalid_argument("method chn requires a trained hypernetwork");
            return predict_head(*ctx.chn, ep);
        }
        case Kind::kRandom:
            return random_head(d_dim, kind, method_rng);
        case Kind::kMeanImpute: {
            std::vector<double> vals;
            vals.reserve(ep.context.size());
            for (const auto& cp : ep.context) vals.push_back(cp.x);
            return mean_impute_head(vals, kind, ctx.global_mean, d_dim);
        }
        case Kind::kMeanHead:
            return mean_head(ctx.bank, kind);
        case Kind::kMeanHeadMatching: {
            if (!ctx.meta) return mean_head(ctx.bank, kind);
            return mean_head_matching(ctx.bank, *ctx.meta, ctx.meta->metas[ep.feature].tags, kind);
        }
        case Kind::kKnn: {
            std::vector<std::pair<std::size_t, double>> pairs;
            pairs.reserve(ep.context.size());
            for (const auto& cp : ep.context) pairs.push_back({cp.row, cp.x});
            return knn_head(ctx.ds, ctx.bank, ctx.knn_columns, pairs, kind, ctx.global_mean, method.param);
        }
        case Kind::kTrainFromRandom: {
            const auto init = random_head(d_dim, kind, method_rng);
            std::vector<TargetPoint> pts;
            pts.reserve(ep.context.size());
            for (const auto& cp : ep.context) pts.push_back({cp.row, ctx.cache.d.row(cp.row), cp.x});
            return train_from_random(ctx.base, init, pts, method.param, ctx.fine_tune_lr);
        }
        case Kind::kMaml: {
            if (!ctx.maml) throw std::invalid_argument("method maml requires a meta-learned init");
            std::vector<TargetPoint> pts;
            pts.reserve(ep.context.size());
            for (const auto& cp : ep.context) pts.push_back({cp.row, ctx.cache.d.row(cp.row), cp.x});
            return maml_adapt(*ctx.maml, ctx.base, pts, kind, method.param);
        }
        case Kind::kChnThenFinetune: {
            if (!ctx.chn) throw std::invalid_argument("method chn_then_finetune requires a trained hypernetwork");
            const HeadParams init = predict_head(*ctx.chn, ep);
            std::vector<TargetPoint> pts;
            pts.reserve(ep.context.size());
            for (const auto& cp : ep.context) pts.push_back({cp.row, ctx.cache.d.row(cp.row), cp.x});
            return train_head(init, pts, method.param, ctx.fine_tune_lr, ctx.base.cfg.output_variance);
        }
    }
    throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// k-shot evaluation protocol

struct EvalRow {
    std::string method;
    long long feature = 0;  // original feature id
    std::size_t k = 0;
    std::string metric;
    std::optional<double> value;  // nullopt = undefined metric (skipped in aggregates)
    std::size_t n_targets = 0;
    std::uint64_t seed = 0;
};

struct AggRow {
    std::string method;
    std::size_t k = 0;
    std::string metric;
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t n_seeds = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<AggRow> aggregates;
    std::vector<std::string> episode_log;  // one line per (seed, feature, k)
};

inline std::uint64_t episode_hash(std::size_t feature, std::size_t k,
                                  const std::vector<std::size_t>& context_rows) {
    std::uint64_t h = 14695981039346656037ull;
    auto mix = [&h](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    mix(feature);
    mix(k);
    for (std::size_t r : context_rows) mix(r);
    return h;
}

// For each (seed, meta-test feature, k): draw one episode from a dedicated
// stream and reveal the identical context set to every method; score the
// target-set predictions; aggregate per (method, k) with mean and (population)
// std over seeds.
inline EvalReport evaluate_kshot(const EvalContext& ctx, const std::vector<MethodId>& methods,
                                 const std::vector<std::size_t>& k_grid,
                                 const std::vector<std::uint64_t>& seeds) {
    if (ctx.split.meta_test.empty()) throw std::invalid_argument("evaluate_kshot: empty meta-test set");
    if (methods.empty() || k_grid.empty() || seeds.empty())
        throw std::invalid_argument("evaluate_kshot: methods, k grid, and seeds must be non-empty");

    EvalReport report;
    // per (method index, k, metric): per-seed feature means
    std::map<std::tuple<std::size_t, std::size_t, std::string>, std::vector<double>> agg;

    for (const std::uint64_t seed : seeds) {
        // per (method, k, metric): running sums over features for this seed
        std::map<std::tuple<std::size_t, std::size_t, std::string>, std::pair<double, std::size_t>> seed_sums;
        for (const std::size_t feature : ctx.split.meta_test) {
            for (const std::size_t k : k_grid) {
                Rng ep_rng(seed, stream::sub(stream::kEvalEpisode, feature, k));
                Episode raw = sample_episode(ctx.ds, feature, k, ep_rng);
                const ChnEpisode ep =
                    make_chn_episode(ctx.ds, raw, ctx.cache, ctx.meta, ctx.chn && ctx.chn->use_metadata);

                char logline[128];
                std::snprintf(logline, sizeof(logline), "seed=%llu feature=%lld k=%zu context_hash=%016llx",
                              static_cast<unsigned long long>(seed), ctx.ds.feature_ids[feature], k,
                              static_cast<unsigned long long>(episode_hash(feature, k, raw.context_rows)));
                report.episode_log.emplace_back(logline);

                const FeatureKind kind = ctx.ds.kinds[feature];
                std::vector<double> truths;
                truths.reserve(ep.targets.size());
                for (const auto& tp : ep.targets) truths.push_back(tp.x);

                for (std::size_t mi = 0; mi < methods.size(); ++mi) {
                    Rng method_rng(seed, stream::sub(stream::kMethodInit, feature, k, mi));
                    const HeadParams head = produce_head(ctx, methods[mi], ep, method_rng);

                    std::vector<double> preds;
                    preds.reserve(ep.targets.size());
                    for (const auto& tp : ep.targets)
                        preds.push_back(apply_link(head.link, dot(head.w, tp.d) + head.b));

                    EvalRow row;
                    row.method = to_string(methods[mi]);
                    row.feature = ctx.ds.feature_ids[feature];
                    row.k = k;
                    row.seed = seed;
                    row.n_targets = ep.targets.size();
                    if (kind == FeatureKind::kBinary) {
                        row.metric = "auroc";
                        if (!ep.targets.empty()) row.value = auroc(preds, truths);
                    } else {
                        row.metric = "rmse";
                        if (!ep.targets.empty()) {
                            const std::size_t f = feature;
                            row.value = rmse(preds, truths,
                                             [&](double v) { return ctx.ds.denormalize(f, v); });
                        }
                    }
                    if (row.value) {
                        auto& [sum, n] = seed_sums[{mi, k, row.metric}];
                        sum += *row.value;
                        ++n;
                    }
                    report.rows.push_back(std::move(row));
                }
            }
        }
        for (const auto& [key, sums] : seed_sums)
            if (sums.second > 0) agg[key].push_back(sums.first / static_cast<double>(sums.second));
    }

    for (const auto& [key, per_seed] : agg) {
        const auto& [mi, k, metric] = key;
        AggRow row;
        row.method = to_string(methods[mi]);
        row.k = k;
        row.metric = metric;
        row.n_seeds = per_seed.size();
        double mean = 0.0;
        for (double v : per_seed) mean += v;
        mean /= static_cast<double>(per_seed.size());
        double var = 0.0;
        for (double v : per_seed) var += (v - mean) * (v - mean);
        row.mean = mean;
        row.stddev = std::sqrt(var / static_cast<double>(per_seed.size()));
        report.aggregates.push_back(std::move(row));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Timing benchmark

struct TimingRow {
    std::string method;
    std::size_t k = 0;
    double mean_ms = 0.0;
    double std_ms = 0.0;
    std::size_t batch_size = 0;
    std::size_t repetitions = 0;
};

// Times only the head-production path: episodes are staged up front, one
// warm-up pass is excluded, and each repetition times one batch of
// `batch_size` features (cycling the meta-test set), reporting per-feature
// wall-clock milliseconds. Strictly single-threaded.
inline TimingRow time_initialization(const EvalContext& ctx, const MethodId& method, std::size_t k,
                                     std::size_t batch_size, std::size_t repetitions,
                                     std::uint64_t seed = 0) {
    if (repetitions == 0) throw std::invalid_argument("time_initialization: repetitions must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("time_initialization: batch_size must be >= 1");
    if (ctx.split.meta_test.empty()) throw std::invalid_argument("time_initialization: empty meta-test set");

    std::vector<ChnEpisode> staged;
    staged.reserve(ctx.split.meta_test.size());
    for (const std::size_t feature : ctx.split.meta_test) {
        Rng ep_rng(seed, stream::sub(stream::kEvalEpisode, feature, k));
        Episode raw = sample_episode(ctx.ds, feature, k, ep_rng);
        staged.push_back(make_chn_episode(ctx.ds, raw, ctx.cache, ctx.meta,
                                          ctx.chn && ctx.chn->use_metadata));
    }

    auto run_batch = [&]() {
        for (std::size_t i = 0; i < batch_size; ++i) {
            const ChnEpisode& ep = staged[i % staged.size()];
            Rng method_rng(seed, stream::sub(stream::kMethodInit, i, k, 0));
            volatile double sink = produce_head(ctx, method, ep, method_rng).b;
            (void)sink;
        }
    };

    run_batch();  // warm-up, excluded from statistics

    std::vector<double> per_feature_ms;
    per_feature_ms.reserve(repetitions);
    for (std::size_t rep = 0; rep < repetitions; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        run_batch();
        const auto t1 = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        per_feature_ms.push_back(ms / static_cast<double>(batch_size));
    }

    TimingRow row;
    row.method = to_string(method);
    row.k = k;
    row.batch_size = batch_size;
    row.repetitions = repetitions;
    double mean = 0.0;
    for (double v : per_feature_ms) mean += v;
    mean /= static_cast<double>(repetitions);
    double var = 0.0;
    for (double v : per_feature_ms) var += (v - mean) * (v - mean);
    row.mean_ms = mean;
    row.std_ms = std::sqrt(var / static_cast<double>(repetitions));
    return row;
}

// ---------------------------------------------------------------------------
// CSV writers (deterministic; no timestamps)

inline std::string format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_report_csv(const EvalReport& report, const std::vector<std::string>& header_lines,
                             const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& line : header_lines) out << line << '\n';
    out << "method,feature,k,metric,value,n_targets,seed\n";
    for (const auto& r : report.rows) {
        out << r.method << ',' << r.feature << ',' << r.k << ',' << r.metric << ','
            << (r.value ? format_value(*r.value) : "nan") << ',' << r.n_targets << ',' << r.seed << '\n';
    }
}

inline void write_aggregate_csv(const EvalReport& report, const std::vector<std::string>& header_lines,
                                const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& line : header_lines) out << line << '\n';
    out << "method,k,metric,mean,std,n_seeds\n";
    for (const auto& r : report.aggregates) {
        out << r.method << ',' << r.k << ',' << r.metric << ',' << format_value(r.mean) << ','
            << format_value(r.stddev) << ',' << r.n_seeds << '\n';
    }
}

inline void write_timing_csv(const std::vector<TimingRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "method,k,mean_ms,std_ms,batch_size,repetitions\n";
    for (const auto& r : rows) {
        out << r.method << ',' << r.k << ',' << format_value(r.mean_ms) << ',' << format_value(r.std_ms)
            << ',' << r.batch_size << ',' << r.repetitions << '\n';
    }
}

inline void write_lines(const std::vector<std::string>& lines, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& line : lines) out << line << '\n';
}

}  // namespace chn
