#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "chn/dataset.hpp"
#include "chn/matrix.hpp"
#include "chn/prob.hpp"
#include "chn/rng.hpp"

namespace chn {

struct SyntheticConfig {
    std::size_t n_rows = 500;
    std::size_t n_features = 60;
    std::size_t rank = 3;
    double noise_sd = 0.0;
    double obs_prob = 0.12;
    FeatureKind kind = FeatureKind::kBinary;
    std::size_t n_tag_groups = 4;
};

struct SyntheticData {
    SparseDataset ds;
    MetadataSet meta;
    Matrix row_factors;      // n_rows x rank
    Matrix feature_factors;  // n_features x rank
};

// Deterministic grouping of a feature factor by its sign pattern; features
// with identical factors always land in the same group.
inline std::size_t tag_group(std::span<const double> v, std::size_t n_groups) {
    std::size_t pattern = 0;
    for (std::size_t d = 0; d < v.size() && d < 20; ++d)
        if (v[d] > 0.0) pattern |= std::size_t(1) << d;
    return pattern % n_groups;
}

// Low-rank logistic generator: s_ij = u_i . v_j + noise, continuous values are
// sigmoid(s), binary values are Bernoulli(sigmoid(s)); each cell observed
// independently with probability obs_prob.
inline SyntheticData generate_synthetic(const SyntheticConfig& cfg, Rng& rng) {
    if (cfg.rank < 1) throw std::invalid_argument("generate_synthetic: rank must be >= 1");
    if (cfg.obs_prob <= 0.0 || cfg.obs_prob > 1.0)
        throw std::invalid_argument("generate_synthetic: need 0 < obs_prob <= 1");
    if (cfg.n_tag_groups < 1) throw std::invalid_argument("generate_synthetic: need >= 1 tag group");

    SyntheticData out;
    out.row_factors = Matrix(cfg.n_rows, cfg.rank);
    out.feature_factors = Matrix(cfg.n_features, cfg.rank);
    for (auto& x : out.row_factors.data) x = rng.normal();
    for (auto& x : out.feature_factors.data) x = rng.normal();

    // Built directly with identity id maps so empty rows keep their index.
    SparseDataset& ds = out.ds;
    ds.n_rows = cfg.n_rows;
    ds.n_features = cfg.n_features;
    ds.kinds.assign(cfg.n_features, cfg.kind);
    ds.norm_min.assign(cfg.n_features, 0.0);  // sigmoid outputs are already in [0, 1]
    ds.norm_max.assign(cfg.n_features, 1.0);
    for (std::size_t i = 0; i < cfg.n_rows; ++i) ds.row_ids.push_back(static_cast<long long>(i));
    for (std::size_t j = 0; j < cfg.n_features; ++j) ds.feature_ids.push_back(static_cast<long long>(j));
    ds.row_obs.assign(cfg.n_rows, {});
    ds.feat_obs.assign(cfg.n_features, {});

    for (std::size_t i = 0; i < cfg.n_rows; ++i) {
        for (std::size_t j = 0; j < cfg.n_features; ++j) {
            if (rng.uniform() >= cfg.obs_prob) continue;
            double s = dot(out.row_factors.row(i), out.feature_factors.row(j));
            if (cfg.noise_sd > 0.0) s += cfg.noise_sd * rng.normal();
            double value;
            if (cfg.kind == FeatureKind::kBinary) {
                value = rng.uniform() < sigmoid(s) ? 1.0 : 0.0;
            } else {
                value = sigmoid(s);
            }
            ds.triplets.push_back({i, j, value});
            ds.row_obs[i].push_back({j, value});
            ds.feat_obs[j].push_back({i, value});
        }
    }

    out.meta.vocab.clear();
    for (std::size_t g = 0; g < cfg.n_tag_groups; ++g) out.meta.vocab.push_back("g" + std::to_string(g));
    out.meta.has_scalar = false;
    out.meta.metas.resize(cfg.n_features);
    for (std::size_t j = 0; j < cfg.n_features; ++j) {
        out.meta.metas[j].feature = j;
        out.meta.metas[j].tags.assign(cfg.n_tag_groups, 0.0);
        out.meta.metas[j].tags[tag_group(out.feature_factors.row(j), cfg.n_tag_groups)] = 1.0;
    }
    return out;
}

// Factors sidecar: dims line, then row factors, then feature factors.
inline void write_factors(const SyntheticData& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    char buf[64];
    out << data.row_factors.rows << ' ' << data.feature_factors.rows << ' ' << data.row_factors.cols
        << '\n';
    auto dump = [&](const Matrix& m) {
        for (std::size_t r = 0; r < m.rows; ++r) {
            for (std::size_t c = 0; c < m.cols; ++c) {
                std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
                out << (c ? " " : "") << buf;
            }
            out << '\n';
        }
    };
    dump(data.row_factors);
    dump(data.feature_factors);
}

inline void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_triplets(data.ds, dir / "triplets.csv");
    write_metadata(data.meta, data.ds, dir / "metadata.csv");
    write_factors(data, dir / "factors.txt");
    write_id_map(data.ds, dir / "ids.csv");
}

}  // namespace chn
