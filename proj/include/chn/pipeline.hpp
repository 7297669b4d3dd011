#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "chn/baselines.hpp"
#include "chn/chn_model.hpp"
#include "chn/config.hpp"
#include "chn/dataset.hpp"
#include "chn/errors.hpp"
#include "chn/pvae.hpp"
#include "chn/synthetic.hpp"

namespace chn {

inline FeatureKind parse_kind(const std::string& s) {
    if (s == "binary") return FeatureKind::kBinary;
    if (s == "continuous") return FeatureKind::kContinuous;
    throw DataError("unknown feature kind '" + s + "'");
}

inline PvaeConfig pvae_config_from(const RunConfig& cfg) {
    PvaeConfig p;
    p.e_dim = cfg.get_size("pvae.e_dim");
    p.set_dim = cfg.get_size("pvae.set_dim");
    p.latent_dim = cfg.get_size("pvae.latent_dim");
    p.point_hidden = cfg.get_sizes("pvae.point_hidden");
    p.enc_hidden = cfg.get_sizes("pvae.enc_hidden");
    p.dec_hidden = cfg.get_sizes("pvae.dec_hidden");
    p.d_dim = cfg.get_size("pvae.d_dim");
    p.output_variance = cfg.get_double("pvae.output_variance");
    return p;
}

inline TrainBaseConfig train_base_config_from(const RunConfig& cfg) {
    TrainBaseConfig t;
    t.epochs = cfg.get_size("base.epochs");
    t.batch_size = cfg.get_size("base.batch");
    t.lr = cfg.get_double("base.lr");
    t.weight_decay = cfg.get_double("base.weight_decay");
    t.p_keep = cfg.get_double("base.p_keep");
    t.kl_warmup_epochs = cfg.get_size("base.kl_warmup_epochs");
    return t;
}

inline ChnConfig chn_config_from(const RunConfig& cfg) {
    ChnConfig c;
    c.point_dim = cfg.get_size("chn.point_dim");
    c.f_hidden = cfg.get_sizes("chn.f_hidden");
    c.context_dim = cfg.get_size("chn.context_dim");
    c.g_hidden = cfg.get_sizes("chn.g_hidden");
    c.meta_dim = cfg.get_size("chn.meta_dim");
    c.h_hidden = cfg.get_sizes("chn.h_hidden");
    c.pred_hidden = cfg.get_sizes("chn.pred_hidden");
    return c;
}

inline MetaTrainConfig meta_train_config_from(const RunConfig& cfg) {
    MetaTrainConfig m;
    m.epochs = cfg.get_size("chn.epochs");
    m.feature_batch_size = cfg.get_size("chn.batch");
    m.lr = cfg.get_double("chn.lr");
    m.weight_decay = cfg.get_double("chn.weight_decay");
    m.k_max = cfg.get_size("chn.k_max");
    m.target_cap = cfg.get_size("chn.target_cap");
    return m;
}

inline MamlConfig maml_config_from(const RunConfig& cfg) {
    MamlConfig m;
    m.inner_lr = cfg.get_double("maml.inner_lr");
    m.outer_lr = cfg.get_double("maml.outer_lr");
    m.inner_steps = cfg.get_size("maml.inner_steps");
    m.meta_batch = cfg.get_size("maml.meta_batch");
    m.epochs = cfg.get_size("maml.epochs");
    m.k_max = cfg.get_size("chn.k_max");
    m.target_cap = cfg.get_size("chn.target_cap");
    return m;
}

inline SyntheticConfig synth_config_from(const RunConfig& cfg) {
    SyntheticConfig s;
    s.n_rows = cfg.get_size("synth.rows");
    s.n_features = cfg.get_size("synth.features");
    s.rank = cfg.get_size("synth.rank");
    s.noise_sd = cfg.get_double("synth.noise_sd");
    s.obs_prob = cfg.get_double("synth.obs_prob");
    s.kind = parse_kind(cfg.get("synth.kind"));
    s.n_tag_groups = cfg.get_size("synth.tag_groups");
    return s;
}

// Random mode permutes with the split stream of `seed`; ordered mode sorts by
// the metadata scalar (e.g. a normalized year).
inline FeatureSplit split_from(const RunConfig& cfg, std::size_t n_features, std::uint64_t seed,
                               const MetadataSet* meta) {
    std::array<double, 3> fr = {cfg.get_double("split.train"), cfg.get_double("split.meta_train"),
                                cfg.get_double("split.meta_test")};
    const std::string mode = cfg.get("split.mode");
    if (mode == "random") {
        Rng rng(seed, stream::kSplit);
        return split_features(n_features, fr, SplitMode::kRandom, &rng);
    }
    if (mode == "ordered") {
        if (!meta || !meta->has_scalar)
            throw DataError("split.mode = ordered requires metadata with a scalar column");
        std::vector<double> keys(n_features);
        for (std::size_t f = 0; f < n_features; ++f) keys[f] = meta->metas[f].scalar.value_or(0.0);
        return split_features(n_features, fr, SplitMode::kOrdered, nullptr, &keys);
    }
    throw DataError("unknown split.mode '" + mode + "'");
}

// Loads triplets.csv (+ metadata.csv when present) from a data directory.
struct LoadedData {
    SparseDataset ds;
    std::optional<MetadataSet> meta;
};

inline LoadedData load_data_dir(const std::filesystem::path& dir, const RunConfig& cfg) {
    LoadSpec spec;
    spec.default_kind = parse_kind(cfg.get("data.kind"));
    if (!cfg.empty_value("data.min") && !cfg.empty_value("data.max"))
        spec.declared_range = {cfg.get_double("data.min"), cfg.get_double("data.max")};
    LoadedData out{load_triplets(dir / "triplets.csv", spec), std::nullopt};
    const auto meta_path = dir / "metadata.csv";
    if (std::filesystem::exists(meta_path)) {
        const auto vocab = scan_tag_vocabulary(meta_path);
        out.meta = load_metadata(meta_path, vocab, out.ds);
    }
    return out;
}

// Full stack for one seed: split, base training, freeze, row cache, CHN
// meta-training, and the MAML baseline init.
struct TrainedStack {
    FeatureSplit split;
    PvaeModel base;
    RowCache cache;
    ChnParams chn;
    MamlInit maml;
    std::vector<double> base_trace, chn_trace, maml_trace;
};

inline TrainedStack run_pipeline(const SparseDataset& ds, const MetadataSet* meta, const RunConfig& cfg,
                                 std::uint64_t seed, bool train_chn = true, bool train_maml = true) {
    TrainedStack s;
    s.split = split_from(cfg, ds.n_features, seed, meta);

    Rng init(seed, stream::kBaseInit);
    s.base = make_pvae(pvae_config_from(cfg), ds.n_features, init);
    attach_heads(s.base, s.split.train, ds.kinds, init);
    s.base_trace = train_base(s.base, ds, s.split.train, train_base_config_from(cfg), seed);
    freeze(s.base);
    s.cache = build_row_cache(s.base, ds, feature_mask(s.split.train, ds.n_features));

    if (train_chn) {
        Rng crng(seed, stream::kChnInit);
        const std::size_t meta_in = meta ? meta->input_dim() : 0;
        s.chn = make_chn(chn_config_from(cfg), s.base.latent_dim(), s.base.d_dim(), meta_in, crng);
        s.chn_trace = meta_train(s.chn, s.base, ds, s.split.meta_train, s.cache, meta,
                                 meta_train_config_from(cfg), seed);
    }
    if (train_maml) {
        s.maml = maml_meta_train(s.base, ds, s.split.meta_train, s.cache, maml_config_from(cfg), seed,
                                 &s.maml_trace);
    }
    return s;
}

}  // namespace chn
