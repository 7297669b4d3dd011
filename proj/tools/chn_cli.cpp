// Command-line driver: synthetic data generation, base-model training,
// hypernetwork meta-training, the MAML baseline, k-shot evaluation, and the
// initialization-timing benchmark. All randomness derives from --seed.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "chn/checkpoint.hpp"
#include "chn/config.hpp"
#include "chn/evaluate.hpp"
#include "chn/pipeline.hpp"
#include "chn/synthetic.hpp"

namespace fs = std::filesystem;
using namespace chn;

namespace {

struct CommonArgs {
    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "flat key = value config file");
    cmd->add_option("--seed", args.seed, "master seed; all streams derive from it");
    cmd->add_option("--set", args.overrides, "override a config key (key=value, repeatable)");
}

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg;
    if (args.config_path) cfg.load_file(*args.config_path);
    for (const auto& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw DataError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (args.seed) cfg.set("seed", std::to_string(*args.seed));
    return cfg;
}

std::vector<std::size_t> parse_ks(const std::string& csv) {
    std::vector<std::size_t> ks;
    std::istringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) ks.push_back(static_cast<std::size_t>(std::stoull(item)));
    return ks;
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::istringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) seeds.push_back(std::stoull(item));
    return seeds;
}

int cmd_synth(const CommonArgs& common, const std::string& out_dir) {
    RunConfig cfg = resolve_config(common);
    Rng rng(cfg.get_size("seed"), stream::kSynth);
    auto data = generate_synthetic(synth_config_from(cfg), rng);
    write_synthetic(data, out_dir);
    std::cout << "wrote " << data.ds.triplets.size() << " triplets for " << data.ds.n_rows << " rows x "
              << data.ds.n_features << " features to " << out_dir << "\n";
    return 0;
}

int cmd_train_base(const CommonArgs& common, const std::string& data_dir, const std::string& out_path) {
    RunConfig cfg = resolve_config(common);
    const std::uint64_t seed = cfg.get_size("seed");
    auto data = load_data_dir(data_dir, cfg);
    const MetadataSet* meta = data.meta ? &*data.meta : nullptr;

    auto split = split_from(cfg, data.ds.n_features, seed, meta);
    Rng init(seed, stream::kBaseInit);
    PvaeModel base = make_pvae(pvae_config_from(cfg), data.ds.n_features, init);
    attach_heads(base, split.train, data.ds.kinds, init);
    auto trace = train_base(base, data.ds, split.train, train_base_config_from(cfg), seed);
    freeze(base);
    save_pvae(base, &split, out_path);
    std::cout << "trained base model on " << split.train.size() << " features; ELBO "
              << (trace.empty() ? 0.0 : trace.front()) << " -> " << (trace.empty() ? 0.0 : trace.back())
              << "; saved to " << out_path << "\n";
    return 0;
}

struct LoadedStack {
    LoadedData data;
    FeatureSplit split;
    PvaeModel base;
    RowCache cache;
};

LoadedStack load_stack(const RunConfig& cfg, const std::string& data_dir, const std::string& base_path) {
    LoadedStack s{load_data_dir(data_dir, cfg), {}, {}, {}};
    auto ckpt = load_pvae(base_path);
    if (!ckpt.split) throw DataError(base_path + ": checkpoint lacks the feature split");
    if (!ckpt.model.frozen) throw DataError(base_path + ": base model is not frozen");
    if (ckpt.split->assignment.size() != s.data.ds.n_features)
        throw DataError(base_path + ": split size does not match the dataset");
    s.split = std::move(*ckpt.split);
    s.base = std::move(ckpt.model);
    s.cache = build_row_cache(s.base, s.data.ds, feature_mask(s.split.train, s.data.ds.n_features));
    return s;
}

int cmd_meta_train(const CommonArgs& common, const std::string& data_dir, const std::string& base_path,
                   const std::string& out_path) {
    RunConfig cfg = resolve_config(common);
    const std::uint64_t seed = cfg.get_size("seed");
    auto s = load_stack(cfg, data_dir, base_path);
    const MetadataSet* meta = s.data.meta ? &*s.data.meta : nullptr;

    Rng crng(seed, stream::kChnInit);
    ChnParams chn = make_chn(chn_config_from(cfg), s.base.latent_dim(), s.base.d_dim(),
                             meta ? meta->input_dim() : 0, crng);
    auto trace = meta_train(chn, s.base, s.data.ds, s.split.meta_train, s.cache, meta,
                            meta_train_config_from(cfg), seed);
    save_chn(chn, out_path);
    std::cout << "meta-trained hypernetwork on " << s.split.meta_train.size() << " features; l(psi) "
              << (trace.empty() ? 0.0 : trace.front()) << " -> " << (trace.empty() ? 0.0 : trace.back())
              << "; saved to " << out_path << "\n";
    return 0;
}

int cmd_maml_train(const CommonArgs& common, const std::string& data_dir, const std::string& base_path,
                   const std::string& out_path) {
    RunConfig cfg = resolve_config(common);
    const std::uint64_t seed = cfg.get_size("seed");
    auto s = load_stack(cfg, data_dir, base_path);
    std::vector<double> trace;
    MamlInit init =
        maml_meta_train(s.base, s.data.ds, s.split.meta_train, s.cache, maml_config_from(cfg), seed, &trace);
    save_maml(init, out_path);
    std::cout << "meta-learned head init; outer loss " << (trace.empty() ? 0.0 : trace.front()) << " -> "
              << (trace.empty() ? 0.0 : trace.back()) << "; saved to " << out_path << "\n";
    return 0;
}

bool needs_chn(const std::vector<MethodId>& methods) {
    for (const auto& m : methods)
        if (m.kind == MethodId::Kind::kChn || m.kind == MethodId::Kind::kChnThenFinetune) return true;
    return false;
}

bool needs_maml(const std::vector<MethodId>& methods) {
    for (const auto& m : methods)
        if (m.kind == MethodId::Kind::kMaml) return true;
    return false;
}

int cmd_evaluate(const CommonArgs& common, const std::string& data_dir, const std::string& base_path,
                 const std::string& chn_path, const std::string& maml_path, const std::string& methods_csv,
                 const std::string& ks_csv, const std::string& seeds_csv, const std::string& out_path) {
    RunConfig cfg = resolve_config(common);
    auto methods = parse_methods(methods_csv);
    if (needs_chn(methods) && chn_path.empty())
        throw DataError("--methods includes a hypernetwork method but no --chn checkpoint was given");
    if (needs_maml(methods) && maml_path.empty())
        throw DataError("--methods includes maml but no --maml checkpoint was given");

    auto s = load_stack(cfg, data_dir, base_path);
    const MetadataSet* meta = s.data.meta ? &*s.data.meta : nullptr;
    std::optional<ChnParams> chn;
    if (!chn_path.empty()) chn = load_chn(chn_path);
    std::optional<MamlInit> maml;
    if (!maml_path.empty()) maml = load_maml(maml_path);

    const auto ks = ks_csv.empty() ? parse_ks(cfg.get("eval.ks")) : parse_ks(ks_csv);
    auto seeds = seeds_csv.empty() ? std::vector<std::uint64_t>{cfg.get_size("seed")} : parse_seeds(seeds_csv);

    auto ctx = make_eval_context(s.data.ds, meta, s.split, s.base, s.cache, chn ? &*chn : nullptr,
                                 maml ? &*maml : nullptr, cfg.get_double("eval.fine_tune_lr"));
    auto report = evaluate_kshot(ctx, methods, ks, seeds);

    const fs::path out(out_path);
    write_report_csv(report, cfg.echo_lines(), out);
    fs::path agg = out;
    agg.replace_extension(".agg.csv");
    write_aggregate_csv(report, cfg.echo_lines(), agg);
    fs::path log = out;
    log.replace_extension(".log");
    write_lines(report.episode_log, log);
    std::cout << "wrote " << report.rows.size() << " rows to " << out_path << ", aggregates to "
              << agg.string() << ", episode log to " << log.string() << "\n";
    return 0;
}

int cmd_timing(const CommonArgs& common, const std::string& data_dir, const std::string& base_path,
               const std::string& chn_path, const std::string& maml_path, const std::string& methods_csv,
               const std::string& ks_csv, std::size_t batch_size, std::size_t reps,
               const std::string& out_path) {
    RunConfig cfg = resolve_config(common);
    auto methods = parse_methods(methods_csv);
    if (needs_chn(methods) && chn_path.empty())
        throw DataError("--methods includes a hypernetwork method but no --chn checkpoint was given");
    if (needs_maml(methods) && maml_path.empty())
        throw DataError("--methods includes maml but no --maml checkpoint was given");

    auto s = load_stack(cfg, data_dir, base_path);
    const MetadataSet* meta = s.data.meta ? &*s.data.meta : nullptr;
    std::optional<ChnParams> chn;
    if (!chn_path.empty()) chn = load_chn(chn_path);
    std::optional<MamlInit> maml;
    if (!maml_path.empty()) maml = load_maml(maml_path);

    if (batch_size == 0) batch_size = cfg.get_size("timing.batch");
    if (reps == 0) reps = cfg.get_size("timing.reps");
    const auto ks = ks_csv.empty() ? parse_ks(cfg.get("eval.ks")) : parse_ks(ks_csv);

    auto ctx = make_eval_context(s.data.ds, meta, s.split, s.base, s.cache, chn ? &*chn : nullptr,
                                 maml ? &*maml : nullptr, cfg.get_double("eval.fine_tune_lr"));
    std::vector<TimingRow> rows;
    for (const auto& method : methods)
        for (const std::size_t k : ks)
            rows.push_back(time_initialization(ctx, method, k, batch_size, reps, cfg.get_size("seed")));
    write_timing_csv(rows, out_path);
    std::cout << "wrote " << rows.size() << " timing rows to " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contextual hypernetwork workbench: cold-start decoder heads for a partial VAE"};
    app.require_subcommand(1);

    CommonArgs common;

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic low-rank dataset");
    std::string synth_out = "data";
    synth->add_option("--out", synth_out, "output directory");
    std::optional<std::size_t> rows, features, rank, tag_groups;
    std::optional<double> noise_sd, obs_prob;
    std::optional<std::string> kind;
    synth->add_option("--rows", rows);
    synth->add_option("--features", features);
    synth->add_option("--rank", rank);
    synth->add_option("--noise-sd", noise_sd);
    synth->add_option("--obs-prob", obs_prob);
    synth->add_option("--kind", kind, "binary | continuous");
    synth->add_option("--tag-groups", tag_groups);
    add_common(synth, common);

    // train-base
    auto* tb = app.add_subcommand("train-base", "train and freeze the base imputation model");
    std::string tb_data, tb_out = "base.ckpt";
    tb->add_option("--data", tb_data)->required();
    tb->add_option("--out", tb_out);
    add_common(tb, common);

    // meta-train
    auto* mt = app.add_subcommand("meta-train", "meta-train the hypernetwork against a frozen base");
    std::string mt_data, mt_base, mt_out = "chn.ckpt";
    mt->add_option("--data", mt_data)->required();
    mt->add_option("--base", mt_base)->required();
    mt->add_option("--out", mt_out);
    add_common(mt, common);

    // maml-train
    auto* ml = app.add_subcommand("maml-train", "meta-learn the MAML head initialization");
    std::string ml_data, ml_base, ml_out = "maml.ckpt";
    ml->add_option("--data", ml_data)->required();
    ml->add_option("--base", ml_base)->required();
    ml->add_option("--out", ml_out);
    add_common(ml, common);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "k-shot evaluation of adaptation methods");
    std::string ev_data, ev_base, ev_chn, ev_maml, ev_methods = "chn,random,mean_impute", ev_ks, ev_seeds;
    std::string ev_out = "report.csv";
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--base", ev_base)->required();
    ev->add_option("--chn", ev_chn);
    ev->add_option("--maml", ev_maml);
    ev->add_option("--methods", ev_methods, "comma list, e.g. chn,mean_impute,knn:10,maml:10");
    ev->add_option("--ks", ev_ks, "context sizes, default from config eval.ks");
    ev->add_option("--seeds", ev_seeds, "episode seeds, default = --seed");
    ev->add_option("--out", ev_out);
    add_common(ev, common);

    // timing
    auto* tm = app.add_subcommand("timing", "head-initialization timing benchmark");
    std::string tm_data, tm_base, tm_chn, tm_maml, tm_methods = "chn,train_from_random:10", tm_ks = "1,4,16";
    std::string tm_out = "timing.csv";
    std::size_t tm_batch = 0, tm_reps = 0;
    tm->add_option("--data", tm_data)->required();
    tm->add_option("--base", tm_base)->required();
    tm->add_option("--chn", tm_chn);
    tm->add_option("--maml", tm_maml);
    tm->add_option("--methods", tm_methods);
    tm->add_option("--ks", tm_ks);
    tm->add_option("--batch-size", tm_batch, "features per timed batch (default timing.batch)");
    tm->add_option("--reps", tm_reps, "timed repetitions (default timing.reps)");
    tm->add_option("--out", tm_out);
    add_common(tm, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) {
            if (rows) common.overrides.push_back("synth.rows=" + std::to_string(*rows));
            if (features) common.overrides.push_back("synth.features=" + std::to_string(*features));
            if (rank) common.overrides.push_back("synth.rank=" + std::to_string(*rank));
            if (noise_sd) common.overrides.push_back("synth.noise_sd=" + std::to_string(*noise_sd));
            if (obs_prob) common.overrides.push_back("synth.obs_prob=" + std::to_string(*obs_prob));
            if (kind) common.overrides.push_back("synth.kind=" + *kind);
            if (tag_groups) common.overrides.push_back("synth.tag_groups=" + std::to_string(*tag_groups));
            return cmd_synth(common, synth_out);
        }
        if (tb->parsed()) return cmd_train_base(common, tb_data, tb_out);
        if (mt->parsed()) return cmd_meta_train(common, mt_data, mt_base, mt_out);
        if (ml->parsed()) return cmd_maml_train(common, ml_data, ml_base, ml_out);
        if (ev->parsed())
            return cmd_evaluate(common, ev_data, ev_base, ev_chn, ev_maml, ev_methods, ev_ks, ev_seeds, ev_out);
        if (tm->parsed())
            return cmd_timing(common, tm_data, tm_base, tm_chn, tm_maml, tm_methods, tm_ks, tm_batch,
                              tm_reps, tm_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
