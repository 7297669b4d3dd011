#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "chn/errors.hpp"
#include "chn/rng.hpp"

namespace chn {

enum class FeatureKind { kContinuous, kBinary };

struct ObsPair {
    std::size_t feature;
    double value;  // normalized
};

struct RowObs {
    std::size_t row;
    double value;  // normalized
};

struct Triplet {
    std::size_t row;
    std::size_t feature;
    double raw;
};

// Partially-observed numeric matrix stored as triplets, with per-feature kind
// and min-max normalization applied to continuous values at ingestion.
// Immutable after construction; raw values are retained so writing the
// dataset back to CSV round-trips bit-exactly.
struct SparseDataset {
    std::size_t n_rows = 0;
    std::size_t n_features = 0;
    std::vector<FeatureKind> kinds;
    std::vector<Triplet> triplets;                // sorted by (row, feature)
    std::vector<std::vector<ObsPair>> row_obs;    // per row, sorted by feature
    std::vector<std::vector<RowObs>> feat_obs;    // per feature, sorted by row
    std::vector<double> norm_min, norm_max;       // binary features use (0, 1)
    std::vector<long long> row_ids, feature_ids;  // compact index -> original id

    std::size_t observed_count(std::size_t f) const { return feat_obs[f].size(); }

    double denormalize(std::size_t f, double v) const {
        if (kinds[f] == FeatureKind::kBinary) return v;
        return norm_min[f] + v * (norm_max[f] - norm_min[f]);
    }

    // Mean of the normalized observed values of one feature (0.5 if none).
    double feature_mean(std::size_t f) const {
        if (feat_obs[f].empty()) return 0.5;
        double s = 0.0;
        for (const auto& o : feat_obs[f]) s += o.value;
        return s / static_cast<double>(feat_obs[f].size());
    }
};

struct FeatureMeta {
    std::size_t feature = 0;
    std::vector<double> tags;  // multi-hot over the vocabulary
    std::optional<double> scalar;
};

struct MetadataSet {
    std::vector<FeatureMeta> metas;  // indexed by compact feature index
    std::vector<std::string> vocab;
    bool has_scalar = false;

    std::size_t input_dim() const { return vocab.size() + (has_scalar ? 1 : 0); }

    std::vector<double> input_vector(std::size_t f) const {
        std::vector<double> v = metas[f].tags;
        if (has_scalar) v.push_back(metas[f].scalar.value_or(0.0));
        return v;
    }
};

struct FeatureSplit {
    std::vector<std::size_t> train, meta_train, meta_test;
    std::vector<std::uint8_t> assignment;  // 0 train, 1 meta-train, 2 meta-test

    bool in_train(std::size_t f) const { return assignment[f] == 0; }
};

enum class SplitMode { kRandom, kOrdered };

// One adaptation task: a feature, a sampled context row set, and the target
// complement. Both sets are sorted and cover exactly the observed rows.
struct Episode {
    std::size_t feature = 0;
    std::size_t k = 0;  // actual context size
    std::vector<std::size_t> context_rows;
    std::vector<std::size_t> target_rows;
};

struct MaskedRow {
    std::vector<ObsPair> kept;
    std::vector<ObsPair> hidden;
};

// ---------------------------------------------------------------------------
// Ingestion

struct LoadSpec {
    FeatureKind default_kind = FeatureKind::kBinary;
    std::map<long long, FeatureKind> kind_overrides;            // by original feature id
    std::optional<std::pair<double, double>> declared_range;    // continuous global range
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s, std::size_t line_no, const char* what) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(std::string("line ") + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
    }
}

inline long long parse_id(const std::string& s, std::size_t line_no, const char* what) {
    try {
        std::size_t used = 0;
        long long v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(std::string("line ") + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
    }
}

}  // namespace detail

// Builds the dataset from (row_id, feature_id, raw value) records.
// Ids are compacted in first-appearance order.
struct TripletRecord {
    long long row_id;
    long long feature_id;
    double value;
    std::size_t line_no;
};

inline SparseDataset build_dataset(const std::vector<TripletRecord>& records, const LoadSpec& spec) {
    SparseDataset ds;
    std::map<long long, std::size_t> row_map, feat_map;
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> seen;  // (row, feature) -> line

    std::vector<std::tuple<std::size_t, std::size_t, double, std::size_t>> compact;
    compact.reserve(records.size());
    for (const auto& rec : records) {
        auto [rit, rnew] = row_map.try_emplace(rec.row_id, ds.row_ids.size());
        if (rnew) ds.row_ids.push_back(rec.row_id);
        auto [fit, fnew] = feat_map.try_emplace(rec.feature_id, ds.feature_ids.size());
        if (fnew) ds.feature_ids.push_back(rec.feature_id);
        const std::size_t r = rit->second, f = fit->second;
        auto [sit, inserted] = seen.try_emplace({r, f}, rec.line_no);
        if (!inserted)
            throw DataError("line " + std::to_string(rec.line_no) + ": duplicate entry for (row " +
                            std::to_string(rec.row_id) + ", feature " + std::to_string(rec.feature_id) +
                            "), first seen at line " + std::to_string(sit->second));
        compact.emplace_back(r, f, rec.value, rec.line_no);
    }

    ds.n_rows = ds.row_ids.size();
    ds.n_features = ds.feature_ids.size();
    ds.kinds.resize(ds.n_features, spec.default_kind);
    for (std::size_t f = 0; f < ds.n_features; ++f) {
        auto it = spec.kind_overrides.find(ds.feature_ids[f]);
        if (it != spec.kind_overrides.end()) ds.kinds[f] = it->second;
    }

    ds.norm_min.assign(ds.n_features, 0.0);
    ds.norm_max.assign(ds.n_features, 1.0);
    if (spec.declared_range) {
        for (std::size_t f = 0; f < ds.n_features; ++f)
            if (ds.kinds[f] == FeatureKind::kContinuous) {
                ds.norm_min[f] = spec.declared_range->first;
                ds.norm_max[f] = spec.declared_range->second;
            }
    } else {
        std::vector<bool> any(ds.n_features, false);
        for (const auto& [r, f, v, ln] : compact) {
            if (ds.kinds[f] != FeatureKind::kContinuous) continue;
            if (!any[f]) {
                ds.norm_min[f] = ds.norm_max[f] = v;
                any[f] = true;
            } else {
                ds.norm_min[f] = std::min(ds.norm_min[f], v);
                ds.norm_max[f] = std::max(ds.norm_max[f], v);
            }
        }
    }

    for (const auto& [r, f, v, ln] : compact) {
        if (!std::isfinite(v)) throw DataError("line " + std::to_string(ln) + ": non-finite value");
        if (ds.kinds[f] == FeatureKind::kBinary && v != 0.0 && v != 1.0)
            throw DataError("line " + std::to_string(ln) + ": non-binary value " + std::to_string(v) +
                            " for binary feature " + std::to_string(ds.feature_ids[f]));
        if (ds.kinds[f] == FeatureKind::kContinuous && spec.declared_range &&
            (v < ds.norm_min[f] || v > ds.norm_max[f]))
            throw DataError("line " + std::to_string(ln) + ": value outside declared range");
    }

    ds.triplets.reserve(compact.size());
    for (const auto& [r, f, v, ln] : compact) ds.triplets.push_back({r, f, v});
    std::sort(ds.triplets.begin(), ds.triplets.end(), [](const Triplet& a, const Triplet& b) {
        return a.row != b.row ? a.row < b.row : a.feature < b.feature;
    });

    ds.row_obs.assign(ds.n_rows, {});
    ds.feat_obs.assign(ds.n_features, {});
    for (const auto& t : ds.triplets) {
        double norm = t.raw;
        if (ds.kinds[t.feature] == FeatureKind::kContinuous) {
            const double lo = ds.norm_min[t.feature], hi = ds.norm_max[t.feature];
            norm = (hi > lo) ? (t.raw - lo) / (hi - lo) : 0.5;
        }
        ds.row_obs[t.row].push_back({t.feature, norm});
        ds.feat_obs[t.feature].push_back({t.row, norm});
    }
    return ds;
}

// Triplet CSV: header `row,feature,value`, UTF-8, '.' decimal separator.
inline SparseDataset load_triplets(const std::filesystem::path& path, const LoadSpec& spec = {}) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<TripletRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        if (line_no == 1 && line.rfind("row", 0) == 0) continue;  // header
        auto fields = detail::split_line(line, ',');
        if (fields.size() != 3) throw DataError("line " + std::to_string(line_no) + ": expected 3 fields");
        records.push_back({detail::parse_id(fields[0], line_no, "row id"),
                           detail::parse_id(fields[1], line_no, "feature id"),
                           detail::parse_double(fields[2], line_no, "value"), line_no});
    }
    return build_dataset(records, spec);
}

inline void write_triplets(const SparseDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "row,feature,value\n";
    char buf[64];
    for (const auto& t : ds.triplets) {
        std::snprintf(buf, sizeof(buf), "%.17g", t.raw);
        out << ds.row_ids[t.row] << ',' << ds.feature_ids[t.feature] << ',' << buf << '\n';
    }
}

// Sidecar with the original-id -> compact-index mapping.
inline void write_id_map(const SparseDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "kind,original_id,index\n";
    for (std::size_t r = 0; r < ds.row_ids.size(); ++r) out << "row," << ds.row_ids[r] << ',' << r << '\n';
    for (std::size_t f = 0; f < ds.feature_ids.size(); ++f)
        out << "feature," << ds.feature_ids[f] << ',' << f << '\n';
}

// Metadata CSV: header `feature,tags,scalar`; tags are '|'-separated and must
// come from `vocab`; scalar must be present for all features or none.
inline MetadataSet load_metadata(const std::filesystem::path& path, const std::vector<std::string>& vocab,
                                 const SparseDataset& ds) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());

    std::map<long long, std::size_t> feat_map;
    for (std::size_t f = 0; f < ds.feature_ids.size(); ++f) feat_map[ds.feature_ids[f]] = f;
    std::map<std::string, std::size_t> tag_index;
    for (std::size_t i = 0; i < vocab.size(); ++i) tag_index[vocab[i]] = i;

    MetadataSet ms;
    ms.vocab = vocab;
    ms.metas.resize(ds.n_features);
    for (std::size_t f = 0; f < ds.n_features; ++f) {
        ms.metas[f].feature = f;
        ms.metas[f].tags.assign(vocab.size(), 0.0);
    }

    std::size_t with_scalar = 0, without_scalar = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        if (line_no == 1 && line.rfind("feature", 0) == 0) continue;
        auto fields = detail::split_line(line, ',');
        if (fields.size() != 3) throw DataError("line " + std::to_string(line_no) + ": expected 3 fields");
        const long long fid = detail::parse_id(fields[0], line_no, "feature id");
        auto it = feat_map.find(fid);
        if (it == feat_map.end())
            throw DataError("line " + std::to_string(line_no) + ": feature " + std::to_string(fid) +
                            " absent from dataset");
        FeatureMeta& m = ms.metas[it->second];
        if (!fields[1].empty()) {
            for (const auto& tag : detail::split_line(fields[1], '|')) {
                if (tag.empty()) continue;
                auto ti = tag_index.find(tag);
                if (ti == tag_index.end())
                    throw DataError("line " + std::to_string(line_no) + ": unknown tag '" + tag + "'");
                m.tags[ti->second] = 1.0;
            }
        }
        if (!fields[2].empty()) {
            m.scalar = detail::parse_double(fields[2], line_no, "scalar");
            ++with_scalar;
        } else {
            ++without_scalar;
        }
    }
    if (with_scalar > 0 && (without_scalar > 0 || with_scalar != ds.n_features))
        throw DataError("metadata scalar must be present for all features or none");
    ms.has_scalar = with_scalar > 0;
    return ms;
}

// Distinct tags appearing in a metadata CSV, sorted.
inline std::vector<std::string> scan_tag_vocabulary(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::set<std::string> tags;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        if (line_no == 1 && line.rfind("feature", 0) == 0) continue;
        auto fields = detail::split_line(line, ',');
        if (fields.size() != 3) continue;
        for (const auto& tag : detail::split_line(fields[1], '|'))
            if (!tag.empty()) tags.insert(tag);
    }
    return {tags.begin(), tags.end()};
}

inline void write_metadata(const MetadataSet& ms, const SparseDataset& ds,
                           const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "feature,tags,scalar\n";
    char buf[64];
    for (std::size_t f = 0; f < ms.metas.size(); ++f) {
        out << ds.feature_ids[f] << ',';
        bool first = true;
        for (std::size_t t = 0; t < ms.vocab.size(); ++t)
            if (ms.metas[f].tags[t] != 0.0) {
                if (!first) out << '|';
                out << ms.vocab[t];
                first = false;
            }
        out << ',';
        if (ms.metas[f].scalar) {
            std::snprintf(buf, sizeof(buf), "%.17g", *ms.metas[f].scalar);
            out << buf;
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Splits and episodes

// Floor-based sizes with the remainder assigned to train. Random mode permutes
// with the supplied rng; ordered mode sorts ascending by `keys` (earliest to
// train), breaking ties by feature index.
inline FeatureSplit split_features(std::size_t n_features, std::array<double, 3> fractions, SplitMode mode,
                                   Rng* rng = nullptr, const std::vector<double>* keys = nullptr) {
    if (n_features < 3) throw std::invalid_argument("split_features: need at least 3 features");
    double sum = fractions[0] + fractions[1] + fractions[2];
    if (fractions[0] <= 0 || fractions[1] <= 0 || fractions[2] <= 0 || std::fabs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("split_features: fractions must be positive and sum to 1");

    std::size_t n_train = static_cast<std::size_t>(std::floor(fractions[0] * static_cast<double>(n_features)));
    const std::size_t n_mtr = static_cast<std::size_t>(std::floor(fractions[1] * static_cast<double>(n_features)));
    const std::size_t n_mte = static_cast<std::size_t>(std::floor(fractions[2] * static_cast<double>(n_features)));
    n_train += n_features - (n_train + n_mtr + n_mte);

    std::vector<std::size_t> order(n_features);
    for (std::size_t i = 0; i < n_features; ++i) order[i] = i;
    if (mode == SplitMode::kRandom) {
        if (!rng) throw std::invalid_argument("split_features: random mode needs an rng");
        for (std::size_t i = 0; i + 1 < n_features; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng->below(n_features - i));
            std::swap(order[i], order[j]);
        }
    } else {
        if (!keys || keys->size() != n_features)
            throw std::invalid_argument("split_features: ordered mode needs one key per feature");
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return (*keys)[a] < (*keys)[b]; });
    }

    FeatureSplit split;
    split.assignment.assign(n_features, 0);
    for (std::size_t i = 0; i < n_features; ++i) {
        const std::size_t f = order[i];
        if (i < n_train) {
            split.assignment[f] = 0;
        } else if (i < n_train + n_mtr) {
            split.assignment[f] = 1;
        } else {
            split.assignment[f] = 2;
        }
    }
    for (std::size_t f = 0; f < n_features; ++f) {
        if (split.assignment[f] == 0) split.train.push_back(f);
        else if (split.assignment[f] == 1) split.meta_train.push_back(f);
        else split.meta_test.push_back(f);
    }
    return split;
}

// k_n ~ Uniform{0, ..., k_max} inclusive.
inline std::size_t sample_context_size(Rng& rng, std::size_t k_max = 32) {
    return static_cast<std::size_t>(rng.below(k_max + 1));
}

// Uniform context sample without replacement; targets are every remaining
// observed row. Both sets come back sorted by row index.
inline Episode sample_episode(const SparseDataset& ds, std::size_t feature, std::size_t k, Rng& rng) {
    const auto& obs = ds.feat_obs[feature];
    if (obs.empty()) throw std::invalid_argument("sample_episode: feature has no observations");
    const std::size_t n = obs.size();
    const std::size_t c = std::min(k, n);

    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = obs[i].row;
    for (std::size_t i = 0; i < c; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
        std::swap(rows[i], rows[j]);
    }
    Episode ep;
    ep.feature = feature;
    ep.k = c;
    ep.context_rows.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(c));
    ep.target_rows.assign(rows.begin() + static_cast<std::ptrdiff_t>(c), rows.end());
    std::sort(ep.context_rows.begin(), ep.context_rows.end());
    std::sort(ep.target_rows.begin(), ep.target_rows.end());
    return ep;
}

// Uniform subsample of the target set down to `cap` rows (sorted).
inline void cap_targets(Episode& ep, std::size_t cap, Rng& rng) {
    if (ep.target_rows.size() <= cap) return;
    auto& t = ep.target_rows;
    for (std::size_t i = 0; i < cap; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(t.size() - i));
        std::swap(t[i], t[j]);
    }
    t.resize(cap);
    std::sort(t.begin(), t.end());
}

// Each observation kept independently with probability p_keep; hidden values
// are retained as reconstruction targets.
inline MaskedRow bernoulli_mask(const std::vector<ObsPair>& obs, double p_keep, Rng& rng) {
    if (p_keep <= 0.0 || p_keep > 1.0) throw std::invalid_argument("bernoulli_mask: need 0 < p_keep <= 1");
    MaskedRow out;
    for (const auto& o : obs) {
        if (rng.uniform() < p_keep) out.kept.push_back(o);
        else out.hidden.push_back(o);
    }
    return out;
}

// Observed (feature, value) pairs of one row restricted to a feature subset,
// optionally excluding one feature. Output stays sorted by feature index.
inline std::vector<ObsPair> observed_pairs(const SparseDataset& ds, std::size_t row,
                                           const std::vector<std::uint8_t>* in_set = nullptr,
                                           std::size_t exclude_feature = static_cast<std::size_t>(-1)) {
    std::vector<ObsPair> out;
    for (const auto& o : ds.row_obs[row]) {
        if (o.feature == exclude_feature) continue;
        if (in_set && !(*in_set)[o.feature]) continue;
        out.push_back(o);
    }
    return out;
}

inline std::vector<std::uint8_t> feature_mask(const std::vector<std::size_t>& features, std::size_t n) {
    std::vector<std::uint8_t> mask(n, 0);
    for (std::size_t f : features) mask[f] = 1;
    return mask;
}

// Normalized value of (row, feature) if observed.
inline std::optional<double> value_at(const SparseDataset& ds, std::size_t row, std::size_t feature) {
    const auto& obs = ds.row_obs[row];
    auto it = std::lower_bound(obs.begin(), obs.end(), feature,
                               [](const ObsPair& o, std::size_t f) { return o.feature < f; });
    if (it != obs.end() && it->feature == feature) return it->value;
    return std::nullopt;
}

// Mean normalized value over all observed cells of the given features.
inline double global_observed_mean(const SparseDataset& ds, const std::vector<std::size_t>& features) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t f : features) {
        for (const auto& o : ds.feat_obs[f]) s += o.value;
        n += ds.feat_obs[f].size();
    }
    return n == 0 ? 0.5 : s / static_cast<double>(n);
}

}  // namespace chn
