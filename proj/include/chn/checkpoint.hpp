#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "chn/baselines.hpp"
#include "chn/chn_model.hpp"
#include "chn/errors.hpp"
#include "chn/matrix.hpp"
#include "chn/pvae.hpp"

namespace chn {

// Line-oriented text checkpoints: a kind header, then per tensor
//   name rows cols
// followed by `rows` lines of space-separated decimal floats. 17 significant
// digits make the round trip bit-exact.
namespace ckpt {

inline void write_tensor(std::ostream& out, const std::string& name, const double* data,
                         std::size_t rows, std::size_t cols) {
    out << name << ' ' << rows << ' ' << cols << '\n';
    char buf[64];
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", data[r * cols + c]);
            out << (c ? " " : "") << buf;
        }
        out << '\n';
    }
}

inline void write_all(std::ostream& out, const std::string& header, const TensorList& tensors) {
    out << header << '\n';
    for (const auto& t : tensors) write_tensor(out, t.name, t.data, t.rows, t.cols);
}

struct TensorFile {
    std::vector<std::pair<std::string, Matrix>> tensors;  // in file order

    const Matrix* find(const std::string& name) const {
        for (const auto& [n, m] : tensors)
            if (n == name) return &m;
        return nullptr;
    }
    const Matrix& require(const std::string& name) const {
        const Matrix* m = find(name);
        if (!m) throw DataError("checkpoint: missing tensor " + name);
        return *m;
    }
    double scalar(const std::string& name) const {
        const Matrix& m = require(name);
        if (m.size() != 1) throw DataError("checkpoint: " + name + " is not a scalar");
        return m.data[0];
    }
    std::optional<double> scalar_opt(const std::string& name) const {
        const Matrix* m = find(name);
        if (!m) return std::nullopt;
        return m->data[0];
    }
};

inline TensorFile read_all(const std::filesystem::path& path, const std::string& expected_header) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::string header;
    if (!std::getline(in, header)) throw DataError(path.string() + ": empty checkpoint");
    if (header != expected_header)
        throw DataError(path.string() + ": kind mismatch, expected '" + expected_header + "', found '" +
                        header + "'");
    TensorFile file;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream hdr(line);
        std::string name;
        std::size_t rows = 0, cols = 0;
        if (!(hdr >> name >> rows >> cols)) throw DataError(path.string() + ": malformed tensor header '" + line + "'");
        Matrix m(rows, cols);
        for (std::size_t r = 0; r < rows; ++r) {
            if (!std::getline(in, line))
                throw DataError(path.string() + ": truncated tensor " + name + " at row " + std::to_string(r));
            std::istringstream vals(line);
            for (std::size_t c = 0; c < cols; ++c) {
                if (!(vals >> m(r, c)))
                    throw DataError(path.string() + ": malformed tensor " + name + " at row " +
                                    std::to_string(r));
            }
        }
        file.tensors.emplace_back(name, std::move(m));
    }
    return file;
}

// Rebuilds an MLP from tensors named prefix.L<i>.W / prefix.L<i>.b.
inline MlpParams read_mlp(const TensorFile& file, const std::string& prefix) {
    MlpParams p;
    for (std::size_t i = 0;; ++i) {
        const std::string base = prefix + ".L" + std::to_string(i);
        const Matrix* W = file.find(base + ".W");
        if (!W) break;
        const Matrix& b = file.require(base + ".b");
        MlpLayer layer;
        layer.W = *W;
        layer.b = b.data;
        p.layers.push_back(std::move(layer));
    }
    if (p.layers.empty()) throw DataError("checkpoint: missing network " + prefix);
    return p;
}

inline std::vector<std::size_t> hidden_dims(const MlpParams& p) {
    std::vector<std::size_t> dims;
    for (std::size_t i = 0; i + 1 < p.layers.size(); ++i) dims.push_back(p.layers[i].W.rows);
    return dims;
}

}  // namespace ckpt

inline constexpr const char* kPvaeHeader = "PVAE-CKPT v1";
inline constexpr const char* kChnHeader = "CHN-CKPT v1";
inline constexpr const char* kMamlHeader = "MAML-CKPT v1";

// ---------------------------------------------------------------------------
// P-VAE (the optional split travels with the base model so later stages see
// the exact same feature assignment)

inline void save_pvae(PvaeModel& m, const FeatureSplit* split, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    TensorList tensors = collect_theta0(m);
    double output_variance = m.cfg.output_variance;
    double frozen = m.frozen ? 1.0 : 0.0;
    double set_dim = static_cast<double>(m.cfg.set_dim);
    tensors.push_back(view("config.output_variance", output_variance));
    tensors.push_back(view("config.frozen", frozen));
    tensors.push_back(view("config.set_dim", set_dim));
    std::vector<double> links, assignment;
    for (const auto& [f, h] : m.decoder.heads)
        links.push_back(h.link == Link::kSigmoid ? 1.0 : 0.0);
    tensors.push_back(view("decoder.head_links", links));
    if (split) {
        assignment.assign(split->assignment.begin(), split->assignment.end());
        tensors.push_back(view("split.assignment", assignment));
    }
    ckpt::write_all(out, kPvaeHeader, tensors);
}

struct PvaeCheckpoint {
    PvaeModel model;
    std::optional<FeatureSplit> split;
};

inline PvaeCheckpoint load_pvae(const std::filesystem::path& path) {
    const auto file = ckpt::read_all(path, kPvaeHeader);
    PvaeCheckpoint out;
    PvaeModel& m = out.model;

    const Matrix& emb = file.require("set_encoder.embeddings");
    m.set_encoder.embeddings = emb;
    m.set_encoder.point_net = ckpt::read_mlp(file, "set_encoder.point_net");
    m.encoder.trunk = ckpt::read_mlp(file, "encoder.trunk");
    m.encoder.mu_head = ckpt::read_mlp(file, "encoder.mu_head");
    m.encoder.logvar_head = ckpt::read_mlp(file, "encoder.logvar_head");
    m.decoder.trunk = ckpt::read_mlp(file, "decoder.trunk");

    m.cfg.e_dim = emb.cols;
    m.cfg.set_dim = static_cast<std::size_t>(file.scalar("config.set_dim"));
    m.cfg.latent_dim = m.encoder.mu_head.out_dim();
    m.cfg.d_dim = m.decoder.trunk.out_dim();
    m.cfg.point_hidden = ckpt::hidden_dims(m.set_encoder.point_net);
    m.cfg.enc_hidden.clear();
    for (const auto& l : m.encoder.trunk.layers) m.cfg.enc_hidden.push_back(l.W.rows);
    m.cfg.dec_hidden = ckpt::hidden_dims(m.decoder.trunk);
    m.cfg.output_variance = file.scalar("config.output_variance");

    const Matrix& links = file.require("decoder.head_links");
    std::size_t head_idx = 0;
    for (const auto& [name, t] : file.tensors) {
        if (name.rfind("decoder.head.", 0) != 0 || name.size() < 2) continue;
        if (name.substr(name.size() - 2) != ".w") continue;
        const std::string fstr = name.substr(13, name.size() - 15);
        const std::size_t f = static_cast<std::size_t>(std::stoull(fstr));
        HeadParams h;
        h.w = t.data;
        h.b = file.scalar("decoder.head." + fstr + ".b");
        if (head_idx >= links.size()) throw DataError("checkpoint: head_links shorter than head count");
        h.link = links.data[head_idx] == 1.0 ? Link::kSigmoid : Link::kIdentity;
        ++head_idx;
        m.decoder.heads[f] = std::move(h);
    }
    m.frozen = file.scalar("config.frozen") == 1.0;

    if (const Matrix* assign = file.find("split.assignment")) {
        FeatureSplit split;
        split.assignment.resize(assign->size());
        for (std::size_t f = 0; f < assign->size(); ++f) {
            split.assignment[f] = static_cast<std::uint8_t>(assign->data[f]);
            if (split.assignment[f] == 0) split.train.push_back(f);
            else if (split.assignment[f] == 1) split.meta_train.push_back(f);
            else split.meta_test.push_back(f);
        }
        out.split = std::move(split);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CHN

inline void save_chn(ChnParams& p, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    TensorList tensors = collect_psi(p);
    double use_meta = p.use_metadata ? 1.0 : 0.0;
    double meta_dim = static_cast<double>(p.meta_dim);
    tensors.push_back(view("config.use_metadata", use_meta));
    tensors.push_back(view("config.meta_dim", meta_dim));
    ckpt::write_all(out, kChnHeader, tensors);
}

inline ChnParams load_chn(const std::filesystem::path& path) {
    const auto file = ckpt::read_all(path, kChnHeader);
    ChnParams p;
    p.f_net = ckpt::read_mlp(file, "f_net");
    p.g_net = ckpt::read_mlp(file, "g_net");
    p.use_metadata = file.scalar("config.use_metadata") == 1.0;
    p.meta_dim = static_cast<std::size_t>(file.scalar("config.meta_dim"));
    if (p.use_metadata) p.h_net = ckpt::read_mlp(file, "h_net");
    p.pred_net = ckpt::read_mlp(file, "pred_net");
    return p;
}

// ---------------------------------------------------------------------------
// MAML initialization

inline void save_maml(MamlInit& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    TensorList tensors = collect_maml(m);
    double inner_lr = m.cfg.inner_lr, outer_lr = m.cfg.outer_lr;
    double inner_steps = static_cast<double>(m.cfg.inner_steps);
    double meta_batch = static_cast<double>(m.cfg.meta_batch);
    tensors.push_back(view("config.inner_lr", inner_lr));
    tensors.push_back(view("config.outer_lr", outer_lr));
    tensors.push_back(view("config.inner_steps", inner_steps));
    tensors.push_back(view("config.meta_batch", meta_batch));
    ckpt::write_all(out, kMamlHeader, tensors);
}

inline MamlInit load_maml(const std::filesystem::path& path) {
    const auto file = ckpt::read_all(path, kMamlHeader);
    MamlInit m;
    m.theta.w = file.require("theta.w").data;
    m.theta.b = file.scalar("theta.b");
    m.cfg.inner_lr = file.scalar("config.inner_lr");
    m.cfg.outer_lr = file.scalar("config.outer_lr");
    m.cfg.inner_steps = static_cast<std::size_t>(file.scalar("config.inner_steps"));
    m.cfg.meta_batch = static_cast<std::size_t>(file.scalar("config.meta_batch"));
    return m;
}

}  // namespace chn
