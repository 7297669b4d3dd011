#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "chn/errors.hpp"

namespace chn {

// Flat key = value settings with a closed key set: unknown keys are rejected,
// and every value is echoed into report headers for provenance.
class RunConfig {
public:
    RunConfig() : values_(defaults()) {}

    void set(const std::string& key, const std::string& value) {
        auto it = values_.find(key);
        if (it == values_.end()) throw DataError("config: unknown key '" + key + "'");
        it->second = value;
    }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw DataError("config: unknown key '" + key + "'");
        return it->second;
    }

    double get_double(const std::string& key) const {
        const std::string& s = get(key);
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw DataError("config: key '" + key + "' is not a number: '" + s + "'");
        }
    }

    std::size_t get_size(const std::string& key) const {
        const double v = get_double(key);
        if (v < 0) throw DataError("config: key '" + key + "' must be non-negative");
        return static_cast<std::size_t>(v);
    }

    std::vector<std::size_t> get_sizes(const std::string& key) const {
        std::vector<std::size_t> out;
        std::istringstream ss(get(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.empty()) continue;
            out.push_back(static_cast<std::size_t>(std::stoull(item)));
        }
        return out;
    }

    bool empty_value(const std::string& key) const { return get(key).empty(); }

    void load_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open config " + path.string());
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                bool blank = true;
                for (char c : line) blank &= std::isspace(static_cast<unsigned char>(c)) != 0;
                if (blank) continue;
                throw DataError("config line " + std::to_string(line_no) + ": expected key = value");
            }
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r");
                const auto b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    // Sorted `# key = value` lines for report provenance.
    std::vector<std::string> echo_lines() const {
        std::vector<std::string> out;
        out.reserve(values_.size());
        for (const auto& [k, v] : values_) out.push_back("# " + k + " = " + v);
        return out;
    }

private:
    static std::map<std::string, std::string> defaults() {
        return {
            {"seed", "1"},
            {"data.kind", "binary"},
            {"data.min", ""},
            {"data.max", ""},
            {"split.train", "0.6"},
            {"split.meta_train", "0.3"},
            {"split.meta_test", "0.1"},
            {"split.mode", "random"},
            {"pvae.e_dim", "30"},
            {"pvae.set_dim", "30"},
            {"pvae.latent_dim", "20"},
            {"pvae.point_hidden", "30"},
            {"pvae.enc_hidden", "30"},
            {"pvae.dec_hidden", "30"},
            {"pvae.d_dim", "12"},
            {"pvae.output_variance", "0.1"},
            {"base.epochs", "2000"},
            {"base.batch", "100"},
            {"base.lr", "1e-2"},
            {"base.weight_decay", "0"},
            {"base.p_keep", "0.8"},
            {"base.kl_warmup_epochs", "600"},
            {"chn.point_dim", "25"},
            {"chn.f_hidden", "16"},
            {"chn.context_dim", "25"},
            {"chn.g_hidden", "50"},
            {"chn.meta_dim", "5"},
            {"chn.h_hidden", "10"},
            {"chn.pred_hidden", "256,256"},
            {"chn.epochs", "1200"},
            {"chn.batch", "4"},
            {"chn.lr", "1e-3"},
            {"chn.weight_decay", "1e-3"},
            {"chn.k_max", "32"},
            {"chn.target_cap", "256"},
            {"maml.inner_lr", "1e-2"},
            {"maml.outer_lr", "5e-3"},
            {"maml.inner_steps", "10"},
            {"maml.meta_batch", "4"},
            {"maml.epochs", "120"},
            {"eval.ks", "0,1,2,4,8,16,32"},
            {"eval.fine_tune_lr", "5e-2"},
            {"timing.batch", "128"},
            {"timing.reps", "20"},
            {"synth.rows", "500"},
            {"synth.features", "60"},
            {"synth.rank", "3"},
            {"synth.noise_sd", "0"},
            {"synth.obs_prob", "0.12"},
            {"synth.kind", "binary"},
            {"synth.tag_groups", "4"},
        };
    }

    std::map<std::string, std::string> values_;
};

}  // namespace chn
