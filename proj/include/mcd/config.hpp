#pragma once

// Flat key=value run configuration. Every key is registered with a
// documented default; unknown keys are hard errors (no silent typos).
// File values are overridden by CLI flags, and the fully resolved
// config is echoed into every output directory as resolved.cfg.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcd {

struct ConfigEntry {
    const char* key;
    const char* def;
    const char* doc;
};

inline const std::vector<ConfigEntry>& config_registry() {
    static const std::vector<ConfigEntry> reg = {
        {"seed", "1234", "top-level seed; all randomness is split from it per module"},
        {"run.threads", "0", "worker threads for Monte Carlo verification (0 = all cores)"},
        {"schedule.kind", "linear", "signal schedule: linear | cosine"},
        {"schedule.t_min", "0.001", "lower clamp for time draws in training, in (0, 0.5)"},
        {"schedule.K", "28", "extended vocabulary size for calibration (vocab + mask)"},
        {"schedule.cdf_tol", "1e-10", "absolute tolerance of F_Y evaluation and inversion"},
        {"schedule.gh_nodes", "256", "Gauss-Hermite node count (>= 128)"},
        {"model.vocab", "28", "extended vocabulary K; mask id is K-1"},
        {"model.context", "64", "sequence length L"},
        {"model.width", "64", "embedding width d"},
        {"model.depth", "2", "number of attention blocks"},
        {"model.heads", "2", "attention heads"},
        {"pretrain.steps", "3000", "teacher pretraining steps"},
        {"pretrain.batch", "32", "pretraining batch size"},
        {"pretrain.lr", "0.001", "pretraining learning rate (warmup then constant)"},
        {"pretrain.warmup", "500", "pretraining linear warmup steps"},
        {"distill.rounds", "3", "distillation rounds N (teacher hard-reset per round)"},
        {"distill.iters", "2000", "iterations per round M"},
        {"distill.delta0", "0.001953125", "initial time gap delta_0 (doubles each round)"},
        {"distill.lr", "0.0003", "distillation learning rate"},
        {"distill.warmup", "0", "distillation warmup steps"},
        {"distill.tau_init", "0.96", "teacher sharpening temperature, round 1"},
        {"distill.tau_step", "0.03", "linear tau decrement per round (clamped at 0.05)"},
        {"distill.loss", "hybrid", "loss variant: hybrid | kl_fwd | kl_bwd"},
        {"distill.batch", "32", "distillation batch size"},
        {"sample.steps", "64", "reverse steps N (NFE)"},
        {"sample.count", "128", "number of sequences to generate"},
        {"sample.scores", "0", "1 = also write per-sample oracle scores CSV"},
        {"eval.order", "2", "Markov source order (1..3)"},
        {"eval.alphabet", "27", "source alphabet size (letters + space)"},
        {"eval.train_tokens", "2000000", "training corpus size in tokens"},
        {"eval.heldout_tokens", "200000", "held-out corpus size in tokens"},
        {"eval.steps_list", "8,16,32,64", "step counts for the benchmark grid"},
        {"eval.count", "256", "sequences generated per benchmark cell"},
        {"calibrate.points", "65", "uniform t grid size for the calibration table"},
        {"calibrate.t_list", "", "optional explicit comma-separated t values"},
        {"verify.K_list", "2,30,1000", "extended vocabulary sizes to verify"},
        {"verify.samples", "1000000", "Monte Carlo projections per (K, t)"},
        {"verify.t_grid", "16", "time grid size for duality verification"},
    };
    return reg;
}

class RunConfig {
public:
    RunConfig() {
        for (const auto& e : config_registry()) values_[e.key] = e.def;
    }

    void load_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("config: cannot open " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const std::string trimmed = trim(line);
            if (trimmed.empty() || trimmed[0] == '#') continue;
            const std::size_t eq = trimmed.find('=');
            if (eq == std::string::npos) {
                throw std::runtime_error("config: malformed line " + std::to_string(lineno) +
                                         " in " + path + ": " + trimmed);
            }
            set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)),
                path + ":" + std::to_string(lineno));
        }
    }

    void set(const std::string& key, const std::string& value, const std::string& where = "") {
        if (!values_.count(key)) {
            throw std::runtime_error("config: unknown key '" + key + "'" +
                                     (where.empty() ? "" : " at " + where));
        }
        values_[key] = value;
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw std::runtime_error("config: unknown key " + key);
        return it->second;
    }

    double real(const std::string& key) const {
        try {
            std::size_t used = 0;
            const double v = std::stod(str(key), &used);
            if (used != str(key).size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw std::runtime_error("config: key '" + key + "' is not a number: " + str(key));
        }
    }

    std::int64_t integer(const std::string& key) const {
        try {
            std::size_t used = 0;
            const std::int64_t v = std::stoll(str(key), &used);
            if (used != str(key).size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw std::runtime_error("config: key '" + key + "' is not an integer: " + str(key));
        }
    }

    bool flag(const std::string& key) const { return integer(key) != 0; }

    std::vector<std::int64_t> int_list(const std::string& key) const {
        std::vector<std::int64_t> out;
        std::stringstream ss(str(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (trim(item).empty()) continue;
            out.push_back(std::stoll(trim(item)));
        }
        return out;
    }

    std::vector<double> real_list(const std::string& key) const {
        std::vector<double> out;
        std::stringstream ss(str(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (trim(item).empty()) continue;
            out.push_back(std::stod(trim(item)));
        }
        return out;
    }

    /// Deterministic echo of every key with its final value.
    std::string resolved() const {
        std::string out = "# resolved configuration\n";
        for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
        return out;
    }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_; // ordered => stable resolved.cfg
};

} // namespace mcd
