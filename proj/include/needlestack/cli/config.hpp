#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "needlestack/error.hpp"
#include "needlestack/eval/analysis.hpp"
#include "needlestack/eval/evaluate.hpp"
#include "needlestack/train/trainer.hpp"

namespace needlestack::cli {

struct ModelSection {
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t d_model = 64;
    std::size_t d_ff = 256;
    std::size_t max_positions = 88;
    std::uint64_t seed = 1;
};

struct RmtSection {
    std::string mode = "rmt";
    std::size_t mem_tokens = 8;
    std::size_t segment_len = 64;
};

struct CurriculumSection {
    std::size_t max_segments = 4;
    std::vector<std::size_t> stages;  // explicit schedule; empty uses the canonical one
};

struct DataSection {
    std::string corpus = "data/corpus";
    std::vector<std::string> tasks{"qa1"};
    std::size_t facts_min = 0;
    std::size_t facts_max = 0;
    double no_noise_fraction = 0.25;
    std::size_t vocab_size = 512;
    std::string tokenizer = "word";
    std::string bpe_vocab;
    std::string bpe_merges;
};

struct EvalSection {
    std::string mode = "rmt";
    std::vector<std::string> tasks{"qa1"};
    std::vector<std::size_t> lengths{0, 252, 508};
    std::size_t samples = 100;
    std::uint64_t seed = 1000;
    std::size_t top_k = 5;
    std::size_t chunk_words = 512;
    std::size_t max_segments = 0;
    std::string metric = "euclidean";
};

struct RunConfig {
    ModelSection model;
    RmtSection rmt;
    CurriculumSection curriculum;
    train::TrainConfig train;
    DataSection data;
    EvalSection eval;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) {
        throw ConfigError(key + ": expected " + (std::is_floating_point_v<T> ? "a number" : "a non-negative integer") +
                          ", got '" + v + "'");
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <class T>
std::string show(const T& v) {
    if constexpr (std::is_same_v<T, std::string>) {
        return v;
    } else if constexpr (std::is_same_v<T, double>) {
        char buf[32];
        auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, end);
    } else if constexpr (std::is_same_v<T, bool>) {
        return v ? "true" : "false";
    } else if constexpr (requires { v.begin(); }) {
        std::string out;
        for (const auto& x : v) out += (out.empty() ? "" : ",") + show(x);
        return out;
    } else {
        return std::to_string(v);
    }
}

template <class T>
void assign(T& target, const std::string& key, const std::string& v) {
    if constexpr (std::is_same_v<T, std::string>) {
        target = v;
    } else if constexpr (std::is_same_v<T, bool>) {
        target = parse_bool(key, v);
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
        target = split_list(v);
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
        target.clear();
        for (const auto& x : split_list(v)) target.push_back(parse_number<std::size_t>(key, x));
    } else {
        target = parse_number<T>(key, v);
    }
}

inline std::size_t levenshtein(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace config_detail

struct Field {
    std::string key;  // section.name
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

/// Every settable key, bound to `cfg`.
inline std::vector<Field> fields(RunConfig& cfg) {
    std::vector<Field> out;
    auto add = [&](const std::string& key, auto& target) {
        auto* t = &target;
        out.push_back({key, [t, key](const std::string& v) { config_detail::assign(*t, key, v); },
                       [t] { return config_detail::show(*t); }});
    };
    add("model.n_layers", cfg.model.n_layers);
    add("model.n_heads", cfg.model.n_heads);
    add("model.d_model", cfg.model.d_model);
    add("model.d_ff", cfg.model.d_ff);
    add("model.max_positions", cfg.model.max_positions);
    add("model.seed", cfg.model.seed);
    add("rmt.mode", cfg.rmt.mode);
    add("rmt.mem_tokens", cfg.rmt.mem_tokens);
    add("rmt.segment_len", cfg.rmt.segment_len);
    add("curriculum.max_segments", cfg.curriculum.max_segments);
    add("curriculum.stages", cfg.curriculum.stages);
    add("train.lr", cfg.train.lr);
    add("train.warmup_steps", cfg.train.warmup_steps);
    add("train.steps_per_stage", cfg.train.total_steps);
    add("train.max_steps", cfg.train.max_steps);
    add("train.batch_size", cfg.train.batch_size);
    add("train.weight_decay", cfg.train.adamw.weight_decay);
    add("train.beta1", cfg.train.adamw.beta1);
    add("train.beta2", cfg.train.adamw.beta2);
    add("train.eps", cfg.train.adamw.eps);
    add("train.grad_clip", cfg.train.grad_clip);
    add("train.eval_every", cfg.train.eval_every);
    add("train.patience", cfg.train.patience);
    add("train.min_delta", cfg.train.min_delta);
    add("train.val_samples", cfg.train.val_samples);
    add("train.seed", cfg.train.seed);
    add("train.threads", cfg.train.threads);
    add("data.corpus", cfg.data.corpus);
    add("data.tasks", cfg.data.tasks);
    add("data.facts_min", cfg.data.facts_min);
    add("data.facts_max", cfg.data.facts_max);
    add("data.no_noise_fraction", cfg.data.no_noise_fraction);
    add("data.vocab_size", cfg.data.vocab_size);
    add("data.tokenizer", cfg.data.tokenizer);
    add("data.bpe_vocab", cfg.data.bpe_vocab);
    add("data.bpe_merges", cfg.data.bpe_merges);
    add("eval.mode", cfg.eval.mode);
    add("eval.tasks", cfg.eval.tasks);
    add("eval.lengths", cfg.eval.lengths);
    add("eval.samples", cfg.eval.samples);
    add("eval.seed", cfg.eval.seed);
    add("eval.top_k", cfg.eval.top_k);
    add("eval.chunk_words", cfg.eval.chunk_words);
    add("eval.max_segments", cfg.eval.max_segments);
    add("eval.metric", cfg.eval.metric);
    return out;
}

/// Sets one dotted key; unknown keys name the closest valid key.
inline void set_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto fs = fields(cfg);
    for (auto& f : fs) {
        if (f.key == key) {
            f.set(config_detail::trim(value));
            return;
        }
    }
    std::string best;
    std::size_t best_d = std::string::npos;
    for (const auto& f : fs) {
        const auto d = config_detail::levenshtein(key, f.key);
        if (d < best_d) {
            best_d = d;
            best = f.key;
        }
    }
    throw ConfigError("unknown config key '" + key + "' (did you mean '" + best + "'?)");
}

/// Applies `section.key=value`.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
    set_value(cfg, config_detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

/// INI text: [section] headers, key = value lines, '#' or ';' comments.
inline void apply_ini(RunConfig& cfg, const std::string& text, const std::string& origin = "config") {
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = config_detail::trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
            section = config_detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const auto key = config_detail::trim(line.substr(0, eq));
        try {
            set_value(cfg, section.empty() ? key : section + "." + key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline void validate(const RunConfig& cfg) {
    rmt::parse_mode(cfg.rmt.mode);
    eval::parse_eval_mode(cfg.eval.mode);
    eval::parse_metric(cfg.eval.metric);
    for (const auto& t : cfg.data.tasks) world::parse_task(t);
    for (const auto& t : cfg.eval.tasks) world::parse_task(t);
    if (cfg.data.tasks.empty()) throw ConfigError("data.tasks: at least one task is required");
    if (cfg.data.no_noise_fraction < 0 || cfg.data.no_noise_fraction > 1) {
        throw ConfigError("data.no_noise_fraction must lie in [0, 1]");
    }
    if (cfg.data.tokenizer != "word" && cfg.data.tokenizer != "bpe") {
        throw ConfigError("data.tokenizer must be word or bpe");
    }
    if (cfg.train.lr <= 0) throw ConfigError("train.lr must be positive");
    if (cfg.train.batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (cfg.train.total_steps == 0) throw ConfigError("train.steps_per_stage must be >= 1");
    if (cfg.train.eval_every == 0) throw ConfigError("train.eval_every must be >= 1");
    if (cfg.eval.top_k == 0) throw ConfigError("eval.top_k must be >= 1");
    if (!cfg.curriculum.stages.empty()) train::validate_curriculum(cfg.curriculum.stages);
}

/// Defaults, then the file (if any), then overrides in order.
inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
    RunConfig cfg;
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot read config file " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        apply_ini(cfg, ss.str(), path);
    }
    for (const auto& o : overrides) apply_override(cfg, o);
    validate(cfg);
    return cfg;
}

/// The fully resolved configuration as INI text.
inline std::string to_ini(const RunConfig& cfg) {
    auto copy = cfg;
    std::string out, section;
    for (const auto& f : fields(copy)) {
        const auto dot = f.key.find('.');
        const auto sec = f.key.substr(0, dot);
        if (sec != section) {
            out += (out.empty() ? "[" : "\n[") + sec + "]\n";
            section = sec;
        }
        out += f.key.substr(dot + 1) + " = " + f.get() + "\n";
    }
    return out;
}

inline train::Curriculum curriculum_of(const RunConfig& cfg) {
    if (!cfg.curriculum.stages.empty()) return cfg.curriculum.stages;
    return train::make_curriculum(rmt::parse_mode(cfg.rmt.mode), cfg.curriculum.max_segments);
}

inline std::vector<world::TaskId> task_list(const std::vector<std::string>& names) {
    std::vector<world::TaskId> out;
    for (const auto& n : names) out.push_back(world::parse_task(n));
    return out;
}

}  // namespace needlestack::cli
