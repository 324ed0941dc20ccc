#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>

#include "needlestack/cli/checkpoint.hpp"
#include "needlestack/cli/config.hpp"
#include "needlestack/haystack/bpe.hpp"
#include "needlestack/haystack/corpus.hpp"

#ifndef NEEDLESTACK_VERSION
#define NEEDLESTACK_VERSION "0.1.0+unknown"
#endif

namespace needlestack::cli {

namespace fs = std::filesystem;

inline std::string version() { return NEEDLESTACK_VERSION; }

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex8(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(h & 0xffffffffull));
    return buf;
}

inline std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("failed writing " + path.string());
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Creates `<root>/<command>-<hash8>-<timestamp>` (or `explicit_dir`) and
/// records the resolved config, seed and version in it.
inline fs::path make_run_dir(const std::string& command, const RunConfig& cfg, const std::string& args_key,
                             const std::string& root, const std::string& explicit_dir, std::uint64_t seed) {
    const std::string resolved = to_ini(cfg);
    fs::path dir;
    if (!explicit_dir.empty()) {
        dir = explicit_dir;
    } else {
        const std::string base = command + "-" + hex8(fnv1a(resolved + "\n" + args_key)) + "-" + timestamp();
        dir = fs::path(root) / base;
        for (int i = 1; fs::exists(dir); ++i) dir = fs::path(root) / (base + "-" + std::to_string(i));
    }
    fs::create_directories(dir);
    write_text(dir / "config.ini", resolved);
    write_text(dir / "seed", std::to_string(seed) + "\n");
    write_text(dir / "version", version() + "\n");
    write_text(dir / "command", command + (args_key.empty() ? "" : " " + args_key) + "\n");
    return dir;
}

inline haystack::BackgroundCorpus load_corpus_from(const RunConfig& cfg) {
    return haystack::load_corpus(cfg.data.corpus);
}

/// Word-level vocabulary of at most data.vocab_size entries, or the BPE
/// model named in the config.
inline haystack::Tokenizer build_tokenizer(const RunConfig& cfg, const haystack::BackgroundCorpus& corpus) {
    if (cfg.data.tokenizer == "bpe") {
        if (cfg.data.bpe_vocab.empty() || cfg.data.bpe_merges.empty()) {
            throw ConfigError("data.tokenizer = bpe needs data.bpe_vocab and data.bpe_merges");
        }
        return haystack::Tokenizer::byte_pair(haystack::BpeModel::load(cfg.data.bpe_vocab, cfg.data.bpe_merges));
    }
    const auto words = haystack::task_vocabulary();
    const std::size_t fixed = words.size() + haystack::special_tokens().size();
    if (cfg.data.vocab_size < fixed) {
        throw ConfigError("data.vocab_size " + std::to_string(cfg.data.vocab_size) + " is below the " +
                          std::to_string(fixed) + " task and special tokens");
    }
    return haystack::build_vocab(corpus.sentence_lists(), words, cfg.data.vocab_size - fixed);
}

inline nn::ModelConfig model_config_of(const RunConfig& cfg, std::size_t vocab_size) {
    nn::ModelConfig m;
    m.n_layers = cfg.model.n_layers;
    m.n_heads = cfg.model.n_heads;
    m.d_model = cfg.model.d_model;
    m.d_ff = cfg.model.d_ff;
    m.vocab_size = vocab_size;
    m.max_positions = cfg.model.max_positions;
    m.seed = cfg.model.seed;
    m.validate();
    return m;
}

inline rmt::RmtConfig rmt_config_of(const RunConfig& cfg) {
    rmt::RmtConfig r;
    r.mem_tokens = cfg.rmt.mem_tokens;
    r.segment_len = cfg.rmt.segment_len;
    r.retrieval = rmt::parse_mode(cfg.rmt.mode) == rmt::Mode::rmt_r;
    return r;
}

inline train::DataConfig data_config_of(const RunConfig& cfg) {
    return {task_list(cfg.data.tasks), cfg.data.facts_min, cfg.data.facts_max, cfg.data.no_noise_fraction};
}

/// The tokenizer a checkpoint was trained with.
inline haystack::Tokenizer checkpoint_tokenizer(const Checkpoint& c) {
    if (!c.tokenizer.empty()) return haystack::Tokenizer::deserialize(c.tokenizer);
    const auto& d = c.meta.at("bpe");
    return haystack::Tokenizer::byte_pair(haystack::BpeModel::load(d.at("vocab"), d.at("merges")));
}

}  // namespace needlestack::cli
