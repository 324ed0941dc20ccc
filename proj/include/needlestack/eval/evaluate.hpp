#pragma once

#include <chrono>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "needlestack/eval/retrieval.hpp"
#include "needlestack/eval/score.hpp"
#include "needlestack/parallel.hpp"
#include "needlestack/train/encode.hpp"

namespace needlestack::eval {

enum class EvalMode { rmt, rmt_r, oracle, retrieval };

inline EvalMode parse_eval_mode(const std::string& s) {
    if (s == "rmt") return EvalMode::rmt;
    if (s == "rmt-r" || s == "rmt_r") return EvalMode::rmt_r;
    if (s == "oracle") return EvalMode::oracle;
    if (s == "retrieval") return EvalMode::retrieval;
    throw ConfigError("unknown eval mode '" + s + "' (expected rmt, rmt-r, oracle or retrieval)");
}

inline std::string to_string(EvalMode m) {
    switch (m) {
        case EvalMode::rmt: return "rmt";
        case EvalMode::rmt_r: return "rmt-r";
        case EvalMode::oracle: return "oracle";
        case EvalMode::retrieval: return "retrieval";
    }
    return "?";
}

inline bool needs_model(EvalMode m) { return m == EvalMode::rmt || m == EvalMode::rmt_r; }

struct Cell {
    world::TaskId task = world::TaskId::qa1;
    std::size_t length = 0;  // target tokens of the samples
    double accuracy = 0.0;
    std::size_t n = 0;
    double baseline = 0.0;  // best constant answer on the same samples
};

struct EvalReport {
    EvalMode mode = EvalMode::oracle;
    std::vector<Cell> grid;
    double seconds = 0.0;

    const Cell* find(world::TaskId task, std::size_t length) const {
        for (const auto& c : grid)
            if (c.task == task && c.length == length) return &c;
        return nullptr;
    }
};

struct EvalOptions {
    std::size_t threads = 1;
    std::size_t max_segments = 0;  // 0 streams documents of any length
    std::size_t top_k = 5;         // retrieval mode
    std::size_t max_new_tokens = 8;
};

/// Answers from the fact sentences found in `sentences`, in order.
/// Sentences that are not facts are ignored; no answer gives "".
inline std::string read_facts(world::TaskId task, const std::vector<std::string>& sentences,
                              const std::string& question) {
    std::vector<world::oracle::ParsedFact> facts;
    for (const auto& s : sentences) {
        try {
            facts.push_back(world::oracle::parse_fact(s));
        } catch (const DataError&) {
        }
    }
    try {
        return world::oracle::answer(task, facts, world::oracle::parse_question(question));
    } catch (const Error&) {
        return "";
    }
}

/// Accuracy of always answering the most frequent gold answer.
inline double constant_answer_baseline(const std::vector<haystack::MixedSample>& samples) {
    if (samples.empty()) return 0.0;
    std::map<std::string, std::size_t> freq;
    std::size_t best = 0;
    for (const auto& s : samples) best = std::max(best, ++freq[normalize_answer(s.answer())]);
    return static_cast<double>(best) / static_cast<double>(samples.size());
}

/// One response per sample under the given mode.
inline std::string respond(const rmt::RmtModel<float>* model, const haystack::MixedSample& s, EvalMode mode,
                           const haystack::Tokenizer* tok, const EvalOptions& opt) {
    switch (mode) {
        case EvalMode::oracle:
            return read_facts(s.task.task, haystack::split_sentences(s.context), s.question());
        case EvalMode::retrieval: {
            auto r = retrieve_topk(s, Chunking::sentence, opt.top_k);
            std::vector<std::string> picked;
            auto idx = r.indices;
            std::sort(idx.begin(), idx.end());
            const auto chunks = haystack::split_sentences(s.context);
            for (std::size_t i : idx) picked.push_back(chunks[i]);
            return read_facts(s.task.task, picked, s.question());
        }
        default: break;
    }
    if (!model || !tok) throw ConfigError("evaluate: model mode needs a checkpoint");
    const auto segments = train::segment_prompt(train::prompt_ids(s, *tok), model->rmt_config().segment_len);
    if (opt.max_segments && segments.size() > opt.max_segments) {
        throw DataError("evaluate: sample " + s.id + " needs " + std::to_string(segments.size()) +
                        " segments, above the limit of " + std::to_string(opt.max_segments));
    }
    const auto rm = mode == EvalMode::rmt_r ? rmt::Mode::rmt_r : rmt::Mode::rmt;
    return tok->decode(train::greedy_decode(*model, segments, rm, *tok, opt.max_new_tokens));
}

/// Accuracy per (task, target length) cell.
inline EvalReport evaluate(const rmt::RmtModel<float>* model, EvalMode mode,
                           const std::vector<haystack::MixedSample>& samples, const haystack::Tokenizer* tok,
                           const EvalOptions& opt = {}, std::vector<std::string>* responses = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::string> out(samples.size());
    parallel_for(samples.size(), needs_model(mode) ? resolve_threads(opt.threads) : 1,
                 [&](std::size_t i) { out[i] = respond(model, samples[i], mode, tok, opt); });
    EvalReport report;
    report.mode = mode;
    std::map<std::pair<world::TaskId, std::size_t>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < samples.size(); ++i) groups[{samples[i].task.task, samples[i].target_tokens}].push_back(i);
    for (const auto& [key, idx] : groups) {
        Cell c{key.first, key.second, 0.0, idx.size(), 0.0};
        std::vector<haystack::MixedSample> cell_samples;
        std::size_t hits = 0;
        for (std::size_t i : idx) {
            hits += score_answer(out[i], samples[i].answer(), samples[i].task.task) ? 1 : 0;
            cell_samples.push_back(samples[i]);
        }
        c.accuracy = static_cast<double>(hits) / static_cast<double>(idx.size());
        c.baseline = constant_answer_baseline(cell_samples);
        report.grid.push_back(c);
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (responses) *responses = std::move(out);
    return report;
}

inline std::string grid_csv(const EvalReport& r) {
    std::string out = "task,length,accuracy,n\n";
    char buf[96];
    for (const auto& c : r.grid) {
        std::snprintf(buf, sizeof buf, "%s,%zu,%.4f,%zu\n", world::to_string(c.task).c_str(), c.length, c.accuracy, c.n);
        out += buf;
    }
    return out;
}

inline nlohmann::ordered_json summary_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["mode"] = to_string(r.mode);
    j["seconds"] = r.seconds;
    auto cells = nlohmann::ordered_json::array();
    std::size_t n = 0;
    double acc = 0;
    for (const auto& c : r.grid) {
        cells.push_back({{"task", world::to_string(c.task)},
                         {"length", c.length},
                         {"accuracy", c.accuracy},
                         {"n", c.n},
                         {"constant_baseline", c.baseline}});
        n += c.n;
        acc += c.accuracy * static_cast<double>(c.n);
    }
    j["overall_accuracy"] = n ? acc / static_cast<double>(n) : 0.0;
    j["samples"] = n;
    j["grid"] = cells;
    return j;
}

struct RecallRow {
    std::size_t length = 0;
    Chunking chunking = Chunking::sentence;
    std::size_t k = 5;
    double recall = 0.0;
    std::size_t n = 0;
};

/// recall@k per target length for both chunkings.
inline std::vector<RecallRow> retrieval_report(const std::vector<haystack::MixedSample>& samples, std::size_t k = 5,
                                               std::size_t chunk_words = 512) {
    std::map<std::size_t, std::vector<haystack::MixedSample>> by_len;
    for (const auto& s : samples) by_len[s.target_tokens].push_back(s);
    std::vector<RecallRow> out;
    for (const auto& [len, group] : by_len) {
        for (Chunking c : {Chunking::sentence, Chunking::tokens}) {
            out.push_back({len, c, k, recall_at_k(group, c, k, tfidf_embed, chunk_words), group.size()});
        }
    }
    return out;
}

inline std::string recall_csv(const std::vector<RecallRow>& rows) {
    std::string out = "length,chunking,k,recall,n\n";
    char buf[96];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu,%s,%zu,%.4f,%zu\n", r.length, to_string(r.chunking).c_str(), r.k, r.recall,
                      r.n);
        out += buf;
    }
    return out;
}

}  // namespace needlestack::eval
