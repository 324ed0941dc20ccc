#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "needlestack/error.hpp"
#include "needlestack/haystack/mixer.hpp"
#include "needlestack/world/tasks.hpp"

namespace needlestack::haystack {

/// A batch of mixed samples for one task and budget. A zero budget means
/// "no noise": each sample gets exactly the tokens of its facts and question.
struct GenSpec {
    world::TaskId task = world::TaskId::qa1;
    std::size_t count = 100;
    std::size_t target_tokens = 512;
    std::uint64_t seed = 0;
    std::size_t facts_min = 0;  // 0: task minimum
    std::size_t facts_max = 0;  // 0: task maximum
    Placement placement = Placement::uniform;
    int quartile = 1;
};

inline std::string sample_id(world::TaskId task, std::size_t tokens, std::size_t index) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s-%zu-%06zu", world::to_string(task).c_str(), tokens, index);
    return buf;
}

inline MixedSample generate_sample(const GenSpec& spec, std::size_t index, const BackgroundCorpus& corpus,
                                   const Tokenizer& tok) {
    const auto bounds = world::fact_bounds(spec.task);
    const std::size_t lo = spec.facts_min ? spec.facts_min : bounds.min;
    const std::size_t hi = spec.facts_max ? spec.facts_max : bounds.max;
    if (lo > hi) {
        throw ConfigError("gen: facts_min exceeds facts_max");
    }
    const std::uint64_t s = derive_seed(spec.seed, index);
    Rng rng(derive_seed(s, 0));
    const std::size_t n_facts = lo + rng.uniform_index(hi - lo + 1);
    auto task = world::gen_task(spec.task, n_facts, derive_seed(s, 1));
    std::size_t budget = spec.target_tokens;
    if (budget == 0) {
        budget = tok.count(task.question);
        for (const auto& f : task.facts) budget += tok.count(f.text);
    }
    auto out = mix(task, corpus, MixSpec{budget, spec.placement, spec.quartile, derive_seed(s, 2)}, tok);
    out.id = sample_id(spec.task, spec.target_tokens, index);
    out.target_tokens = spec.target_tokens;  // 0 marks a facts-only sample
    out.seed = s;
    return out;
}

inline std::vector<MixedSample> generate_dataset(const GenSpec& spec, const BackgroundCorpus& corpus,
                                                 const Tokenizer& tok) {
    std::vector<MixedSample> out;
    out.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) out.push_back(generate_sample(spec, i, corpus, tok));
    return out;
}

inline nlohmann::ordered_json to_json(const MixedSample& s) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["task"] = world::to_string(s.task.task);
    j["target_tokens"] = s.target_tokens;
    j["context"] = s.context;
    j["question"] = s.task.question;
    j["answer"] = s.task.answer;
    j["facts"] = s.task.fact_texts();
    j["fact_offsets"] = s.fact_offsets;
    j["supporting"] = s.task.supporting;
    j["seed"] = s.seed;
    return j;
}

inline void write_jsonl(const std::vector<MixedSample>& samples, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path);
    }
    for (const auto& s : samples) out << to_json(s).dump() << '\n';
    if (!out) {
        throw DataError("write failed: " + path);
    }
}

namespace detail {

template <class V>
V field(const nlohmann::json& j, const char* name, std::size_t line) {
    auto it = j.find(name);
    if (it == j.end()) {
        throw DataError("line " + std::to_string(line) + ": missing field '" + name + "'");
    }
    try {
        return it->template get<V>();
    } catch (const nlohmann::json::exception&) {
        throw DataError("line " + std::to_string(line) + ": field '" + name + "' has the wrong type");
    }
}

inline world::FactEvent fact_from_text(const std::string& text, std::size_t line) {
    world::oracle::ParsedFact p;
    try {
        p = world::oracle::parse_fact(text);
    } catch (const DataError& e) {
        throw DataError("line " + std::to_string(line) + ": " + e.what());
    }
    return {p.kind, p.actor, p.object, p.location, p.receiver, p.direction, text};
}

}  // namespace detail

/// Parses one record. `tok`, when given, recomputes token_count.
inline MixedSample from_json_line(const std::string& text, std::size_t line, const Tokenizer* tok = nullptr) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("line " + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) {
        throw DataError("line " + std::to_string(line) + ": record is not an object");
    }
    MixedSample s;
    s.id = detail::field<std::string>(j, "id", line);
    try {
        s.task.task = world::parse_task(detail::field<std::string>(j, "task", line));
    } catch (const ConfigError& e) {
        throw DataError("line " + std::to_string(line) + ": " + e.what());
    }
    s.target_tokens = detail::field<std::size_t>(j, "target_tokens", line);
    s.context = detail::field<std::string>(j, "context", line);
    s.task.question = detail::field<std::string>(j, "question", line);
    s.task.answer = detail::field<std::string>(j, "answer", line);
    for (const auto& f : detail::field<std::vector<std::string>>(j, "facts", line)) {
        s.task.facts.push_back(detail::fact_from_text(f, line));
    }
    s.fact_offsets = detail::field<std::vector<std::size_t>>(j, "fact_offsets", line);
    s.task.supporting = detail::field<std::vector<std::size_t>>(j, "supporting", line);
    s.seed = detail::field<std::uint64_t>(j, "seed", line);
    if (s.fact_offsets.size() != s.task.facts.size()) {
        throw DataError("line " + std::to_string(line) + ": fact_offsets and facts differ in length");
    }
    for (std::size_t i = 0; i < s.fact_offsets.size(); ++i) {
        const auto& f = s.task.facts[i].text;
        if (s.context.compare(s.fact_offsets[i], f.size(), f) != 0) {
            throw DataError("line " + std::to_string(line) + ": fact " + std::to_string(i) +
                            " not found at its offset");
        }
    }
    for (std::size_t k : s.task.supporting) {
        if (k >= s.task.facts.size()) {
            throw DataError("line " + std::to_string(line) + ": supporting index out of range");
        }
    }
    if (tok) s.token_count = tok->count(s.context) + tok->count(s.task.question);
    return s;
}

inline std::vector<MixedSample> read_jsonl(const std::string& path, const Tokenizer* tok = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read " + path);
    }
    std::vector<MixedSample> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        out.push_back(from_json_line(line, n, tok));
    }
    return out;
}

}  // namespace needlestack::haystack
