#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "needlestack/error.hpp"
#include "needlestack/haystack/corpus.hpp"
#include "needlestack/haystack/tokenizer.hpp"
#include "needlestack/random.hpp"
#include "needlestack/world/tasks.hpp"

namespace needlestack::haystack {

enum class Placement { uniform, quartile };

struct MixSpec {
    std::size_t target_tokens = 512;
    Placement placement = Placement::uniform;
    int quartile = 1;  // 1..4 when placement is quartile
    std::uint64_t seed = 0;
};

/// A task sample hidden in background text. `context` holds background and
/// fact sentences joined by single spaces; the question always follows it.
struct MixedSample {
    std::string id;
    world::TaskSample task;
    std::string context;
    std::vector<std::size_t> fact_offsets;  // byte offsets into context
    std::size_t token_count = 0;            // context + question
    std::size_t target_tokens = 0;
    std::uint64_t seed = 0;

    const std::string& question() const { return task.question; }
    const std::string& answer() const { return task.answer; }

    /// The text presented to a reader: context, then the question.
    std::string text() const { return context.empty() ? task.question : context + " " + task.question; }

    std::size_t background_sentences() const {
        return split_sentences(context).size() - task.facts.size();
    }

    bool operator==(const MixedSample&) const = default;
};

inline std::size_t longest_sentence_tokens(const BackgroundCorpus& corpus, const Tokenizer& tok) {
    std::size_t best = 0;
    for (const auto& d : corpus.documents)
        for (const auto& s : d.sentences) best = std::max(best, tok.count(s));
    return best;
}

namespace detail {

struct BackgroundDraw {
    std::vector<const std::string*> sentences;
    std::vector<std::size_t> tokens;
};

/// Sentences in natural order from a seeded start, moving on to the next
/// document at a document end, until the next one would overflow `room`.
inline BackgroundDraw draw_background(const BackgroundCorpus& corpus, const Tokenizer& tok, std::size_t room,
                                      std::uint64_t seed) {
    BackgroundDraw out;
    if (room == 0) return out;
    if (corpus.sentence_count() == 0) {
        throw DataError("mix: background corpus is empty");
    }
    Rng rng(derive_seed(seed, 1));
    std::size_t doc = rng.uniform_index(corpus.documents.size());
    while (corpus.documents[doc].sentences.empty()) doc = (doc + 1) % corpus.documents.size();
    std::size_t sent = rng.uniform_index(corpus.documents[doc].sentences.size());
    const std::size_t total = corpus.sentence_count();
    std::size_t used = 0;
    for (std::size_t taken = 0;; ++taken) {
        if (taken == total) {
            throw DataError("mix: background corpus exhausted before reaching " + std::to_string(room) +
                            " background tokens");
        }
        const std::string& s = corpus.documents[doc].sentences[sent];
        const std::size_t n = tok.count(s);
        if (used + n > room) break;
        used += n;
        out.sentences.push_back(&s);
        out.tokens.push_back(n);
        if (++sent == corpus.documents[doc].sentences.size()) {
            sent = 0;
            do {
                doc = (doc + 1) % corpus.documents.size();
            } while (corpus.documents[doc].sentences.empty());
        }
    }
    return out;
}

/// Sorted gap indices in [lo, hi], one per fact.
inline std::vector<std::size_t> draw_gaps(std::size_t n, std::size_t lo, std::size_t hi, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 2));
    std::vector<std::size_t> gaps(n);
    for (auto& g : gaps) g = lo + rng.uniform_index(hi - lo + 1);
    std::sort(gaps.begin(), gaps.end());
    return gaps;
}

}  // namespace detail

/// Interleaves background sentences and facts. Background never gets
/// truncated, so token_count lands in (budget − longest sentence, budget].
inline MixedSample mix(const world::TaskSample& sample, const BackgroundCorpus& corpus, const MixSpec& spec,
                       const Tokenizer& tok) {
    std::vector<std::size_t> fact_tokens;
    std::size_t needle = tok.count(sample.question);
    for (const auto& f : sample.facts) {
        fact_tokens.push_back(tok.count(f.text));
        needle += fact_tokens.back();
    }
    if (spec.target_tokens < needle) {
        throw ConfigError("mix: budget of " + std::to_string(spec.target_tokens) + " tokens is below the " +
                          std::to_string(needle) + " tokens of facts and question");
    }
    if (spec.placement == Placement::quartile && (spec.quartile < 1 || spec.quartile > 4)) {
        throw ConfigError("mix: quartile must be in 1..4");
    }
    const auto bg = detail::draw_background(corpus, tok, spec.target_tokens - needle, spec.seed);
    const std::size_t n_bg = bg.sentences.size();
    std::size_t bg_total = 0;
    for (auto t : bg.tokens) bg_total += t;
    const std::size_t total = bg_total + needle;

    std::vector<std::size_t> gaps;
    if (spec.placement == Placement::uniform) {
        gaps = detail::draw_gaps(sample.facts.size(), 0, n_bg, spec.seed);
    } else {
        // fact i placed at gap g starts at prefix[g] + facts before it; all
        // facts must fit in [(q-1)/4, q/4] of the total token span
        std::vector<std::size_t> prefix(n_bg + 1, 0);
        for (std::size_t g = 0; g < n_bg; ++g) prefix[g + 1] = prefix[g] + bg.tokens[g];
        const double lo = static_cast<double>(total) * (spec.quartile - 1) / 4.0;
        const double hi = static_cast<double>(total) * spec.quartile / 4.0;
        std::size_t before_last = 0;
        for (std::size_t i = 0; i + 1 < fact_tokens.size(); ++i) before_last += fact_tokens[i];
        std::size_t a = n_bg + 1, b = 0;
        bool has_b = false;
        for (std::size_t g = 0; g <= n_bg; ++g) {
            if (a > n_bg && static_cast<double>(prefix[g]) >= lo) a = g;
            if (static_cast<double>(prefix[g] + before_last + fact_tokens.back()) <= hi) {
                b = g;
                has_b = true;
            }
        }
        if (a > n_bg || !has_b || a > b) {
            throw DataError("place_at_depth: facts do not fit in quartile " + std::to_string(spec.quartile) + " of " +
                            std::to_string(total) + " tokens");
        }
        gaps = detail::draw_gaps(sample.facts.size(), a, b, spec.seed);
    }

    MixedSample out;
    out.task = sample;
    out.target_tokens = spec.target_tokens;
    out.seed = spec.seed;
    out.token_count = total;
    auto append = [&](const std::string& s) {
        if (!out.context.empty()) out.context.push_back(' ');
        out.context += s;
    };
    std::size_t next_fact = 0;
    for (std::size_t g = 0; g <= n_bg; ++g) {
        while (next_fact < gaps.size() && gaps[next_fact] == g) {
            append(sample.facts[next_fact].text);
            out.fact_offsets.push_back(out.context.size() - sample.facts[next_fact].text.size());
            ++next_fact;
        }
        if (g < n_bg) append(*bg.sentences[g]);
    }
    return out;
}

/// Quartile placement: every fact lies inside the q-th quarter of the
/// token span.
inline MixedSample place_at_depth(const world::TaskSample& sample, const BackgroundCorpus& corpus, int quartile,
                                  const Tokenizer& tok, std::size_t budget, std::uint64_t seed = 0) {
    return mix(sample, corpus, MixSpec{budget, Placement::quartile, quartile, seed}, tok);
}

/// Token index where each fact starts within the full text.
inline std::vector<std::size_t> fact_token_positions(const MixedSample& s, const Tokenizer& tok) {
    std::vector<std::size_t> out;
    for (std::size_t off : s.fact_offsets) out.push_back(tok.count(std::string_view(s.context).substr(0, off)));
    return out;
}

}  // namespace needlestack::haystack
