#pragma once

#include <algorithm>
#include <vector>

#include "needlestack/haystack/mixer.hpp"
#include "needlestack/haystack/tokenizer.hpp"
#include "needlestack/rmt/rmt.hpp"

namespace needlestack::train {

using haystack::MixedSample;
using haystack::Tokenizer;

/// Room kept free in the final segment for the answer.
inline constexpr std::size_t kAnswerReserve = 2;

/// Context and question tokens in the layout the model reads: context,
/// <q>, question, <ans>.
inline std::vector<int> prompt_ids(const MixedSample& s, const Tokenizer& tok) {
    std::vector<int> ids = tok.encode(s.context);
    ids.push_back(tok.question_id());
    const auto q = tok.encode(s.question());
    ids.insert(ids.end(), q.begin(), q.end());
    ids.push_back(tok.answer_id());
    return ids;
}

/// Largest context+question token count that fits in `segments` segments.
inline std::size_t token_budget(std::size_t segments, std::size_t segment_len) {
    const std::size_t cap = segments * segment_len;
    return cap > kAnswerReserve + 2 ? cap - kAnswerReserve - 2 : 0;
}

/// Right-aligned split: the last segment holds the final
/// min(P, L - reserve) prompt tokens; earlier tokens fill whole segments
/// counted from the end, leaving the first one partial.
inline std::vector<std::vector<int>> segment_prompt(const std::vector<int>& ids, std::size_t segment_len) {
    if (segment_len <= kAnswerReserve) throw ConfigError("segment_len too small for answer room");
    std::vector<std::vector<int>> out;
    const std::size_t last = std::min(ids.size(), segment_len - kAnswerReserve);
    std::size_t end = ids.size() - last;
    std::vector<std::vector<int>> head;
    while (end > 0) {
        const std::size_t begin = end > segment_len ? end - segment_len : 0;
        head.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(begin), ids.begin() + static_cast<std::ptrdiff_t>(end));
        end = begin;
    }
    out.assign(head.rbegin(), head.rend());
    out.emplace_back(ids.end() - static_cast<std::ptrdiff_t>(last), ids.end());
    return out;
}

struct EncodedSample {
    std::vector<std::vector<int>> segments;  // final segment includes the answer tokens
    rmt::FinalTargets targets;
    std::vector<int> answer_ids;  // answer tokens followed by <eos>
};

/// Teacher-forced layout: answer tokens appended to the last segment, loss
/// on the rows from <ans> onward predicting answer then <eos>.
inline EncodedSample encode_for_training(const MixedSample& s, const Tokenizer& tok, std::size_t segment_len) {
    EncodedSample out;
    out.answer_ids = tok.encode(s.answer());
    out.answer_ids.push_back(tok.eos_id());
    if (out.answer_ids.size() > kAnswerReserve + 1) {
        throw DataError("answer '" + s.answer() + "' is longer than the reserved answer room");
    }
    out.segments = segment_prompt(prompt_ids(s, tok), segment_len);
    auto& last = out.segments.back();
    const std::size_t ans_row = last.size() - 1;
    last.insert(last.end(), out.answer_ids.begin(), out.answer_ids.end() - 1);
    out.targets.targets.assign(last.size(), tok.pad_id());
    out.targets.mask.assign(last.size(), 0);
    for (std::size_t i = 0; i < out.answer_ids.size(); ++i) {
        out.targets.targets[ans_row + i] = out.answer_ids[i];
        out.targets.mask[ans_row + i] = 1;
    }
    return out;
}

/// Greedy answer decoding. Earlier segments run once; the last segment is
/// re-run from the saved memory each time a token is appended.
template <class T>
std::vector<int> greedy_decode(const rmt::RmtModel<T>& model, const std::vector<std::vector<int>>& segments,
                               rmt::Mode mode, const Tokenizer& tok, std::size_t max_new = 8) {
    nn::NoGradGuard guard;
    auto p = model.bind(false);
    auto memory = rmt::initial_memory(p);
    rmt::MemoryArchive<T> archive;
    for (std::size_t s = 0; s + 1 < segments.size(); ++s) {
        auto step = mode == rmt::Mode::rmt_r ? rmt::rmt_r_step<T>(model, p, archive, memory, segments[s], rmt::LogitRows::none)
                                             : rmt::rmt_step<T>(model, p, memory, segments[s], rmt::LogitRows::none);
        memory = step.memory;
    }
    std::vector<int> ids = segments.back();
    std::vector<int> out;
    const std::size_t room = model.rmt_config().segment_len;
    while (out.size() < max_new) {
        rmt::StepResult<T> step;
        if (mode == rmt::Mode::rmt_r) {
            auto scratch = archive;
            step = rmt::rmt_r_step<T>(model, p, scratch, memory, ids, rmt::LogitRows::none);
        } else {
            step = rmt::rmt_step<T>(model, p, memory, ids, rmt::LogitRows::none);
        }
        const std::size_t n = step.text_hidden.rows();
        auto logits = nn::lm_head(p, nn::slice(step.text_hidden, n - 1, n));
        const auto v = logits.values();
        const int next = static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
        if (next == tok.eos_id()) break;
        out.push_back(next);
        if (ids.size() >= room) break;
        ids.push_back(next);
    }
    return out;
}

/// Decoded answer text for one sample.
template <class T>
std::string predict(const rmt::RmtModel<T>& model, const MixedSample& s, rmt::Mode mode, const Tokenizer& tok,
                    std::size_t max_new = 8) {
    const auto segments = segment_prompt(prompt_ids(s, tok), model.rmt_config().segment_len);
    return tok.decode(greedy_decode(model, segments, mode, tok, max_new));
}

}  // namespace needlestack::train
