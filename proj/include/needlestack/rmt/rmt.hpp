#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "needlestack/nn/model.hpp"

namespace needlestack::rmt {

using nn::Binding;
using nn::LanguageModel;
using nn::ModelConfig;
using nn::ParameterStore;
using nn::Tensor;

enum class Mode { rmt, rmt_r };

inline std::string to_string(Mode mode) { return mode == Mode::rmt ? "rmt" : "rmt-r"; }

inline Mode parse_mode(const std::string& s) {
    if (s == "rmt") return Mode::rmt;
    if (s == "rmt-r" || s == "rmt_r") return Mode::rmt_r;
    throw ConfigError("unknown memory mode '" + s + "' (expected rmt or rmt-r)");
}

/// Segment geometry. Positions are reserved as
/// [read m][retrieved m][text L][write m], so text always starts at the
/// same position regardless of mode or segment index.
struct RmtConfig {
    std::size_t mem_tokens = 8;
    std::size_t segment_len = 64;
    bool retrieval = false;

    std::size_t text_position() const { return 2 * mem_tokens; }
    std::size_t write_position() const { return 2 * mem_tokens + segment_len; }
    std::size_t required_positions() const { return 3 * mem_tokens + segment_len; }

    void validate(const ModelConfig& model) const {
        if (mem_tokens < 1) throw ConfigError("rmt: mem_tokens must be >= 1");
        if (segment_len < 1) throw ConfigError("rmt: segment_len must be >= 1");
        if (required_positions() > model.max_positions) {
            throw ConfigError("rmt: 3*mem_tokens + segment_len = " + std::to_string(required_positions()) +
                              " exceeds max_positions " + std::to_string(model.max_positions));
        }
    }

    bool operator==(const RmtConfig&) const = default;
};

/// M^t: an m×d matrix tied to the tape of the current document unroll.
template <class T>
struct MemoryState {
    Tensor<T> matrix;
    std::size_t segment_index = 0;
};

/// All memory states seen so far, oldest first; append-only.
template <class T>
class MemoryArchive {
public:
    void append(const MemoryState<T>& state) { states_.push_back(state); }
    std::size_t size() const { return states_.size(); }
    bool empty() const { return states_.empty(); }
    const std::vector<MemoryState<T>>& states() const { return states_; }
    const MemoryState<T>& operator[](std::size_t i) const { return states_[i]; }

    /// Number of stored scalars (n·m·d).
    std::size_t stored_values() const {
        std::size_t n = 0;
        for (const auto& s : states_) n += s.matrix.size();
        return n;
    }

    /// Rows of every archived state stacked: [(n·m) × d].
    Tensor<T> stacked() const {
        std::vector<Tensor<T>> parts;
        parts.reserve(states_.size());
        for (const auto& s : states_) parts.push_back(s.matrix);
        return nn::concat(parts);
    }

private:
    std::vector<MemoryState<T>> states_;
};

/// Backbone plus the trainable initial memory and the single-head
/// retrieval projections.
template <class T>
class RmtModel {
public:
    RmtModel() = default;
    RmtModel(const ModelConfig& model, const RmtConfig& rmt) : backbone_(model), rmt_(rmt) {
        rmt_.validate(model);
        Rng rng(derive_seed(model.seed, 0x726d74));
        const std::size_t m = rmt_.mem_tokens, d = model.d_model;
        extra_.add_normal("memory.init", {m, d}, rng, 0.02);
        for (const char* w : {"retrieval.w_q", "retrieval.w_k", "retrieval.w_v", "retrieval.w_o"}) {
            extra_.add_normal(w, {d, d}, rng, 0.02);
        }
    }

    const LanguageModel<T>& backbone() const { return backbone_; }
    LanguageModel<T>& backbone() { return backbone_; }
    const ModelConfig& model_config() const { return backbone_.config(); }
    const RmtConfig& rmt_config() const { return rmt_; }
    Mode default_mode() const { return rmt_.retrieval ? Mode::rmt_r : Mode::rmt; }

    ParameterStore<T>& memory_params() { return extra_; }
    const ParameterStore<T>& memory_params() const { return extra_; }

    std::vector<ParameterStore<T>*> stores() { return {&backbone_.params(), &extra_}; }
    std::vector<const ParameterStore<T>*> stores() const { return {&backbone_.params(), &extra_}; }

    Binding<T> bind(bool trainable = true) const { return Binding<T>(stores(), trainable); }

    std::size_t parameter_count() const { return backbone_.params().count() + extra_.count(); }

private:
    LanguageModel<T> backbone_;
    RmtConfig rmt_;
    ParameterStore<T> extra_;
};

struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
    bool empty() const { return begin == end; }
    bool contains(std::size_t i) const { return i >= begin && i < end; }
};

/// Where each part of a composed segment sits, plus its position ids.
struct SegmentLayout {
    Span read;
    Span retrieved;
    Span text;
    Span write;
    std::vector<int> positions;

    std::size_t total() const { return write.end; }

    /// "read-mem", "retrieved", "text" or "write-mem" for a row.
    std::string label(std::size_t row) const {
        if (read.contains(row)) return "read-mem";
        if (retrieved.contains(row)) return "retrieved";
        if (text.contains(row)) return "text";
        return "write-mem";
    }
};

template <class T>
struct ComposedSegment {
    Tensor<T> embeddings;
    SegmentLayout layout;
};

/// Builds [M, X, M] or, with retrieved states, [M, R, X, M]. `text` may be
/// undefined for an empty segment.
template <class T>
ComposedSegment<T> compose_segment_input(const RmtConfig& cfg, std::size_t d_model, const Tensor<T>& memory,
                                         const Tensor<T>* retrieved, const Tensor<T>& text) {
    const std::size_t m = cfg.mem_tokens;
    auto check = [&](const Tensor<T>& t, const char* what) {
        if (t.dim() != 2 || t.shape()[0] != m || t.shape()[1] != d_model) {
            throw ShapeError(std::string("compose: ") + what + " must be " + std::to_string(m) + "x" +
                             std::to_string(d_model) + ", got " + nn::shape_str(t.shape()));
        }
    };
    check(memory, "memory");
    if (retrieved) check(*retrieved, "retrieved");
    const std::size_t text_len = text.defined() ? text.rows() : 0;
    if (text.defined() && (text.dim() != 2 || text.cols() != d_model)) {
        throw ShapeError("compose: text embeddings must have width " + std::to_string(d_model));
    }
    if (text_len > cfg.segment_len) {
        throw ShapeError("compose: segment of " + std::to_string(text_len) + " tokens exceeds segment_len " +
                         std::to_string(cfg.segment_len));
    }

    ComposedSegment<T> out;
    auto& lay = out.layout;
    std::vector<Tensor<T>> parts{memory};
    lay.read = {0, m};
    std::size_t cursor = m;
    auto& pos = lay.positions;
    for (std::size_t i = 0; i < m; ++i) pos.push_back(static_cast<int>(i));
    if (retrieved) {
        parts.push_back(*retrieved);
        lay.retrieved = {cursor, cursor + m};
        cursor += m;
        for (std::size_t i = 0; i < m; ++i) pos.push_back(static_cast<int>(m + i));
    } else {
        lay.retrieved = {cursor, cursor};
    }
    if (text_len > 0) parts.push_back(text);
    lay.text = {cursor, cursor + text_len};
    cursor += text_len;
    for (std::size_t i = 0; i < text_len; ++i) pos.push_back(static_cast<int>(cfg.text_position() + i));
    parts.push_back(memory);
    lay.write = {cursor, cursor + m};
    for (std::size_t i = 0; i < m; ++i) pos.push_back(static_cast<int>(cfg.write_position() + i));
    out.embeddings = nn::concat(parts);
    return out;
}

/// Which text rows of a segment get output-head logits.
enum class LogitRows { all, none };

template <class T>
struct StepResult {
    Tensor<T> logits;       // [text, vocab] when requested
    Tensor<T> text_hidden;  // [text, d]; undefined for an empty segment
    MemoryState<T> memory;  // M^t
    SegmentLayout layout;
    Tensor<T> retrieval_attention;  // m × (n·m) when retrieval ran
};

template <class T>
struct RetrievalResult {
    Tensor<T> retrieved;  // R^t, m×d
    Tensor<T> attention;  // m × (n·m), rows sum to one
};

/// Single-head cross-attention from the current memory into the archive.
/// Each memory token is a separate query row.
template <class T>
RetrievalResult<T> self_retrieve(Binding<T>& p, const MemoryArchive<T>& archive, const MemoryState<T>& current) {
    if (archive.empty()) {
        throw Error("self_retrieve: empty archive");
    }
    const std::size_t d = current.matrix.cols();
    const Tensor<T> past = archive.stacked();
    auto q = nn::matmul(current.matrix, p("retrieval.w_q"));
    auto k = nn::matmul(past, p("retrieval.w_k"));
    auto v = nn::matmul(past, p("retrieval.w_v"));
    auto scores = nn::scale(nn::matmul(q, nn::transpose(k)), T(1) / std::sqrt(T(d)));
    auto attn = nn::softmax(scores);
    return {nn::matmul(nn::matmul(attn, v), p("retrieval.w_o")), attn};
}

namespace detail {

template <class T>
StepResult<T> segment_forward(const RmtModel<T>& model, Binding<T>& p, const MemoryState<T>& prev,
                              const Tensor<T>* retrieved, const Tensor<T>& text, LogitRows rows,
                              nn::ForwardCapture* capture) {
    const auto& cfg = model.rmt_config();
    auto composed = compose_segment_input(cfg, model.model_config().d_model, prev.matrix, retrieved, text);
    auto hidden = nn::forward_hidden(model.backbone(), p, composed.embeddings, composed.layout.positions, true, capture);
    StepResult<T> out;
    out.layout = composed.layout;
    const auto& lay = composed.layout;
    if (!lay.text.empty()) {
        out.text_hidden = nn::slice(hidden, lay.text.begin, lay.text.end);
        if (rows == LogitRows::all) {
            out.logits = nn::lm_head(p, out.text_hidden);
        }
    }
    out.memory = {nn::slice(hidden, lay.write.begin, lay.write.end), prev.segment_index + 1};
    return out;
}

}  // namespace detail

/// M^0: the shared trainable initial memory.
template <class T>
MemoryState<T> initial_memory(Binding<T>& p) {
    return {p("memory.init"), 0};
}

/// One plain recurrent step on already-embedded text.
template <class T>
StepResult<T> rmt_step(const RmtModel<T>& model, Binding<T>& p, const MemoryState<T>& prev, const Tensor<T>& text,
                       LogitRows rows = LogitRows::all, nn::ForwardCapture* capture = nullptr) {
    return detail::segment_forward<T>(model, p, prev, nullptr, text, rows, capture);
}

template <class T>
Tensor<T> embed_segment(const RmtModel<T>& model, Binding<T>& p, std::span<const int> ids) {
    if (ids.empty()) return {};
    return nn::embed_tokens(model.backbone(), p, ids);
}

/// One plain recurrent step on token ids.
template <class T>
StepResult<T> rmt_step(const RmtModel<T>& model, Binding<T>& p, const MemoryState<T>& prev, std::span<const int> ids,
                       LogitRows rows = LogitRows::all, nn::ForwardCapture* capture = nullptr) {
    return rmt_step(model, p, prev, embed_segment(model, p, ids), rows, capture);
}

/// One step with self-retrieval. Falls back to the plain step while the
/// archive is empty, then appends `prev` to the archive.
template <class T>
StepResult<T> rmt_r_step(const RmtModel<T>& model, Binding<T>& p, MemoryArchive<T>& archive, const MemoryState<T>& prev,
                         const Tensor<T>& text, LogitRows rows = LogitRows::all, nn::ForwardCapture* capture = nullptr) {
    StepResult<T> out;
    if (archive.empty()) {
        out = detail::segment_forward<T>(model, p, prev, nullptr, text, rows, capture);
    } else {
        auto r = self_retrieve(p, archive, prev);
        out = detail::segment_forward<T>(model, p, prev, &r.retrieved, text, rows, capture);
        out.retrieval_attention = r.attention;
    }
    archive.append(prev);
    return out;
}

template <class T>
StepResult<T> rmt_r_step(const RmtModel<T>& model, Binding<T>& p, MemoryArchive<T>& archive, const MemoryState<T>& prev,
                         std::span<const int> ids, LogitRows rows = LogitRows::all,
                         nn::ForwardCapture* capture = nullptr) {
    return rmt_r_step(model, p, archive, prev, embed_segment(model, p, ids), rows, capture);
}

/// Supervision for the last segment: next-token targets over its text rows.
struct FinalTargets {
    std::vector<int> targets;
    std::vector<std::uint8_t> mask;
};

struct DocumentOptions {
    LogitRows logits = LogitRows::none;
    /// Segment indices whose attention maps should be captured.
    std::vector<std::size_t> capture_segments;
};

template <class T>
struct DocumentResult {
    std::vector<Tensor<T>> logits;  // per segment; undefined unless requested
    std::vector<SegmentLayout> layouts;
    std::vector<Tensor<T>> text_hidden;
    MemoryState<T> final_memory;
    MemoryArchive<T> archive;  // [M^0 .. M^{n-1}]
    Tensor<T> loss;            // undefined without targets
    std::vector<Tensor<T>> retrieval_attention;
    std::vector<nn::ForwardCapture> captures;  // aligned with capture_segments
};

/// Masked mean cross-entropy computed only on the supervised rows.
template <class T>
Tensor<T> masked_text_loss(Binding<T>& p, const Tensor<T>& text_hidden, const FinalTargets& targets) {
    if (!text_hidden.defined() || targets.targets.size() != text_hidden.rows() ||
        targets.mask.size() != text_hidden.rows()) {
        throw ShapeError("document loss: targets do not cover the final segment");
    }
    std::vector<int> rows, tgt;
    for (std::size_t i = 0; i < targets.mask.size(); ++i) {
        if (targets.mask[i]) {
            rows.push_back(static_cast<int>(i));
            tgt.push_back(targets.targets[i]);
        }
    }
    if (rows.empty()) {
        throw ShapeError("document loss: empty mask");
    }
    auto logits = nn::lm_head(p, nn::embed(text_hidden, rows));
    const std::vector<std::uint8_t> all(rows.size(), 1);
    return nn::loss_lm(logits, tgt, all);
}

/// Full recurrent unroll over pre-embedded segments; gradients flow through
/// every memory hop (and through archived states in rmt-r mode).
template <class T>
DocumentResult<T> process_embedded(const RmtModel<T>& model, Binding<T>& p, const std::vector<Tensor<T>>& segments,
                                   Mode mode, const FinalTargets* targets = nullptr,
                                   const DocumentOptions& options = {}) {
    if (segments.empty()) {
        throw Error("process_document: empty document");
    }
    DocumentResult<T> out;
    MemoryState<T> memory = initial_memory(p);
    out.captures.resize(options.capture_segments.size());
    for (std::size_t s = 0; s < segments.size(); ++s) {
        nn::ForwardCapture* capture = nullptr;
        for (std::size_t c = 0; c < options.capture_segments.size(); ++c) {
            if (options.capture_segments[c] == s) capture = &out.captures[c];
        }
        StepResult<T> step;
        if (mode == Mode::rmt_r) {
            step = rmt_r_step(model, p, out.archive, memory, segments[s], options.logits, capture);
        } else {
            step = rmt_step(model, p, memory, segments[s], options.logits, capture);
            out.archive.append(memory);
        }
        out.logits.push_back(step.logits);
        out.layouts.push_back(step.layout);
        out.text_hidden.push_back(step.text_hidden);
        out.retrieval_attention.push_back(step.retrieval_attention);
        memory = step.memory;
    }
    out.final_memory = memory;
    if (targets) {
        out.loss = masked_text_loss(p, out.text_hidden.back(), *targets);
    }
    return out;
}

/// Token-id front end of process_embedded.
template <class T>
DocumentResult<T> process_document(const RmtModel<T>& model, Binding<T>& p,
                                   const std::vector<std::vector<int>>& segments, Mode mode,
                                   const FinalTargets* targets = nullptr, const DocumentOptions& options = {}) {
    if (segments.empty()) {
        throw Error("process_document: empty document");
    }
    std::vector<Tensor<T>> embedded;
    embedded.reserve(segments.size());
    for (const auto& seg : segments) {
        if (seg.size() > model.rmt_config().segment_len) {
            throw ShapeError("process_document: segment of " + std::to_string(seg.size()) +
                             " tokens exceeds segment_len " + std::to_string(model.rmt_config().segment_len));
        }
        embedded.push_back(embed_segment(model, p, seg));
    }
    return process_embedded(model, p, embedded, mode, targets, options);
}

}  // namespace needlestack::rmt
