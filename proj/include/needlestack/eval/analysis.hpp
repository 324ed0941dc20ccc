#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "needlestack/error.hpp"
#include "needlestack/haystack/mixer.hpp"
#include "needlestack/train/encode.hpp"

namespace needlestack::eval {

enum class Metric { euclidean, cosine };

inline Metric parse_metric(const std::string& s) {
    if (s == "euclidean") return Metric::euclidean;
    if (s == "cosine") return Metric::cosine;
    throw ConfigError("unknown distance metric '" + s + "' (expected euclidean or cosine)");
}

using Matrix = std::vector<std::vector<double>>;

/// Pairwise distances between flattened memory states. Cosine distance is
/// 1 - cosine similarity.
template <class T>
Matrix memory_distance_matrix(const std::vector<rmt::MemoryState<T>>& states, Metric metric = Metric::euclidean) {
    if (states.empty()) throw Error("memory_distance_matrix: empty archive");
    const std::size_t n = states.size();
    Matrix d(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const auto a = states[i].matrix.values();
            const auto b = states[j].matrix.values();
            if (a.size() != b.size()) throw ShapeError("memory_distance_matrix: state sizes differ");
            double v = 0.0;
            if (metric == Metric::euclidean) {
                for (std::size_t k = 0; k < a.size(); ++k) v += (double(a[k]) - double(b[k])) * (double(a[k]) - double(b[k]));
                v = std::sqrt(v);
            } else {
                double ab = 0, aa = 0, bb = 0;
                for (std::size_t k = 0; k < a.size(); ++k) {
                    ab += double(a[k]) * double(b[k]);
                    aa += double(a[k]) * double(a[k]);
                    bb += double(b[k]) * double(b[k]);
                }
                v = aa > 0 && bb > 0 ? 1.0 - ab / std::sqrt(aa * bb) : 1.0;
            }
            d[i][j] = d[j][i] = v;
        }
    }
    return d;
}

template <class T>
Matrix memory_distance_matrix(const rmt::MemoryArchive<T>& archive, Metric metric = Metric::euclidean) {
    return memory_distance_matrix(archive.states(), metric);
}

inline std::string matrix_csv(const Matrix& m) {
    std::string out;
    char buf[32];
    for (const auto& row : m) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%s%.6g", j ? "," : "", row[j]);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

/// A document run kept for inspection: every memory state M^0..M^n and
/// which segments carry fact tokens.
struct MemoryTrace {
    std::vector<std::vector<int>> segments;
    std::vector<rmt::MemoryState<float>> states;
    std::vector<bool> fact_segments;
    std::vector<std::vector<std::size_t>> fact_columns;  // text rows holding fact tokens, per segment
    std::vector<rmt::SegmentLayout> layouts;
    std::vector<nn::ForwardCapture> captures;  // aligned with capture_segments
};

inline MemoryTrace trace_memory(const rmt::RmtModel<float>& model, const haystack::MixedSample& s, rmt::Mode mode,
                                const haystack::Tokenizer& tok, const std::vector<std::size_t>& capture_segments = {}) {
    MemoryTrace out;
    out.segments = train::segment_prompt(train::prompt_ids(s, tok), model.rmt_config().segment_len);
    for (std::size_t c : capture_segments) {
        if (c >= out.segments.size()) {
            throw ConfigError("segment index " + std::to_string(c) + " out of range (document has " +
                              std::to_string(out.segments.size()) + " segments)");
        }
    }
    std::vector<std::size_t> starts;
    std::size_t pos = 0;
    for (const auto& seg : out.segments) {
        starts.push_back(pos);
        pos += seg.size();
    }
    out.fact_segments.assign(out.segments.size(), false);
    out.fact_columns.resize(out.segments.size());
    const auto fact_pos = haystack::fact_token_positions(s, tok);
    for (std::size_t f = 0; f < fact_pos.size(); ++f) {
        const std::size_t len = tok.count(s.task.facts.at(f).text);
        for (std::size_t t = fact_pos[f]; t < fact_pos[f] + len; ++t) {
            for (std::size_t g = out.segments.size(); g-- > 0;) {
                if (t >= starts[g]) {
                    out.fact_segments[g] = true;
                    out.fact_columns[g].push_back(t - starts[g]);
                    break;
                }
            }
        }
    }
    nn::NoGradGuard guard;
    auto p = model.bind(false);
    rmt::DocumentOptions opt;
    opt.capture_segments = capture_segments;
    auto doc = rmt::process_document<float>(model, p, out.segments, mode, nullptr, opt);
    out.states = doc.archive.states();
    out.states.push_back(doc.final_memory);
    out.layouts = doc.layouts;
    out.captures = std::move(doc.captures);
    return out;
}

struct BoundaryMeans {
    double fact = 0.0;
    double background = 0.0;
    std::size_t fact_n = 0;
    std::size_t background_n = 0;
};

/// Mean D[s, s+1] over segments with and without fact tokens. Segment 0
/// starts from the learned initial memory rather than a written state, and
/// the last segment holds the question; both are left out.
inline BoundaryMeans boundary_means(const Matrix& d, const std::vector<bool>& fact_segments) {
    BoundaryMeans out;
    for (std::size_t s = 1; s + 1 < fact_segments.size(); ++s) {
        const double v = d.at(s).at(s + 1);
        if (fact_segments[s]) {
            out.fact += v;
            ++out.fact_n;
        } else {
            out.background += v;
            ++out.background_n;
        }
    }
    if (out.fact_n) out.fact /= static_cast<double>(out.fact_n);
    if (out.background_n) out.background /= static_cast<double>(out.background_n);
    return out;
}

/// Long-format attention dump: one line per (layer, head, row, col).
inline std::string attention_csv(const nn::ForwardCapture& capture, const rmt::SegmentLayout& layout) {
    std::string out = "layer,head,row,col,row_span,col_span,weight\n";
    char buf[160];
    for (std::size_t l = 0; l < capture.layers.size(); ++l) {
        const auto& layer = capture.layers[l];
        const std::size_t n = layer.seq_len;
        for (std::size_t h = 0; h < layer.heads.size(); ++h) {
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < n; ++c) {
                    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%zu,%s,%s,%.6g\n", l, h, r, c, layout.label(r).c_str(),
                                  layout.label(c).c_str(), layer.heads[h][r * n + c]);
                    out += buf;
                }
            }
        }
    }
    return out;
}

/// Mean attention mass that write-memory rows put on the given text rows,
/// next to the mass a uniform causal row would give them.
struct WriteFocus {
    double mass = 0.0;
    double uniform = 0.0;
};

inline WriteFocus write_focus(const nn::ForwardCapture& capture, const rmt::SegmentLayout& layout,
                              const std::vector<std::size_t>& text_rows) {
    WriteFocus out;
    std::size_t count = 0;
    for (const auto& layer : capture.layers) {
        const std::size_t n = layer.seq_len;
        for (const auto& head : layer.heads) {
            for (std::size_t r = layout.write.begin; r < layout.write.end; ++r) {
                double m = 0.0;
                for (std::size_t t : text_rows) m += head[r * n + layout.text.begin + t];
                out.mass += m;
                out.uniform += static_cast<double>(text_rows.size()) / static_cast<double>(r + 1);
                ++count;
            }
        }
    }
    if (count) {
        out.mass /= static_cast<double>(count);
        out.uniform /= static_cast<double>(count);
    }
    return out;
}

}  // namespace needlestack::eval
