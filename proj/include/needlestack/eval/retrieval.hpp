#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "needlestack/error.hpp"
#include "needlestack/haystack/mixer.hpp"
#include "needlestack/haystack/text.hpp"
#include "needlestack/haystack/tokenizer.hpp"

namespace needlestack::eval {

enum class Chunking { sentence, tokens };

inline Chunking parse_chunking(const std::string& s) {
    if (s == "sentence") return Chunking::sentence;
    if (s == "tokens" || s == "tokens512") return Chunking::tokens;
    throw ConfigError("unknown chunking '" + s + "' (expected sentence or tokens512)");
}

inline std::string to_string(Chunking c) { return c == Chunking::sentence ? "sentence" : "tokens512"; }

/// Maps a batch of texts to vectors. The last text of a batch is the query,
/// so fitted embedders may take their statistics from the whole batch.
using Embedder = std::function<std::vector<std::vector<double>>(const std::vector<std::string>&)>;

inline std::vector<std::string> lower_words(const std::string& text) {
    std::vector<std::string> out;
    for (auto w : haystack::split_words(text)) {
        if (w.empty() || !std::isalnum(static_cast<unsigned char>(w[0]))) continue;
        for (char& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        out.push_back(std::move(w));
    }
    return out;
}

/// TF-IDF over lowercased words with smoothed IDF, fitted on the batch.
inline std::vector<std::vector<double>> tfidf_embed(const std::vector<std::string>& texts) {
    std::vector<std::vector<std::string>> docs;
    std::map<std::string, std::size_t> index;
    std::map<std::string, std::size_t> df;
    for (const auto& t : texts) {
        docs.push_back(lower_words(t));
        std::vector<std::string> uniq = docs.back();
        std::sort(uniq.begin(), uniq.end());
        uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
        for (const auto& w : uniq) {
            ++df[w];
            index.emplace(w, index.size());
        }
    }
    const double n = static_cast<double>(texts.size());
    std::vector<std::vector<double>> out;
    for (const auto& d : docs) {
        std::vector<double> v(index.size(), 0.0);
        for (const auto& w : d) v[index[w]] += 1.0;
        for (const auto& [w, i] : index) {
            if (v[i] > 0) v[i] *= std::log((1.0 + n) / (1.0 + static_cast<double>(df[w]))) + 1.0;
        }
        out.push_back(std::move(v));
    }
    return out;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return aa > 0 && bb > 0 ? ab / std::sqrt(aa * bb) : 0.0;
}

/// Splits the context into sentences, or into runs of `chunk_words`
/// whitespace-delimited words. Chunks are exact substrings of the context.
inline std::vector<std::string> chunk_context(const std::string& context, Chunking chunking,
                                              std::size_t chunk_words = 512) {
    if (chunking == Chunking::sentence) return haystack::split_sentences(context);
    if (chunk_words == 0) throw ConfigError("chunk size must be >= 1");
    std::vector<std::string> out;
    std::size_t i = 0, count = 0, start = std::string::npos, last_end = 0;
    while (i < context.size()) {
        while (i < context.size() && haystack::is_space(context[i])) ++i;
        if (i >= context.size()) break;
        const std::size_t b = i;
        while (i < context.size() && !haystack::is_space(context[i])) ++i;
        if (start == std::string::npos) start = b;
        last_end = i;
        if (++count == chunk_words) {
            out.push_back(context.substr(start, last_end - start));
            start = std::string::npos;
            count = 0;
        }
    }
    if (start != std::string::npos) out.push_back(context.substr(start, last_end - start));
    return out;
}

struct RetrievalResult {
    std::vector<std::string> chunks;   // top-k, best first
    std::vector<std::size_t> indices;  // positions in the chunk list
    bool hit = false;
};

/// Ranks context chunks against the question; a hit needs every
/// supporting fact inside the top-k chunks.
inline RetrievalResult retrieve_topk(const haystack::MixedSample& s, Chunking chunking, std::size_t k,
                                     const Embedder& embedder = tfidf_embed, std::size_t chunk_words = 512) {
    if (k == 0) throw ConfigError("retrieve_topk: k must be >= 1");
    auto chunks = chunk_context(s.context, chunking, chunk_words);
    RetrievalResult out;
    if (!chunks.empty()) {
        auto batch = chunks;
        batch.push_back(s.question());
        const auto vecs = embedder(batch);
        std::vector<double> score(chunks.size());
        for (std::size_t i = 0; i < chunks.size(); ++i) score[i] = cosine(vecs[i], vecs.back());
        std::vector<std::size_t> order(chunks.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
        order.resize(std::min(k, order.size()));
        out.indices = order;
        for (std::size_t i : order) out.chunks.push_back(chunks[i]);
    }
    out.hit = true;
    for (std::size_t f : s.task.supporting) {
        const std::string& fact = s.task.facts.at(f).text;
        const bool found = std::any_of(out.chunks.begin(), out.chunks.end(),
                                       [&](const std::string& c) { return c.find(fact) != std::string::npos; });
        out.hit = out.hit && found;
    }
    return out;
}

/// Fraction of samples whose supporting facts all land in the top k.
inline double recall_at_k(const std::vector<haystack::MixedSample>& samples, Chunking chunking, std::size_t k,
                          const Embedder& embedder = tfidf_embed, std::size_t chunk_words = 512) {
    if (samples.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& s : samples) hits += retrieve_topk(s, chunking, k, embedder, chunk_words).hit ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

}  // namespace needlestack::eval
