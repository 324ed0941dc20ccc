#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "needlestack/error.hpp"
#include "needlestack/haystack/bpe.hpp"
#include "needlestack/haystack/text.hpp"
#include "needlestack/world/world.hpp"

namespace needlestack::haystack {

inline const std::vector<std::string>& special_tokens() {
    static const std::vector<std::string> v{"<pad>", "<unk>", "<eos>", "<q>", "<ans>"};
    return v;
}

namespace detail {

inline bool word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

inline bool closing_punct(const std::string& t) {
    return t == "." || t == "," || t == "!" || t == "?" || t == ";" || t == ":" || t == ")" || t == "]" || t == "}";
}

inline bool opening_punct(const std::string& t) { return t == "(" || t == "[" || t == "{"; }

}  // namespace detail

/// Word-level pre-tokenization: runs of letters/digits (with inner
/// apostrophes, hyphens, and decimal points) are words; every other
/// non-space character is its own token.
inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    auto uc = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
    while (i < n) {
        if (is_space(text[i])) {
            ++i;
            continue;
        }
        if (!detail::word_char(uc(i))) {
            out.emplace_back(1, text[i]);
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        while (j < n) {
            if (detail::word_char(uc(j))) {
                ++j;
            } else if ((text[j] == '\'' || text[j] == '-') && j + 1 < n && detail::word_char(uc(j + 1))) {
                j += 2;
            } else if ((text[j] == '.' || text[j] == ',') && j + 1 < n && std::isdigit(uc(j - 1)) &&
                       std::isdigit(uc(j + 1))) {
                j += 2;
            } else {
                break;
            }
        }
        out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

/// Joins word tokens with single spaces, without a space before closing
/// punctuation or after an opening bracket.
inline std::string join_words(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0 && !detail::closing_punct(tokens[i]) && !detail::opening_punct(tokens[i - 1])) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

enum class TokenizerMode { word, bpe };

/// Word-level or byte-level BPE tokenizer with the five specials appended
/// (word level: ids 0..4; BPE: after the merge vocabulary).
class Tokenizer {
public:
    Tokenizer() = default;

    static Tokenizer word_level(const std::vector<std::string>& words) {
        Tokenizer t;
        t.mode_ = TokenizerMode::word;
        for (const auto& s : special_tokens()) t.push(s);
        for (const auto& w : words) {
            if (!t.index_.count(w)) t.push(w);
        }
        return t;
    }

    static Tokenizer byte_pair(BpeModel model) {
        Tokenizer t;
        t.mode_ = TokenizerMode::bpe;
        t.tokens_ = model.id_to_token();
        for (std::size_t i = 0; i < t.tokens_.size(); ++i) t.index_[t.tokens_[i]] = static_cast<int>(i);
        for (const auto& s : special_tokens()) {
            if (!t.index_.count(s)) t.push(s);
        }
        t.bpe_ = std::make_shared<BpeModel>(std::move(model));
        return t;
    }

    TokenizerMode mode() const { return mode_; }
    std::size_t vocab_size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    int id(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? unk_id() : it->second;
    }
    bool contains(const std::string& token) const { return index_.count(token) > 0; }
    const std::string& token(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
            throw DataError("token id " + std::to_string(id) + " out of range");
        }
        return tokens_[static_cast<std::size_t>(id)];
    }

    int pad_id() const { return index_.at("<pad>"); }
    int unk_id() const { return index_.at("<unk>"); }
    int eos_id() const { return index_.at("<eos>"); }
    int question_id() const { return index_.at("<q>"); }
    int answer_id() const { return index_.at("<ans>"); }
    bool is_special(int id) const {
        const auto& t = token(id);
        return std::find(special_tokens().begin(), special_tokens().end(), t) != special_tokens().end();
    }

    std::vector<int> encode(std::string_view text) const {
        std::vector<int> ids;
        if (mode_ == TokenizerMode::bpe) {
            for (const auto& piece : bpe_->encode_pieces(text)) ids.push_back(id(piece));
            return ids;
        }
        for (const auto& w : split_words(text)) ids.push_back(id(w));
        return ids;
    }

    std::size_t count(std::string_view text) const {
        return mode_ == TokenizerMode::bpe ? encode(text).size() : split_words(text).size();
    }

    /// Inverse of encode. Specials are skipped.
    std::string decode(std::span<const int> ids) const {
        std::vector<std::string> pieces;
        for (int i : ids) {
            if (!is_special(i)) pieces.push_back(token(i));
        }
        if (mode_ == TokenizerMode::bpe) return bpe_->decode_pieces(pieces);
        return join_words(pieces);
    }

    /// Plain-text form: "word" header line then one token per line. BPE
    /// tokenizers are rebuilt from their source files instead.
    std::string serialize() const {
        if (mode_ != TokenizerMode::word) {
            throw Error("tokenizer: only word-level vocabularies serialize to text");
        }
        std::string out = "word\n";
        for (const auto& t : tokens_) out += t + "\n";
        return out;
    }

    static Tokenizer deserialize(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        if (!std::getline(in, line) || line != "word") {
            throw DataError("tokenizer: expected 'word' header");
        }
        std::vector<std::string> tokens;
        while (std::getline(in, line)) tokens.push_back(line);
        const auto& sp = special_tokens();
        if (tokens.size() < sp.size() || !std::equal(sp.begin(), sp.end(), tokens.begin())) {
            throw DataError("tokenizer: vocabulary must start with the special tokens");
        }
        return word_level(std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(sp.size()), tokens.end()));
    }

    bool operator==(const Tokenizer& o) const { return mode_ == o.mode_ && tokens_ == o.tokens_; }

private:
    void push(const std::string& t) {
        index_[t] = static_cast<int>(tokens_.size());
        tokens_.push_back(t);
    }

    TokenizerMode mode_ = TokenizerMode::word;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    std::shared_ptr<const BpeModel> bpe_;
};

/// Every word the task world can emit in facts, questions, and answers.
inline std::vector<std::string> task_vocabulary() {
    std::vector<std::string> words;
    auto add_phrase = [&](const std::string& s) {
        for (auto& w : split_words(s)) words.push_back(w);
    };
    for (const auto* pool : {&world::default_persons(), &world::default_locations(), &world::default_objects(),
                             &world::directions(), &world::move_verbs(), &world::grab_verbs(), &world::drop_verbs(),
                             &world::give_verbs()}) {
        for (const auto& s : *pool) add_phrase(s);
    }
    add_phrase("the The to there is of . ? Where was before What did give Who gave received");
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    return words;
}

/// Specials, then the task words, then the `top_k` most frequent remaining
/// corpus words (ties broken by byte order).
inline Tokenizer build_vocab(const std::vector<std::vector<std::string>>& corpus_documents,
                             const std::vector<std::string>& task_words, std::size_t top_k) {
    bool any = false;
    for (const auto& d : corpus_documents) any = any || !d.empty();
    if (!any) {
        throw DataError("build_vocab: corpus is empty");
    }
    std::vector<std::string> base = task_words;
    std::sort(base.begin(), base.end());
    base.erase(std::unique(base.begin(), base.end()), base.end());

    std::map<std::string, std::size_t> freq;
    for (const auto& doc : corpus_documents)
        for (const auto& sentence : doc)
            for (auto& w : split_words(sentence)) ++freq[w];
    std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

    std::vector<std::string> words = base;
    const auto& sp = special_tokens();
    std::size_t added = 0;
    for (const auto& [w, _] : ranked) {
        if (added == top_k) break;
        if (std::binary_search(base.begin(), base.end(), w) || std::find(sp.begin(), sp.end(), w) != sp.end()) continue;
        words.push_back(w);
        ++added;
    }
    return Tokenizer::word_level(words);
}

}  // namespace needlestack::haystack
