#pragma once

#include <array>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "needlestack/error.hpp"

namespace needlestack::haystack {

namespace bpe_detail {

inline std::string utf8(std::uint32_t cp) {
    std::string s;
    if (cp < 0x80) {
        s.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return s;
}

/// GPT-2's reversible byte → printable code point table.
inline const std::array<std::string, 256>& byte_encoder() {
    static const std::array<std::string, 256> table = [] {
        std::array<std::string, 256> t;
        std::uint32_t extra = 0;
        for (std::uint32_t b = 0; b < 256; ++b) {
            const bool printable = (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
            t[b] = utf8(printable ? b : 256 + extra++);
        }
        return t;
    }();
    return table;
}

inline const std::unordered_map<std::string, unsigned char>& byte_decoder() {
    static const std::unordered_map<std::string, unsigned char> table = [] {
        std::unordered_map<std::string, unsigned char> t;
        const auto& enc = byte_encoder();
        for (std::size_t b = 0; b < 256; ++b) t[enc[b]] = static_cast<unsigned char>(b);
        return t;
    }();
    return table;
}

/// Splits UTF-8 into code point strings.
inline std::vector<std::string> code_points(std::string_view s) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < s.size();) {
        const auto c = static_cast<unsigned char>(s[i]);
        const std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : 4;
        out.emplace_back(s.substr(i, len));
        i += len;
    }
    return out;
}

inline bool letter(unsigned char c) { return std::isalpha(c) || c >= 0x80; }
inline bool digit(unsigned char c) { return std::isdigit(c) != 0; }
inline bool space(unsigned char c) { return std::isspace(c) != 0; }

/// ASCII rendition of the GPT-2 pre-tokenizer pattern: contractions,
/// optional-space letter runs, digit runs, other-symbol runs, whitespace.
inline std::vector<std::string> pretokenize(std::string_view text) {
    std::vector<std::string> out;
    const std::size_t n = text.size();
    auto at = [&](std::size_t k) { return static_cast<unsigned char>(text[k]); };
    std::size_t i = 0;
    while (i < n) {
        if (text[i] == '\'') {
            bool matched = false;
            for (std::string_view c : {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"}) {
                if (text.substr(i, c.size()) == c) {
                    out.emplace_back(c);
                    i += c.size();
                    matched = true;
                    break;
                }
            }
            if (matched) continue;
        }
        std::size_t j = i;
        const bool lead_space = text[i] == ' ' && i + 1 < n && !space(at(i + 1));
        if (lead_space) ++j;
        if (j < n && letter(at(j))) {
            while (j < n && letter(at(j))) ++j;
        } else if (j < n && digit(at(j))) {
            while (j < n && digit(at(j))) ++j;
        } else if (j < n && !space(at(j))) {
            while (j < n && !space(at(j)) && !letter(at(j)) && !digit(at(j))) ++j;
        } else {
            // whitespace run; leave the last space to prefix the next word
            while (j < n && space(at(j))) ++j;
            if (j < n && j - i > 1 && text[j - 1] == ' ') --j;
        }
        out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace bpe_detail

/// Byte-level BPE driven by a GPT-2 style vocab.json and merges.txt.
class BpeModel {
public:
    BpeModel(std::unordered_map<std::string, int> vocab, const std::vector<std::pair<std::string, std::string>>& merges)
        : vocab_(std::move(vocab)) {
        for (std::size_t r = 0; r < merges.size(); ++r) ranks_[merges[r].first + " " + merges[r].second] = r;
    }

    static BpeModel load(const std::string& vocab_path, const std::string& merges_path) {
        std::ifstream vf(vocab_path);
        if (!vf) throw DataError("bpe: cannot open " + vocab_path);
        nlohmann::json j;
        try {
            vf >> j;
        } catch (const std::exception& e) {
            throw DataError("bpe: malformed " + vocab_path + ": " + e.what());
        }
        std::unordered_map<std::string, int> vocab;
        for (auto it = j.begin(); it != j.end(); ++it) vocab[it.key()] = it.value().get<int>();

        std::ifstream mf(merges_path);
        if (!mf) throw DataError("bpe: cannot open " + merges_path);
        std::vector<std::pair<std::string, std::string>> merges;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(mf, line)) {
            ++line_no;
            if (line.empty() || line.rfind("#version", 0) == 0) continue;
            const auto sp = line.find(' ');
            if (sp == std::string::npos) {
                throw DataError("bpe: " + merges_path + ":" + std::to_string(line_no) + ": expected 'left right'");
            }
            merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
        }
        return BpeModel(std::move(vocab), merges);
    }

    /// Tokens by id; gaps in the id space become "<unused-N>".
    std::vector<std::string> id_to_token() const {
        int max_id = -1;
        for (const auto& [_, id] : vocab_) max_id = std::max(max_id, id);
        std::vector<std::string> out(static_cast<std::size_t>(max_id + 1));
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = "<unused-" + std::to_string(i) + ">";
        for (const auto& [tok, id] : vocab_) out[static_cast<std::size_t>(id)] = tok;
        return out;
    }

    std::vector<std::string> encode_pieces(std::string_view text) const {
        std::vector<std::string> out;
        for (const auto& word : bpe_detail::pretokenize(text)) {
            for (auto& piece : merge_word(word)) out.push_back(std::move(piece));
        }
        return out;
    }

    std::string decode_pieces(const std::vector<std::string>& pieces) const {
        std::string out;
        const auto& dec = bpe_detail::byte_decoder();
        for (const auto& p : pieces) {
            for (const auto& cp : bpe_detail::code_points(p)) {
                auto it = dec.find(cp);
                if (it == dec.end()) throw DataError("bpe: token piece outside the byte alphabet");
                out.push_back(static_cast<char>(it->second));
            }
        }
        return out;
    }

private:
    std::vector<std::string> merge_word(const std::string& word) const {
        {
            std::lock_guard<std::mutex> lock(cache_->mutex);
            auto it = cache_->words.find(word);
            if (it != cache_->words.end()) return it->second;
        }
        std::vector<std::string> parts;
        const auto& enc = bpe_detail::byte_encoder();
        for (unsigned char b : word) parts.push_back(enc[b]);
        while (parts.size() > 1) {
            std::size_t best = ranks_.size(), at = 0;
            for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
                auto it = ranks_.find(parts[i] + " " + parts[i + 1]);
                if (it != ranks_.end() && it->second < best) {
                    best = it->second;
                    at = i;
                }
            }
            if (best == ranks_.size()) break;
            const std::string left = parts[at], right = parts[at + 1];
            std::vector<std::string> merged;
            for (std::size_t i = 0; i < parts.size(); ++i) {
                if (i + 1 < parts.size() && parts[i] == left && parts[i + 1] == right) {
                    merged.push_back(left + right);
                    ++i;
                } else {
                    merged.push_back(parts[i]);
                }
            }
            parts = std::move(merged);
        }
        std::lock_guard<std::mutex> lock(cache_->mutex);
        cache_->words[word] = parts;
        return parts;
    }

    std::unordered_map<std::string, int> vocab_;
    std::unordered_map<std::string, std::size_t> ranks_;
    struct Cache {
        std::mutex mutex;
        std::unordered_map<std::string, std::vector<std::string>> words;
    };
    std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

}  // namespace needlestack::haystack
