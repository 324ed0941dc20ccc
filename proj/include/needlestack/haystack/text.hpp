#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace needlestack::haystack {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

inline bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }

inline bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

/// Collapses whitespace runs to one space and trims both ends.
inline std::string normalize_space(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending = false;
    for (char c : text) {
        if (is_space(c)) {
            pending = !out.empty();
            continue;
        }
        if (pending) out.push_back(' ');
        pending = false;
        out.push_back(c);
    }
    return out;
}

/// Splits after '.', '!' or '?' (plus any closing quotes or brackets) when
/// whitespace follows. "3.5" never splits because no whitespace follows the
/// point. Sentences are trimmed and keep their delimiters.
inline std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    auto emit = [&](std::size_t end) {
        std::string_view s = text.substr(start, end - start);
        while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
        while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
        if (!s.empty()) out.emplace_back(s);
        start = end;
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (!is_terminal(text[i])) continue;
        std::size_t j = i + 1;
        while (j < text.size() && (is_terminal(text[j]) || is_closer(text[j]))) ++j;
        if (j < text.size() && is_space(text[j])) {
            emit(j);
            i = j;
        } else {
            i = j - 1;
        }
    }
    emit(text.size());
    return out;
}

}  // namespace needlestack::haystack
