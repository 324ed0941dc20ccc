#pragma once

#include <cctype>
#include <regex>
#include <string>

#include "needlestack/world/oracle.hpp"

namespace needlestack::eval {

/// Lowercase, punctuation dropped, whitespace collapsed.
inline std::string normalize_answer(const std::string& s) {
    std::string out;
    bool space = false;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c >= 0x80) {
            if (space && !out.empty()) out.push_back(' ');
            space = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else if (std::isspace(c)) {
            space = true;
        }
    }
    return out;
}

/// Pulls the answer slot out of a response in the task's answer format,
/// falling back to the response's last word.
inline std::string extract_answer(const std::string& response, world::TaskId task) {
    static const std::regex qa1(R"(most recent location of\s+.+?\s+is\s+(?:the\s+)?'?([A-Za-z]+))", std::regex::icase);
    static const std::regex qa2(R"(\bthe\s+.+?\s+is\s+in\s+(?:the\s+)?'?([A-Za-z]+))", std::regex::icase);
    static const std::regex qa3(R"(before\s+the\s+\S+?,?\s+the\s+.+?\s+was\s+in\s+(?:the\s+)?'?([A-Za-z]+))",
                                std::regex::icase);
    const std::regex* pattern = nullptr;
    switch (task) {
        case world::TaskId::qa1: pattern = &qa1; break;
        case world::TaskId::qa2: pattern = &qa2; break;
        case world::TaskId::qa3: pattern = &qa3; break;
        default: break;
    }
    std::smatch m;
    if (pattern && std::regex_search(response, m, *pattern)) return m[1].str();
    const std::string norm = normalize_answer(response);
    const auto last_space = norm.rfind(' ');
    return last_space == std::string::npos ? norm : norm.substr(last_space + 1);
}

inline bool score_answer(const std::string& generated, const std::string& gold, world::TaskId task) {
    const std::string want = normalize_answer(gold);
    if (want.empty()) return false;
    return normalize_answer(extract_answer(generated, task)) == want;
}

}  // namespace needlestack::eval
