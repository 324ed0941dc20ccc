#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "needlestack/error.hpp"
#include "needlestack/haystack/text.hpp"

namespace needlestack::haystack {

/// Background documents as ordered sentence lists.
struct BackgroundCorpus {
    struct Document {
        std::string name;
        std::vector<std::string> sentences;
    };
    std::vector<Document> documents;

    std::size_t sentence_count() const {
        std::size_t n = 0;
        for (const auto& d : documents) n += d.sentences.size();
        return n;
    }

    std::vector<std::vector<std::string>> sentence_lists() const {
        std::vector<std::vector<std::string>> out;
        for (const auto& d : documents) out.push_back(d.sentences);
        return out;
    }

    void add_text(const std::string& name, const std::string& text) {
        auto sentences = split_sentences(normalize_space(text));
        if (!sentences.empty()) documents.push_back({name, std::move(sentences)});
    }
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// One document per UTF-8 text file. A directory contributes its *.txt files
/// in name order.
inline BackgroundCorpus load_corpus(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    if (fs::is_directory(path)) {
        for (const auto& e : fs::directory_iterator(path)) {
            if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
    } else if (fs::is_regular_file(path)) {
        files.push_back(path);
    } else {
        throw DataError("corpus path not found: " + path.string());
    }
    BackgroundCorpus corpus;
    for (const auto& f : files) corpus.add_text(f.filename().string(), read_file(f));
    if (corpus.sentence_count() == 0) {
        throw DataError("corpus at " + path.string() + " has no sentences");
    }
    return corpus;
}

}  // namespace needlestack::haystack
