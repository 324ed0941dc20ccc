#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "needlestack/error.hpp"
#include "needlestack/haystack/tokenizer.hpp"
#include "needlestack/rmt/rmt.hpp"
#include "needlestack/train/trainer.hpp"

namespace needlestack::cli {

inline constexpr char kCheckpointMagic[8] = {'N', 'S', 'T', 'K', 'C', 'K', 'P', 'T'};
inline constexpr char kCheckpointEnd[8] = {'N', 'S', 'T', 'K', 'E', 'N', 'D', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything a run needs to evaluate or resume.
struct Checkpoint {
    nn::ModelConfig model_config;
    rmt::RmtConfig rmt_config;
    rmt::Mode mode = rmt::Mode::rmt;
    train::Curriculum curriculum;
    std::uint64_t seed = 0;
    train::TrainState state;
    std::string tokenizer;             // serialized vocabulary
    nlohmann::json meta = nlohmann::json::object();  // resolved config and provenance
    rmt::RmtModel<float> model;
};

namespace ckpt_detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_floats(std::ostream& out, const std::vector<float>& v) {
    std::vector<unsigned char> buf(v.size() * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto u = std::bit_cast<std::uint32_t>(v[i]);
        for (int k = 0; k < 4; ++k) buf[4 * i + k] = static_cast<unsigned char>(u >> (8 * k));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    const unsigned char* take(std::size_t n, const char* what) {
        if (data_.size() - pos_ < n) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
        const auto* p = reinterpret_cast<const unsigned char*>(data_.data() + pos_);
        pos_ += n;
        return p;
    }
    std::uint32_t u32(const char* what) {
        const auto* p = take(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64(const char* what) {
        const auto* p = take(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        return v;
    }
    std::vector<float> floats(std::size_t n, const std::string& what) {
        if (n > (data_.size() - pos_) / 4) throw CheckpointError("checkpoint truncated while reading " + what);
        const auto* p = take(n * 4, what.c_str());
        std::vector<float> v(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t u = 0;
            for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(p[4 * i + k]) << (8 * k);
            v[i] = std::bit_cast<float>(u);
        }
        return v;
    }
    bool at_end() const { return pos_ == data_.size(); }

private:
    std::string data_;
    std::size_t pos_ = 0;
};

inline nlohmann::json model_json(const nn::ModelConfig& c) {
    return {{"n_layers", c.n_layers}, {"n_heads", c.n_heads},         {"d_model", c.d_model}, {"d_ff", c.d_ff},
            {"vocab_size", c.vocab_size}, {"max_positions", c.max_positions}, {"seed", c.seed}};
}

inline nn::ModelConfig model_from(const nlohmann::json& j) {
    nn::ModelConfig c;
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.d_model = j.at("d_model");
    c.d_ff = j.at("d_ff");
    c.vocab_size = j.at("vocab_size");
    c.max_positions = j.at("max_positions");
    c.seed = j.at("seed");
    return c;
}

}  // namespace ckpt_detail

/// Layout: magic, u32 version, u64 header length, JSON header, then every
/// parameter followed by the optimizer moments as little-endian float32
/// arrays in header order, then an end marker.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    using namespace ckpt_detail;
    nlohmann::ordered_json h;
    h["format"] = "needlestack-checkpoint";
    h["model"] = model_json(c.model_config);
    h["rmt"] = {{"mem_tokens", c.rmt_config.mem_tokens},
                {"segment_len", c.rmt_config.segment_len},
                {"retrieval", c.rmt_config.retrieval}};
    h["mode"] = rmt::to_string(c.mode);
    h["curriculum"] = c.curriculum;
    h["seed"] = c.seed;
    const auto& s = c.state;
    h["state"] = {{"step", s.step},
                  {"stage", s.stage},
                  {"stage_step", s.stage_step},
                  {"tracker", {{"patience", s.tracker.patience}, {"min_delta", s.tracker.min_delta},
                               {"best", s.tracker.best}, {"stale", s.tracker.stale}}},
                  {"best_val", s.best_val},
                  {"finished", s.finished},
                  {"optim_step", s.optim.step}};
    auto blobs = nlohmann::ordered_json::array();
    std::vector<const std::vector<float>*> order;
    for (const auto* store : c.model.stores()) {
        for (const auto& e : store->entries()) {
            blobs.push_back({{"name", e.name}, {"kind", "param"}, {"dtype", "f32le"}, {"shape", e.shape}});
            order.push_back(&e.values);
        }
    }
    for (const auto& [name, m] : s.optim.m) {
        blobs.push_back({{"name", name}, {"kind", "adam_m"}, {"dtype", "f32le"}, {"shape", {m.size()}}});
        order.push_back(&m);
        const auto& v = s.optim.v.at(name);
        blobs.push_back({{"name", name}, {"kind", "adam_v"}, {"dtype", "f32le"}, {"shape", {v.size()}}});
        order.push_back(&v);
    }
    h["blobs"] = blobs;
    h["tokenizer"] = c.tokenizer;
    h["meta"] = c.meta;
    const std::string header = h.dump();

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
        out.write(kCheckpointMagic, 8);
        put_u32(out, kCheckpointVersion);
        put_u64(out, header.size());
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        for (const auto* v : order) put_floats(out, *v);
        out.write(kCheckpointEnd, 8);
        if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    using namespace ckpt_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r(std::move(data));
    if (std::memcmp(r.take(8, "magic"), kCheckpointMagic, 8) != 0) {
        throw CheckpointError(path.string() + " is not a needlestack checkpoint");
    }
    const auto version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    const auto len = r.u64("header length");
    const auto* hp = r.take(len, "header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(reinterpret_cast<const char*>(hp), reinterpret_cast<const char*>(hp) + len);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    Checkpoint c;
    try {
        c.model_config = model_from(h.at("model"));
        c.rmt_config.mem_tokens = h.at("rmt").at("mem_tokens");
        c.rmt_config.segment_len = h.at("rmt").at("segment_len");
        c.rmt_config.retrieval = h.at("rmt").at("retrieval");
        c.mode = rmt::parse_mode(h.at("mode"));
        c.curriculum = h.at("curriculum").get<train::Curriculum>();
        c.seed = h.at("seed");
        const auto& s = h.at("state");
        c.state.step = s.at("step");
        c.state.stage = s.at("stage");
        c.state.stage_step = s.at("stage_step");
        c.state.tracker.patience = s.at("tracker").at("patience");
        c.state.tracker.min_delta = s.at("tracker").at("min_delta");
        c.state.tracker.best = s.at("tracker").at("best");
        c.state.tracker.stale = s.at("tracker").at("stale");
        c.state.best_val = s.at("best_val").get<std::vector<double>>();
        c.state.finished = s.at("finished");
        c.state.optim.step = s.at("optim_step");
        c.tokenizer = h.at("tokenizer");
        c.meta = h.value("meta", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    c.model = rmt::RmtModel<float>(c.model_config, c.rmt_config);
    for (const auto& b : h.at("blobs")) {
        const std::string name = b.at("name");
        const std::string kind = b.at("kind");
        if (b.at("dtype") != "f32le") throw CheckpointError("unsupported dtype for '" + name + "'");
        const auto shape = b.at("shape").get<std::vector<std::size_t>>();
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        auto values = r.floats(n, "'" + name + "'");
        if (kind == "param") {
            nn::ParameterStore<float>::Entry* entry = nullptr;
            for (auto* store : c.model.stores()) {
                if (store->contains(name)) entry = &store->at(name);
            }
            if (!entry) throw CheckpointError("checkpoint parameter '" + name + "' is not part of the model");
            if (entry->shape != nn::Shape(shape.begin(), shape.end())) {
                throw CheckpointError("shape header of '" + name + "' disagrees with the model config");
            }
            entry->values = std::move(values);
        } else if (kind == "adam_m") {
            c.state.optim.m[name] = std::move(values);
        } else if (kind == "adam_v") {
            c.state.optim.v[name] = std::move(values);
        } else {
            throw CheckpointError("unknown blob kind '" + kind + "'");
        }
    }
    if (std::memcmp(r.take(8, "end marker"), kCheckpointEnd, 8) != 0 || !r.at_end()) {
        throw CheckpointError("checkpoint end marker missing or trailing bytes present");
    }
    return c;
}

}  // namespace needlestack::cli
