#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "needlestack/eval/score.hpp"
#include "needlestack/haystack/dataset.hpp"
#include "needlestack/parallel.hpp"
#include "needlestack/train/curriculum.hpp"
#include "needlestack/train/encode.hpp"
#include "needlestack/train/optim.hpp"

namespace needlestack::train {

struct TrainConfig {
    double lr = 1e-3;
    std::size_t warmup_steps = 0;  // 0 means 10% of total_steps
    std::size_t total_steps = 1000;  // per stage
    std::size_t max_steps = 0;     // overall cap, 0 for none
    std::size_t batch_size = 8;
    AdamWConfig adamw;
    double grad_clip = 1.0;
    std::size_t eval_every = 100;
    std::size_t patience = 3;
    double min_delta = 0.005;
    std::size_t val_samples = 64;
    std::uint64_t seed = 1;
    std::size_t threads = 1;

    std::size_t warmup() const { return warmup_steps ? warmup_steps : total_steps / 10; }
};

struct DataConfig {
    std::vector<world::TaskId> tasks{world::TaskId::qa1};
    std::size_t facts_min = 0;  // 0 means the task's bounds
    std::size_t facts_max = 0;
    double no_noise_fraction = 0.25;
};

/// Everything needed to continue a run from where it stopped.
struct TrainState {
    std::uint64_t step = 0;
    std::size_t stage = 0;
    std::uint64_t stage_step = 0;
    PlateauTracker tracker;
    OptimState<float> optim;
    std::vector<double> best_val;  // best validation accuracy per stage
    bool finished = false;

    bool operator==(const TrainState&) const = default;
};

struct LogRow {
    std::uint64_t step = 0;
    std::size_t stage = 0;
    std::size_t segments = 0;
    double loss = 0.0;
    std::optional<double> val_acc;
    double lr = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,stage,segments,loss,val_acc,lr";

inline std::string format_row(const LogRow& r) {
    char buf[160];
    std::string val;
    if (r.val_acc) {
        char v[32];
        std::snprintf(v, sizeof v, "%.4f", *r.val_acc);
        val = v;
    }
    std::snprintf(buf, sizeof buf, "%llu,%zu,%zu,%.6f,%s,%.8g", static_cast<unsigned long long>(r.step), r.stage,
                  r.segments, r.loss, val.c_str(), r.lr);
    return buf;
}

struct EvalEvent {
    std::uint64_t step = 0;
    std::size_t stage = 0;
    double accuracy = 0.0;
    bool new_best = false;     // best so far within the stage
    bool stage_done = false;
};

struct TrainHooks {
    std::function<void(const LogRow&)> on_row;
    std::function<void(const EvalEvent&)> on_eval;
};

/// Gradient of one sample's answer loss.
struct SampleGrad {
    double loss = 0.0;
    std::map<std::string, std::vector<float>> grads;
};

inline SampleGrad sample_gradient(const rmt::RmtModel<float>& model, const EncodedSample& enc, rmt::Mode mode) {
    auto p = model.bind(true);
    auto doc = rmt::process_document<float>(model, p, enc.segments, mode, &enc.targets);
    if (!std::isfinite(doc.loss.item())) throw NonFiniteError("non-finite training loss");
    SampleGrad out;
    out.loss = doc.loss.item();
    out.grads = nn::backward_params(doc.loss, p);
    return out;
}

/// Fraction of samples whose greedy answer scores as correct.
inline double accuracy(const rmt::RmtModel<float>& model, const std::vector<MixedSample>& samples, rmt::Mode mode,
                       const Tokenizer& tok, std::size_t threads) {
    if (samples.empty()) return 0.0;
    std::vector<char> ok(samples.size(), 0);
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        ok[i] = eval::score_answer(predict(model, samples[i], mode, tok), samples[i].answer(), samples[i].task.task);
    });
    std::size_t hits = 0;
    for (char c : ok) hits += c ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

inline constexpr std::uint64_t kSampleRetries = 64;

class Trainer {
public:
    Trainer(rmt::RmtModel<float>& model, rmt::Mode mode, Curriculum curriculum, TrainConfig cfg, DataConfig data,
            const haystack::BackgroundCorpus& corpus, const Tokenizer& tok)
        : model_(model), mode_(mode), curriculum_(std::move(curriculum)), cfg_(cfg), data_(std::move(data)),
          corpus_(corpus), tok_(tok) {
        validate_curriculum(curriculum_);
        if (data_.tasks.empty()) throw ConfigError("train: no tasks");
        if (cfg_.batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
        if (cfg_.total_steps == 0) throw ConfigError("train: total_steps must be >= 1");
        if (cfg_.eval_every == 0) throw ConfigError("train: eval_every must be >= 1");
        state_.tracker = {cfg_.patience, cfg_.min_delta};
        state_.best_val.assign(curriculum_.size(), -1.0);
    }

    TrainState& state() { return state_; }
    const TrainState& state() const { return state_; }
    const Curriculum& curriculum() const { return curriculum_; }
    std::size_t stage_segments() const { return curriculum_.at(state_.stage); }

    /// Training sample `b` of global step `step`: segment count drawn
    /// uniformly up to the stage length, noise dropped for a fraction.
    MixedSample training_sample(std::uint64_t step, std::size_t b, std::size_t stage_n) const {
        const std::uint64_t s = derive_seed(derive_seed(cfg_.seed, step), b);
        Rng rng(derive_seed(s, 0));
        const std::size_t k0 = sample_num_segments(stage_n, rng);
        const bool noise = rng.uniform01() >= data_.no_noise_fraction;
        const auto task = data_.tasks[rng.uniform_index(data_.tasks.size())];
        haystack::GenSpec spec;
        spec.task = task;
        spec.count = 1;
        spec.facts_min = data_.facts_min;
        spec.facts_max = data_.facts_max;
        // samples whose facts alone outgrow the stage are redrawn
        for (std::uint64_t attempt = 0; attempt < kSampleRetries; ++attempt) {
            spec.seed = derive_seed(s, 1 + attempt);
            if (noise) {
                for (std::size_t k = k0; k <= stage_n; ++k) {
                    spec.target_tokens = token_budget(k, segment_len());
                    try {
                        return haystack::generate_sample(spec, 0, corpus_, tok_);
                    } catch (const ConfigError&) {
                    }
                }
            }
            spec.target_tokens = 0;
            auto out = haystack::generate_sample(spec, 0, corpus_, tok_);
            if (prompt_ids(out, tok_).size() <= token_budget(stage_n, segment_len()) + 2) return out;
        }
        throw ConfigError("train: facts do not fit in " + std::to_string(stage_n) + " segments; lower data.facts_max");
    }

    /// Fixed validation set for a stage: full-length noisy samples.
    const std::vector<MixedSample>& validation_set(std::size_t stage) {
        auto it = val_.find(stage);
        if (it != val_.end()) return it->second;
        const std::size_t n = curriculum_.at(stage);
        std::vector<MixedSample> out;
        // indices whose facts overflow the stage length are skipped
        const std::size_t limit = cfg_.val_samples * kSampleRetries;
        for (std::size_t i = 0; out.size() < cfg_.val_samples && i < limit; ++i) {
            haystack::GenSpec spec;
            spec.task = data_.tasks[out.size() % data_.tasks.size()];
            spec.seed = derive_seed(derive_seed(cfg_.seed, 0x7661), n);
            spec.facts_min = data_.facts_min;
            spec.facts_max = data_.facts_max;
            spec.target_tokens = token_budget(n, segment_len());
            try {
                out.push_back(haystack::generate_sample(spec, i, corpus_, tok_));
            } catch (const ConfigError&) {
            }
        }
        if (out.size() < cfg_.val_samples) {
            throw ConfigError("train: facts do not fit in " + std::to_string(n) + " segments; lower data.facts_max");
        }
        return val_.emplace(stage, std::move(out)).first->second;
    }

    double validate() { return accuracy(model_, validation_set(state_.stage), mode_, tok_, threads()); }

    /// One optimizer step, followed by an evaluation when due. Returns
    /// false once training has finished.
    bool step(const TrainHooks& hooks = {}) {
        if (state_.finished) return false;
        const std::size_t stage_n = stage_segments();
        const double lr = lr_schedule(state_.stage_step, cfg_.warmup(), cfg_.total_steps, cfg_.lr);

        std::vector<EncodedSample> batch(cfg_.batch_size);
        std::vector<SampleGrad> grads(cfg_.batch_size);
        parallel_for(cfg_.batch_size, threads(), [&](std::size_t b) {
            batch[b] = encode_for_training(training_sample(state_.step, b, stage_n), tok_, segment_len());
            grads[b] = sample_gradient(model_, batch[b], mode_);
        });
        // reduction in sample order keeps the sum independent of scheduling
        auto total = std::move(grads[0].grads);
        double loss = grads[0].loss;
        for (std::size_t b = 1; b < grads.size(); ++b) {
            loss += grads[b].loss;
            for (auto& [name, g] : total) {
                const auto& add = grads[b].grads.at(name);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += add[i];
            }
        }
        const float inv = 1.0f / static_cast<float>(cfg_.batch_size);
        for (auto& [_, g] : total)
            for (float& x : g) x *= inv;
        loss /= static_cast<double>(cfg_.batch_size);
        if (!std::isfinite(loss)) throw NonFiniteError("non-finite training loss at step " + std::to_string(state_.step));

        clip_grad_norm(total, cfg_.grad_clip);
        adamw_step(model_.stores(), total, state_.optim, cfg_.adamw, lr);
        ++state_.step;
        ++state_.stage_step;

        LogRow row{state_.step, state_.stage, stage_n, loss, std::nullopt, lr};
        const bool stage_out = state_.stage_step >= cfg_.total_steps;
        const bool capped = cfg_.max_steps && state_.step >= cfg_.max_steps;
        if (state_.stage_step % cfg_.eval_every == 0 || stage_out || capped) {
            const double acc = validate();
            row.val_acc = acc;
            const bool converged = state_.tracker.update(acc);
            EvalEvent ev{state_.step, state_.stage, acc, false, converged || stage_out};
            if (acc > state_.best_val[state_.stage]) {
                state_.best_val[state_.stage] = acc;
                ev.new_best = true;
            }
            if (hooks.on_row) hooks.on_row(row);
            if (ev.stage_done) {
                if (state_.stage + 1 >= curriculum_.size()) {
                    state_.finished = true;
                } else {
                    ++state_.stage;
                    state_.stage_step = 0;
                    state_.tracker.reset();
                }
            }
            if (capped) state_.finished = true;
            if (hooks.on_eval) hooks.on_eval(ev);
        } else if (hooks.on_row) {
            hooks.on_row(row);
        }
        return !state_.finished;
    }

    void run(const TrainHooks& hooks = {}) {
        while (step(hooks)) {
        }
    }

private:
    std::size_t segment_len() const { return model_.rmt_config().segment_len; }
    std::size_t threads() const { return resolve_threads(cfg_.threads); }

    rmt::RmtModel<float>& model_;
    rmt::Mode mode_;
    Curriculum curriculum_;
    TrainConfig cfg_;
    DataConfig data_;
    const haystack::BackgroundCorpus& corpus_;
    const Tokenizer& tok_;
    TrainState state_;
    std::map<std::size_t, std::vector<MixedSample>> val_;
};

}  // namespace needlestack::train
