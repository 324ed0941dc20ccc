#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "needlestack/cli/run.hpp"
#include "needlestack/eval/analysis.hpp"
#include "needlestack/eval/prompts.hpp"
#include "needlestack/haystack/dataset.hpp"

using namespace needlestack;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitRuntime = 4;

class UsageError : public Error {
public:
    using Error::Error;
};

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::string runs_root = "runs";
    std::string run_dir;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("-c,--config", c.config, "INI config file");
    cmd->add_option("-o,--set", c.overrides, "override as section.key=value (repeatable)");
    cmd->add_option("--runs-root", c.runs_root, "parent directory for run directories");
    cmd->add_option("--run-dir", c.run_dir, "explicit run directory");
}

std::string task_names() {
    std::string out;
    for (auto t : world::all_tasks()) out += (out.empty() ? "" : ", ") + world::to_string(t);
    return out;
}

world::TaskId task_arg(const std::string& name) {
    try {
        return world::parse_task(name);
    } catch (const ConfigError&) {
        throw UsageError("unknown task '" + name + "'; valid tasks: " + task_names());
    }
}

std::vector<haystack::MixedSample> read_datasets(const std::vector<std::string>& paths, const haystack::Tokenizer* tok) {
    std::vector<haystack::MixedSample> out;
    for (const auto& p : paths) {
        auto part = haystack::read_jsonl(p, tok);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

/// Samples for every (task, length) cell of the eval section.
std::vector<haystack::MixedSample> eval_datasets(const cli::RunConfig& cfg, const haystack::BackgroundCorpus& corpus,
                                                 const haystack::Tokenizer& tok) {
    std::vector<haystack::MixedSample> out;
    for (const auto& name : cfg.eval.tasks) {
        for (std::size_t len : cfg.eval.lengths) {
            haystack::GenSpec spec;
            spec.task = world::parse_task(name);
            spec.count = cfg.eval.samples;
            spec.target_tokens = len;
            spec.seed = derive_seed(derive_seed(cfg.eval.seed, static_cast<std::uint64_t>(spec.task)), len);
            spec.facts_min = cfg.data.facts_min;
            spec.facts_max = cfg.data.facts_max;
            auto part = haystack::generate_dataset(spec, corpus, tok);
            out.insert(out.end(), part.begin(), part.end());
        }
    }
    return out;
}

// ---- gen ---------------------------------------------------------------

struct GenArgs {
    Common common;
    std::string task = "qa1";
    std::size_t n = 100;
    std::size_t tokens = 512;
    std::uint64_t seed = 0;
    std::string out;
    std::string placement = "uniform";
    int quartile = 1;
};

int run_gen(const GenArgs& a) {
    const auto task = task_arg(a.task);
    auto cfg = cli::load_config(a.common.config, a.common.overrides);
    haystack::GenSpec spec;
    spec.task = task;
    spec.count = a.n;
    spec.target_tokens = a.tokens;
    spec.seed = a.seed;
    spec.facts_min = cfg.data.facts_min;
    spec.facts_max = cfg.data.facts_max;
    if (a.placement == "quartile") {
        spec.placement = haystack::Placement::quartile;
        if (a.quartile < 1 || a.quartile > 4) throw ConfigError("--quartile must be 1..4");
    } else if (a.placement != "uniform") {
        throw UsageError("--placement must be uniform or quartile");
    }
    spec.quartile = a.quartile;
    const auto corpus = cli::load_corpus_from(cfg);
    const auto tok = cli::build_tokenizer(cfg, corpus);
    const auto samples = haystack::generate_dataset(spec, corpus, tok);
    fs::path path = a.out;
    if (path.empty()) {
        char key[160];
        std::snprintf(key, sizeof key, "--task %s --n %zu --tokens %zu --seed %llu", a.task.c_str(), a.n, a.tokens,
                      static_cast<unsigned long long>(a.seed));
        const auto dir = cli::make_run_dir("gen", cfg, key, a.common.runs_root, a.common.run_dir, a.seed);
        path = dir / (world::to_string(task) + "-" + std::to_string(a.tokens) + ".jsonl");
    } else if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    haystack::write_jsonl(samples, path.string());
    std::printf("wrote %zu samples to %s\n", samples.size(), path.string().c_str());
    return 0;
}

// ---- train -------------------------------------------------------------

struct TrainArgs {
    Common common;
    std::string resume;
};

int run_train(const TrainArgs& a) {
    auto cfg = cli::load_config(a.common.config, a.common.overrides);
    const auto corpus = cli::load_corpus_from(cfg);
    cli::Checkpoint ck;
    haystack::Tokenizer tok;
    if (!a.resume.empty()) {
        ck = cli::load_checkpoint(a.resume);
        tok = cli::checkpoint_tokenizer(ck);
    } else {
        tok = cli::build_tokenizer(cfg, corpus);
        ck.model_config = cli::model_config_of(cfg, tok.vocab_size());
        ck.rmt_config = cli::rmt_config_of(cfg);
        ck.rmt_config.validate(ck.model_config);
        ck.mode = rmt::parse_mode(cfg.rmt.mode);
        ck.curriculum = cli::curriculum_of(cfg);
        ck.model = rmt::RmtModel<float>(ck.model_config, ck.rmt_config);
    }
    ck.seed = cfg.train.seed;
    ck.tokenizer = tok.mode() == haystack::TokenizerMode::word ? tok.serialize() : "";
    ck.meta = {{"version", cli::version()}, {"config", cli::to_ini(cfg)}};
    if (cfg.data.tokenizer == "bpe") ck.meta["bpe"] = {{"vocab", cfg.data.bpe_vocab}, {"merges", cfg.data.bpe_merges}};

    const auto dir = cli::make_run_dir("train", cfg, a.resume.empty() ? "" : "--resume " + a.resume,
                                       a.common.runs_root, a.common.run_dir, cfg.train.seed);
    train::Trainer trainer(ck.model, ck.mode, ck.curriculum, cfg.train, cli::data_config_of(cfg), corpus, tok);
    if (!a.resume.empty()) trainer.state() = ck.state;

    std::ofstream log(dir / "metrics.csv", std::ios::trunc);
    log << train::kMetricsHeader << '\n';
    fs::path last_good;
    auto save = [&](const fs::path& p) {
        ck.state = trainer.state();
        cli::save_checkpoint(p, ck);
        last_good = p;
    };
    train::TrainHooks hooks;
    hooks.on_row = [&](const train::LogRow& r) {
        log << train::format_row(r) << '\n';
        log.flush();
    };
    hooks.on_eval = [&](const train::EvalEvent& e) {
        std::printf("step %llu stage %zu (%zu segments) val_acc %.4f%s\n", static_cast<unsigned long long>(e.step),
                    e.stage, ck.curriculum[e.stage], e.accuracy, e.new_best ? " *" : "");
        std::fflush(stdout);
        if (e.new_best) save(dir / ("best-stage" + std::to_string(e.stage) + ".ckpt"));
        save(dir / "last.ckpt");
    };
    try {
        trainer.run(hooks);
    } catch (const NonFiniteError& e) {
        std::fprintf(stderr, "training diverged: %s\nlast good checkpoint: %s\n", e.what(),
                     last_good.empty() ? "(none)" : last_good.string().c_str());
        return kExitRuntime;
    }
    save(dir / "last.ckpt");
    std::printf("run directory: %s\n", dir.string().c_str());
    return 0;
}

// ---- eval --------------------------------------------------------------

struct EvalArgs {
    Common common;
    std::string checkpoint;
    std::vector<std::string> data;
    std::string mode;
};

int run_eval(const EvalArgs& a) {
    auto cfg = cli::load_config(a.common.config, a.common.overrides);
    const auto mode = eval::parse_eval_mode(a.mode.empty() ? cfg.eval.mode : a.mode);
    if (eval::needs_model(mode) && a.checkpoint.empty()) {
        throw UsageError("eval in " + eval::to_string(mode) + " mode needs --checkpoint");
    }
    const auto corpus = cli::load_corpus_from(cfg);
    std::optional<cli::Checkpoint> ck;
    haystack::Tokenizer tok;
    if (!a.checkpoint.empty()) {
        ck = cli::load_checkpoint(a.checkpoint);
        tok = cli::checkpoint_tokenizer(*ck);
    } else {
        tok = cli::build_tokenizer(cfg, corpus);
    }
    const auto samples = a.data.empty() ? eval_datasets(cfg, corpus, tok) : read_datasets(a.data, &tok);
    const auto dir = cli::make_run_dir("eval", cfg, eval::to_string(mode) + " " + a.checkpoint, a.common.runs_root, a.common.run_dir, cfg.eval.seed);
    eval::EvalOptions opt;
    opt.threads = cfg.train.threads;
    opt.max_segments = cfg.eval.max_segments;
    opt.top_k = cfg.eval.top_k;
    std::vector<std::string> responses;
    const auto report = eval::evaluate(ck ? &ck->model : nullptr, mode, samples, &tok, opt, &responses);
    cli::write_text(dir / "grid.csv", eval::grid_csv(report));
    cli::write_text(dir / "summary.json", eval::summary_json(report).dump(2) + "\n");
    std::string resp;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        resp += nlohmann::json{{"id", samples[i].id}, {"response", responses[i]}}.dump() + "\n";
    }
    cli::write_text(dir / "responses.jsonl", resp);
    if (mode == eval::EvalMode::retrieval) {
        cli::write_text(dir / "recall.csv",
                        eval::recall_csv(eval::retrieval_report(samples, cfg.eval.top_k, cfg.eval.chunk_words)));
    }
    std::fputs(eval::grid_csv(report).c_str(), stdout);
    std::printf("run directory: %s\n", dir.string().c_str());
    return 0;
}

// ---- analyze -----------------------------------------------------------

struct AnalyzeArgs {
    Common common;
    std::string checkpoint;
    std::string data;
    std::size_t sample = 0;
    std::vector<std::size_t> segments;
};

int run_analyze(const AnalyzeArgs& a) {
    if (a.checkpoint.empty()) throw UsageError("analyze needs --checkpoint");
    auto cfg = cli::load_config(a.common.config, a.common.overrides);
    const auto ck = cli::load_checkpoint(a.checkpoint);
    const auto tok = cli::checkpoint_tokenizer(ck);
    std::vector<haystack::MixedSample> samples;
    if (!a.data.empty()) {
        samples = haystack::read_jsonl(a.data, &tok);
    } else {
        samples = eval_datasets(cfg, cli::load_corpus_from(cfg), tok);
    }
    if (a.sample >= samples.size()) {
        throw UsageError("--sample " + std::to_string(a.sample) + " out of range (" + std::to_string(samples.size()) +
                         " samples)");
    }
    const auto& s = samples[a.sample];
    const auto trace = eval::trace_memory(ck.model, s, ck.mode, tok, a.segments);
    const auto metric = eval::parse_metric(cfg.eval.metric);
    const auto d = eval::memory_distance_matrix(trace.states, metric);
    const auto dir = cli::make_run_dir("analyze", cfg, a.checkpoint + " " + s.id, a.common.runs_root,
                                       a.common.run_dir, cfg.eval.seed);
    cli::write_text(dir / "distances.csv", eval::matrix_csv(d));
    const auto b = eval::boundary_means(d, trace.fact_segments);
    nlohmann::ordered_json j;
    j["sample"] = s.id;
    j["metric"] = cfg.eval.metric;
    j["segments"] = trace.segments.size();
    std::vector<std::size_t> fact_idx;
    for (std::size_t i = 0; i < trace.fact_segments.size(); ++i)
        if (trace.fact_segments[i]) fact_idx.push_back(i);
    j["fact_segments"] = fact_idx;
    j["fact_boundary_mean"] = b.fact;
    j["background_boundary_mean"] = b.background;
    for (std::size_t i = 0; i < a.segments.size(); ++i) {
        const std::size_t seg = a.segments[i];
        cli::write_text(dir / ("attention-seg" + std::to_string(seg) + ".csv"),
                        eval::attention_csv(trace.captures[i], trace.layouts[seg]));
        if (!trace.fact_columns[seg].empty()) {
            const auto f = eval::write_focus(trace.captures[i], trace.layouts[seg], trace.fact_columns[seg]);
            j["write_focus"][std::to_string(seg)] = {{"mass", f.mass}, {"uniform", f.uniform}};
        }
    }
    cli::write_text(dir / "analysis.json", j.dump(2) + "\n");
    std::fputs((j.dump(2) + "\n").c_str(), stdout);
    std::printf("run directory: %s\n", dir.string().c_str());
    return 0;
}

// ---- prompt ------------------------------------------------------------

struct PromptArgs {
    Common common;
    std::string data;
    std::string task;
    std::string input;
    std::string question;
};

int run_prompt(const PromptArgs& a) {
    if (a.data.empty()) {
        if (a.task.empty()) throw UsageError("prompt needs --data or --task with --input and --question");
        std::fputs(eval::build_prompt(task_arg(a.task), a.input, a.question).c_str(), stdout);
        return 0;
    }
    auto cfg = cli::load_config(a.common.config, a.common.overrides);
    const auto samples = haystack::read_jsonl(a.data);
    const auto dir = cli::make_run_dir("prompt", cfg, a.data, a.common.runs_root, a.common.run_dir, 0);
    fs::create_directories(dir / "prompts");
    for (const auto& s : samples) {
        cli::write_text(dir / "prompts" / (s.id + ".txt"), eval::build_prompt(s.task.task, s.text(), s.question()));
    }
    std::printf("wrote %zu prompts to %s\n", samples.size(), (dir / "prompts").string().c_str());
    return 0;
}

// ---- score -------------------------------------------------------------

struct ScoreArgs {
    Common common;
    std::string data;
    std::string responses;
};

int run_score(const ScoreArgs& a) {
    if (a.data.empty() || a.responses.empty()) throw UsageError("score needs --data and --responses");
    const auto samples = haystack::read_jsonl(a.data);
    std::map<std::string, const haystack::MixedSample*> by_id;
    for (const auto& s : samples) by_id[s.id] = &s;
    std::ifstream in(a.responses, std::ios::binary);
    if (!in) throw Error("cannot read " + a.responses);
    std::string line;
    std::size_t lineno = 0, n = 0, hits = 0;
    std::map<std::string, std::pair<std::size_t, std::size_t>> per_task;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.contains("id") || !j.contains("response")) {
            throw DataError("line " + std::to_string(lineno) + ": expected fields 'id' and 'response'");
        }
        const auto it = by_id.find(j["id"].get<std::string>());
        if (it == by_id.end()) throw DataError("line " + std::to_string(lineno) + ": unknown id " + j["id"].dump());
        const auto& s = *it->second;
        const bool ok = eval::score_answer(j["response"].get<std::string>(), s.answer(), s.task.task);
        ++n;
        hits += ok;
        auto& pt = per_task[world::to_string(s.task.task)];
        ++pt.second;
        pt.first += ok;
    }
    nlohmann::ordered_json out;
    out["scored"] = n;
    out["accuracy"] = n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
    for (const auto& [t, c] : per_task) out["per_task"][t] = static_cast<double>(c.first) / static_cast<double>(c.second);
    std::fputs((out.dump(2) + "\n").c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"needlestack: long-context memory laboratory"};
    app.set_version_flag("--version", cli::version());
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "generate a JSONL dataset");
    add_common(g, gen.common);
    g->add_option("--task", gen.task, "qa1..qa5");
    g->add_option("--n", gen.n, "number of samples");
    g->add_option("--tokens", gen.tokens, "target context+question tokens (0 = facts only)");
    g->add_option("--seed", gen.seed, "dataset seed");
    g->add_option("--out", gen.out, "output file (default: inside the run directory)");
    g->add_option("--placement", gen.placement, "uniform or quartile");
    g->add_option("--quartile", gen.quartile, "quartile 1..4 for quartile placement");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train a memory model with the curriculum");
    add_common(t, tr.common);
    t->add_option("--resume", tr.resume, "checkpoint to continue from");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "accuracy grid over task and length");
    add_common(e, ev.common);
    e->add_option("--checkpoint", ev.checkpoint, "model checkpoint");
    e->add_option("--data", ev.data, "JSONL datasets (default: generated from [eval])");
    e->add_option("--mode", ev.mode, "rmt, rmt-r, oracle or retrieval (default: eval.mode)");

    AnalyzeArgs an;
    auto* z = app.add_subcommand("analyze", "memory distances and attention maps for one document");
    add_common(z, an.common);
    z->add_option("--checkpoint", an.checkpoint, "model checkpoint");
    z->add_option("--data", an.data, "JSONL dataset (default: generated from [eval])");
    z->add_option("--sample", an.sample, "sample index");
    z->add_option("--segments", an.segments, "segment indices for attention export")->delimiter(',');

    PromptArgs pr;
    auto* p = app.add_subcommand("prompt", "emit LLM prompts");
    add_common(p, pr.common);
    p->add_option("--data", pr.data, "JSONL dataset: one prompt file per sample");
    p->add_option("--task", pr.task, "single prompt: task");
    p->add_option("--input", pr.input, "single prompt: context and question");
    p->add_option("--question", pr.question, "single prompt: question");

    ScoreArgs sc;
    auto* s = app.add_subcommand("score", "score external transcripts");
    add_common(s, sc.common);
    s->add_option("--data", sc.data, "JSONL dataset with gold answers");
    s->add_option("--responses", sc.responses, "JSONL lines {\"id\", \"response\"}");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        app.exit(ex);
        return kExitUsage;
    }
    try {
        if (*g) return run_gen(gen);
        if (*t) return run_train(tr);
        if (*e) return run_eval(ev);
        if (*z) return run_analyze(an);
        if (*p) return run_prompt(pr);
        if (*s) return run_score(sc);
    } catch (const UsageError& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return kExitUsage;
    } catch (const ConfigError& ex) {
        std::fprintf(stderr, "config error: %s\n", ex.what());
        return kExitConfig;
    } catch (const std::exception& ex) {
        std::fprintf(stderr, "error: %s\n", ex.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
