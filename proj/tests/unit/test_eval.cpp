#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "needlestack/eval/prompts.hpp"
#include "needlestack/eval/score.hpp"

using namespace needlestack;
using world::TaskId;

namespace {

std::string read_golden(const std::string& name) {
    std::ifstream in(std::string(NEEDLESTACK_SOURCE_DIR) + "/tests/golden/" + name, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Prompts, MatchGoldenBytes) {
    for (TaskId t : world::all_tasks()) {
        const std::string name = world::to_string(t);
        const std::string golden = read_golden(name + "_prompt.txt");
        ASSERT_FALSE(golden.empty()) << name;
        EXPECT_EQ(eval::build_prompt(t, "{" + name + " query with noise}", "{" + name + " question}"), golden) << name;
    }
}

TEST(Prompts, SubstitutesOnce) {
    const auto p = eval::build_prompt(TaskId::qa1, "Mary went to the hallway. {qa1 question}", "Where is Mary?");
    EXPECT_NE(p.find("<context>\nMary went to the hallway. {qa1 question}"), std::string::npos);
    EXPECT_NE(p.find("QUESTION: Where is Mary?"), std::string::npos);
    EXPECT_TRUE(p.ends_with("Do not write anything else after that.\n"));
}

TEST(Prompts, UnknownTaskName) { EXPECT_THROW(eval::build_prompt("qa9", "x", "y"), ConfigError); }

TEST(Score, Examples) {
    EXPECT_TRUE(eval::score_answer("The most recent location of Mary is hallway.", "hallway", TaskId::qa1));
    EXPECT_TRUE(eval::score_answer("hallway", "hallway", TaskId::qa1));
    EXPECT_FALSE(eval::score_answer("The bottle is in the balcony.", "garden", TaskId::qa2));
    EXPECT_TRUE(eval::score_answer("The bottle is in the garden.", "garden", TaskId::qa2));
    EXPECT_TRUE(eval::score_answer("Before the kitchen, the apple was in the office.", "office", TaskId::qa3));
    EXPECT_TRUE(eval::score_answer("Jeff", "Jeff", TaskId::qa5));
    EXPECT_FALSE(eval::score_answer("", "Jeff", TaskId::qa5));
}

TEST(Score, CaseAndPunctuationInvariant) {
    const std::vector<std::string> variants = {"Hallway", "HALLWAY.", "hallway!", " hallway ", "'hallway'"};
    for (const auto& v : variants) {
        EXPECT_TRUE(eval::score_answer(v, "hallway", TaskId::qa1)) << v;
        EXPECT_TRUE(eval::score_answer("hallway", v, TaskId::qa1)) << v;
    }
}

#include "needlestack/eval/analysis.hpp"
#include "needlestack/eval/evaluate.hpp"
#include "needlestack/haystack/corpus.hpp"
#include "needlestack/haystack/dataset.hpp"

namespace {

struct Fixture {
    haystack::BackgroundCorpus corpus;
    haystack::Tokenizer tok;
    Fixture() {
        corpus = haystack::load_corpus(std::string(NEEDLESTACK_SOURCE_DIR) + "/data/corpus");
        tok = haystack::build_vocab(corpus.sentence_lists(), haystack::task_vocabulary(), 300);
    }
    std::vector<haystack::MixedSample> data(TaskId task, std::size_t n, std::size_t tokens, std::uint64_t seed,
                                            std::size_t facts_max = 0) const {
        haystack::GenSpec spec;
        spec.task = task;
        spec.count = n;
        spec.target_tokens = tokens;
        spec.seed = seed;
        spec.facts_max = std::min(facts_max, world::fact_bounds(task).max);
        return haystack::generate_dataset(spec, corpus, tok);
    }
};

}  // namespace

TEST(Prompts, EmptyContextStillValid) {
    const auto p = eval::build_prompt(TaskId::qa2, "", "Where is the milk?");
    EXPECT_NE(p.find("<context>\n\n</context>"), std::string::npos);
    EXPECT_NE(p.find("QUESTION: Where is the milk?"), std::string::npos);
}

TEST(Retrieval, ChunksAreContextSubstrings) {
    const std::string ctx = "One two three. Four five six seven. Eight.";
    const auto words = eval::chunk_context(ctx, eval::Chunking::tokens, 3);
    ASSERT_EQ(words.size(), 3u);
    EXPECT_EQ(words[0], "One two three.");
    EXPECT_EQ(words[2], "seven. Eight.");
    EXPECT_EQ(eval::chunk_context(ctx, eval::Chunking::sentence).size(), 3u);
}

TEST(Retrieval, LargeKAlwaysHits) {
    Fixture fx;
    for (const auto& s : fx.data(TaskId::qa2, 10, 600, 4, 20)) {
        const auto chunks = eval::chunk_context(s.context, eval::Chunking::sentence);
        EXPECT_TRUE(eval::retrieve_topk(s, eval::Chunking::sentence, chunks.size()).hit) << s.id;
    }
}

TEST(Retrieval, NoNoiseQa1SentenceHits) {
    Fixture fx;
    for (const auto& s : fx.data(TaskId::qa1, 30, 0, 8)) {
        EXPECT_TRUE(eval::retrieve_topk(s, eval::Chunking::sentence, 5).hit) << s.id;
    }
}

TEST(Retrieval, MultiFactMissesOccur) {
    Fixture fx;
    const auto samples = fx.data(TaskId::qa2, 60, 1500, 12, 30);
    std::size_t misses = 0;
    for (const auto& s : samples) misses += eval::retrieve_topk(s, eval::Chunking::sentence, 5).hit ? 0 : 1;
    EXPECT_GT(misses, 0u);
}

TEST(Retrieval, RecallMonotoneInK) {
    Fixture fx;
    const auto samples = fx.data(TaskId::qa2, 40, 1000, 21, 30);
    for (auto chunking : {eval::Chunking::sentence, eval::Chunking::tokens}) {
        double prev = 0.0;
        for (std::size_t k = 1; k <= 12; ++k) {
            const double r = eval::recall_at_k(samples, chunking, k, eval::tfidf_embed, 64);
            EXPECT_GE(r, prev) << k;
            EXPECT_LE(r, 1.0);
            prev = r;
        }
    }
}

TEST(Evaluate, OracleScoresPerfectly) {
    Fixture fx;
    std::vector<haystack::MixedSample> all;
    for (TaskId t : world::all_tasks()) {
        for (std::size_t len : {0, 400}) {
            auto part = fx.data(t, 20, len, 3, t == TaskId::qa3 ? 30 : 20);
            all.insert(all.end(), part.begin(), part.end());
        }
    }
    const auto report = eval::evaluate(nullptr, eval::EvalMode::oracle, all, &fx.tok);
    EXPECT_EQ(report.grid.size(), 10u);
    for (const auto& c : report.grid) {
        EXPECT_DOUBLE_EQ(c.accuracy, 1.0) << world::to_string(c.task) << " " << c.length;
        EXPECT_EQ(c.n, 20u);
    }
    EXPECT_EQ(eval::grid_csv(report).substr(0, 24), "task,length,accuracy,n\nq");
}

TEST(Evaluate, ConstantAnswerBaselineIsAnswerMarginal) {
    Fixture fx;
    const auto samples = fx.data(TaskId::qa1, 200, 0, 5);
    std::map<std::string, int> freq;
    for (const auto& s : samples) ++freq[s.answer()];
    int best = 0;
    for (const auto& [_, c] : freq) best = std::max(best, c);
    EXPECT_DOUBLE_EQ(eval::constant_answer_baseline(samples), best / 200.0);
    EXPECT_LT(eval::constant_answer_baseline(samples), 0.5);
}

TEST(Evaluate, ModelModeNeedsModel) {
    Fixture fx;
    const auto samples = fx.data(TaskId::qa1, 1, 0, 5);
    EXPECT_THROW(eval::evaluate(nullptr, eval::EvalMode::rmt, samples, &fx.tok), ConfigError);
    EXPECT_THROW(eval::parse_eval_mode("gpt"), ConfigError);
}

TEST(Evaluate, SegmentLimitWithoutStreaming) {
    Fixture fx;
    nn::ModelConfig mc;
    mc.d_model = 16;
    mc.d_ff = 32;
    mc.vocab_size = fx.tok.vocab_size();
    mc.max_positions = 40;
    rmt::RmtConfig rc;
    rc.mem_tokens = 2;
    rc.segment_len = 32;
    rmt::RmtModel<float> model(mc, rc);
    const auto samples = fx.data(TaskId::qa1, 2, 200, 5);
    eval::EvalOptions opt;
    opt.max_segments = 2;
    EXPECT_THROW(eval::evaluate(&model, eval::EvalMode::rmt, samples, &fx.tok, opt), DataError);
    opt.max_segments = 0;
    const auto r = eval::evaluate(&model, eval::EvalMode::rmt, samples, &fx.tok, opt);
    EXPECT_EQ(r.grid.at(0).n, 2u);
}

TEST(Analysis, DistanceMatrixSymmetricZeroDiagonal) {
    Rng rng(3);
    std::vector<rmt::MemoryState<float>> states;
    for (int i = 0; i < 5; ++i) {
        std::vector<float> v(12);
        for (float& x : v) x = static_cast<float>(rng.normal());
        states.push_back({nn::Tensor<float>::from({3, 4}, v), static_cast<std::size_t>(i)});
    }
    for (auto metric : {eval::Metric::euclidean, eval::Metric::cosine}) {
        const auto d = eval::memory_distance_matrix(states, metric);
        for (std::size_t i = 0; i < 5; ++i) {
            EXPECT_EQ(d[i][i], 0.0);
            for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(d[i][j], d[j][i]);
        }
    }
    const auto a = states[0].matrix.values(), b = states[1].matrix.values();
    double sq = 0;
    for (int k = 0; k < 12; ++k) sq += (double(a[k]) - b[k]) * (double(a[k]) - b[k]);
    EXPECT_NEAR(eval::memory_distance_matrix(states)[0][1], std::sqrt(sq), 1e-9);
    EXPECT_THROW(eval::memory_distance_matrix(std::vector<rmt::MemoryState<float>>{}), Error);
}

TEST(Analysis, AttentionRowsAndCausality) {
    Fixture fx;
    nn::ModelConfig mc;
    mc.d_model = 16;
    mc.d_ff = 32;
    mc.vocab_size = fx.tok.vocab_size();
    mc.max_positions = 40;
    rmt::RmtConfig rc;
    rc.mem_tokens = 2;
    rc.segment_len = 32;
    rmt::RmtModel<float> model(mc, rc);
    const auto s = fx.data(TaskId::qa1, 1, 100, 9).at(0);
    const auto trace = eval::trace_memory(model, s, rmt::Mode::rmt, fx.tok, {0, 2});
    EXPECT_EQ(trace.states.size(), trace.segments.size() + 1);
    ASSERT_EQ(trace.captures.size(), 2u);
    for (std::size_t c = 0; c < 2; ++c) {
        const auto& lay = trace.layouts[c == 0 ? 0 : 2];
        for (const auto& layer : trace.captures[c].layers) {
            const std::size_t n = layer.seq_len;
            EXPECT_EQ(n, lay.total());
            for (const auto& head : layer.heads) {
                for (std::size_t r = 0; r < n; ++r) {
                    double sum = 0;
                    for (std::size_t col = 0; col < n; ++col) sum += head[r * n + col];
                    EXPECT_NEAR(sum, 1.0, 1e-6);
                }
                for (std::size_t r = lay.text.begin; r < lay.text.end; ++r)
                    for (std::size_t col = r + 1; col < lay.text.end; ++col) EXPECT_EQ(head[r * n + col], 0.0);
            }
        }
    }
    const auto csv = eval::attention_csv(trace.captures[0], trace.layouts[0]);
    EXPECT_NE(csv.find(",read-mem,text,"), std::string::npos);
    EXPECT_NE(csv.find(",write-mem,"), std::string::npos);
    EXPECT_THROW(eval::trace_memory(model, s, rmt::Mode::rmt, fx.tok, {99}), ConfigError);
}

TEST(Analysis, FactSegmentsLocateFacts) {
    Fixture fx;
    nn::ModelConfig mc;
    mc.d_model = 16;
    mc.d_ff = 32;
    mc.vocab_size = fx.tok.vocab_size();
    mc.max_positions = 40;
    rmt::RmtConfig rc;
    rc.mem_tokens = 2;
    rc.segment_len = 32;
    rmt::RmtModel<float> model(mc, rc);
    for (const auto& s : fx.data(TaskId::qa1, 5, 200, 17)) {
        const auto trace = eval::trace_memory(model, s, rmt::Mode::rmt, fx.tok);
        for (std::size_t g = 0; g < trace.segments.size(); ++g) {
            for (std::size_t col : trace.fact_columns[g]) {
                const std::string word = fx.tok.token(trace.segments[g].at(col));
                bool in_fact = false;
                for (const auto& f : s.task.facts) in_fact = in_fact || f.text.find(word) != std::string::npos;
                EXPECT_TRUE(in_fact) << word;
            }
        }
    }
}

TEST(Analysis, BoundaryMeansSkipEnds) {
    const eval::Matrix d = {{0, 9, 0, 0, 0}, {9, 0, 1, 0, 0}, {0, 1, 0, 3, 0}, {0, 0, 3, 0, 7}, {0, 0, 0, 7, 0}};
    const auto b = eval::boundary_means(d, {true, false, true, true});
    EXPECT_DOUBLE_EQ(b.background, 1.0);
    EXPECT_DOUBLE_EQ(b.fact, 3.0);
    EXPECT_EQ(b.fact_n, 1u);
}
