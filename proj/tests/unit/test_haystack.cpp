#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "needlestack/haystack/dataset.hpp"

using namespace needlestack;
using namespace needlestack::haystack;

namespace {

const BackgroundCorpus& sample_corpus() {
    static const BackgroundCorpus c = load_corpus(std::string(NEEDLESTACK_SOURCE_DIR) + "/data/corpus");
    return c;
}

const Tokenizer& sample_tokenizer() {
    static const Tokenizer t = build_vocab(sample_corpus().sentence_lists(), task_vocabulary(), 400);
    return t;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("needlestack_" + name)).string();
}

}  // namespace

TEST(Sentences, SplitsOnTerminalPunctuation) {
    EXPECT_EQ(split_sentences("A cat. A dog!"), (std::vector<std::string>{"A cat.", "A dog!"}));
    EXPECT_TRUE(split_sentences("").empty());
    EXPECT_EQ(split_sentences("version 3.5 shipped. Done.").size(), 2u);
    EXPECT_EQ(split_sentences("Is it?  \"Yes.\" Then go."),
              (std::vector<std::string>{"Is it?", "\"Yes.\"", "Then go."}));
}

TEST(Tokenizer, WordRoundTrip) {
    const auto& tok = sample_tokenizer();
    for (const std::string s : {"Mary moved to the hallway.", "Where was the football before the bathroom?",
                                "The kitchen is north of the garden."}) {
        const auto ids = tok.encode(s);
        for (int id : ids) EXPECT_NE(id, tok.unk_id()) << s;
        EXPECT_EQ(tok.decode(ids), s);
    }
}

TEST(Tokenizer, SplitWordsKeepsNumbersAndContractions) {
    EXPECT_EQ(split_words("it's 3.5 well-known, ok."),
              (std::vector<std::string>{"it's", "3.5", "well-known", ",", "ok", "."}));
}

TEST(Tokenizer, BuildVocabProperties) {
    const auto docs = sample_corpus().sentence_lists();
    const auto words = task_vocabulary();
    const auto k0 = build_vocab(docs, words, 0);
    EXPECT_EQ(k0.vocab_size(), special_tokens().size() + words.size());
    for (const auto& w : words) EXPECT_TRUE(k0.contains(w)) << w;
    EXPECT_EQ(build_vocab(docs, words, 300).serialize(), build_vocab(docs, words, 300).serialize());
    EXPECT_LE(sample_tokenizer().vocab_size(), 512u);
    EXPECT_THROW(build_vocab({}, words, 10), DataError);
}

TEST(Tokenizer, SerializeRoundTrip) {
    const auto& tok = sample_tokenizer();
    EXPECT_EQ(Tokenizer::deserialize(tok.serialize()), tok);
}

TEST(Tokenizer, TaskTextNeverUnknown) {
    const auto& tok = sample_tokenizer();
    for (world::TaskId t : world::all_tasks()) {
        const auto b = world::fact_bounds(t);
        for (std::uint64_t seed = 0; seed < 30; ++seed) {
            const auto s = world::gen_task(t, std::min<std::size_t>(b.max, b.min + 8), seed);
            for (const auto& f : s.facts)
                for (int id : tok.encode(f.text)) ASSERT_NE(id, tok.unk_id()) << f.text;
            for (int id : tok.encode(s.question)) ASSERT_NE(id, tok.unk_id()) << s.question;
            for (int id : tok.encode(s.answer)) ASSERT_NE(id, tok.unk_id()) << s.answer;
        }
    }
}

TEST(Bpe, ByteLevelRoundTripWithToyMerges) {
    std::unordered_map<std::string, int> vocab;
    const auto& enc = bpe_detail::byte_encoder();
    for (int b = 0; b < 256; ++b) vocab[enc[static_cast<std::size_t>(b)]] = b;
    vocab["th"] = 256;
    vocab["the"] = 257;
    vocab["\xC4\xA0the"] = 258;  // "Ġthe"
    BpeModel model(vocab, {{"t", "h"}, {"th", "e"}, {"\xC4\xA0", "the"}});
    auto tok = Tokenizer::byte_pair(std::move(model));
    const std::string text = "the cat saw the  dog's bone, 3.5 times!\n";
    const auto ids = tok.encode(text);
    EXPECT_EQ(tok.decode(ids), text);
    EXPECT_EQ(ids[0], 257);
    EXPECT_NE(std::find(ids.begin(), ids.end(), 258), ids.end());
    EXPECT_EQ(tok.vocab_size(), 259u + special_tokens().size());
}

TEST(Mixer, NoNoiseBudgetHasNoBackground) {
    const auto& tok = sample_tokenizer();
    const auto sample = world::gen_task(world::TaskId::qa1, 4, 3);
    std::size_t need = tok.count(sample.question);
    for (const auto& f : sample.facts) need += tok.count(f.text);
    const auto m = mix(sample, sample_corpus(), MixSpec{need, Placement::uniform, 1, 5}, tok);
    EXPECT_EQ(m.background_sentences(), 0u);
    EXPECT_EQ(m.token_count, need);
    EXPECT_THROW(mix(sample, sample_corpus(), MixSpec{need - 1, Placement::uniform, 1, 5}, tok), ConfigError);
}

// Oracle: independent recount of the assembled text with the tokenizer.
TEST(Mixer, BudgetRespectedAndFactsInOrder) {
    const auto& tok = sample_tokenizer();
    const std::size_t longest = longest_sentence_tokens(sample_corpus(), tok);
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto sample = world::gen_task(world::TaskId::qa2, 2 + seed % 10, seed);
        const auto m = mix(sample, sample_corpus(), MixSpec{512, Placement::uniform, 1, seed}, tok);
        const std::size_t recount = tok.count(m.context) + tok.count(m.question());
        EXPECT_EQ(recount, m.token_count);
        EXPECT_LE(recount, 512u);
        EXPECT_GT(recount + longest, 512u);
        ASSERT_EQ(m.fact_offsets.size(), sample.facts.size());
        for (std::size_t i = 0; i < sample.facts.size(); ++i) {
            EXPECT_EQ(m.context.substr(m.fact_offsets[i], sample.facts[i].text.size()), sample.facts[i].text);
            if (i > 0) EXPECT_LT(m.fact_offsets[i - 1], m.fact_offsets[i]);
        }
        EXPECT_EQ(m.text().substr(m.text().size() - m.question().size()), m.question());
    }
}

TEST(Mixer, OracleTransparency) {
    const auto& tok = sample_tokenizer();
    for (world::TaskId t : world::all_tasks()) {
        const auto b = world::fact_bounds(t);
        const auto sample = world::gen_task(t, std::min<std::size_t>(b.max, b.min + 6), 17);
        const auto m = mix(sample, sample_corpus(), MixSpec{1024, Placement::uniform, 1, 2}, tok);
        std::vector<std::string> extracted;
        for (std::size_t i = 0; i < m.fact_offsets.size(); ++i) {
            extracted.push_back(m.context.substr(m.fact_offsets[i], sample.facts[i].text.size()));
        }
        EXPECT_EQ(world::oracle_answer(t, extracted, m.question()), sample.answer);
    }
}

TEST(Mixer, BudgetMonotonicity) {
    const auto& tok = sample_tokenizer();
    const auto sample = world::gen_task(world::TaskId::qa1, 3, 8);
    std::size_t prev = 0;
    for (std::size_t budget : {64u, 128u, 256u, 512u, 1024u, 2048u}) {
        const auto m = mix(sample, sample_corpus(), MixSpec{budget, Placement::uniform, 1, 4}, tok);
        EXPECT_GE(m.background_sentences(), prev);
        prev = m.background_sentences();
    }
}

TEST(Mixer, QuartilePlacement) {
    const auto& tok = sample_tokenizer();
    for (int q = 1; q <= 4; ++q) {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto sample = world::gen_task(world::TaskId::qa1, 3, seed);
            const auto m = place_at_depth(sample, sample_corpus(), q, tok, 1024, seed);
            const auto starts = fact_token_positions(m, tok);
            for (std::size_t i = 0; i < starts.size(); ++i) {
                const double end = static_cast<double>(starts[i] + tok.count(sample.facts[i].text));
                EXPECT_GE(static_cast<double>(starts[i]), m.token_count * (q - 1) / 4.0);
                EXPECT_LE(end, m.token_count * q / 4.0);
            }
        }
    }
}

TEST(Mixer, QuartilesShareBackgroundPrefix) {
    const auto& tok = sample_tokenizer();
    const auto sample = world::gen_task(world::TaskId::qa1, 2, 1);
    const auto a = place_at_depth(sample, sample_corpus(), 2, tok, 1024, 77);
    const auto b = place_at_depth(sample, sample_corpus(), 3, tok, 1024, 77);
    const std::size_t first = std::min(a.fact_offsets[0], b.fact_offsets[0]);
    EXPECT_EQ(a.context.substr(0, first), b.context.substr(0, first));
}

TEST(Mixer, QuartileTooSmallThrows) {
    const auto& tok = sample_tokenizer();
    const auto sample = world::gen_task(world::TaskId::qa1, 10, 1);
    EXPECT_THROW(place_at_depth(sample, sample_corpus(), 1, tok, 80, 1), DataError);
}

TEST(Mixer, MillionTokenBudget) {
    BackgroundCorpus big;
    std::string text;
    for (const auto& d : sample_corpus().documents)
        for (const auto& s : d.sentences) text += s + " ";
    for (int i = 0; i < 320; ++i) big.add_text("copy" + std::to_string(i), text);
    const auto& tok = sample_tokenizer();
    const auto sample = world::gen_task(world::TaskId::qa1, 5, 2);
    const auto m = mix(sample, big, MixSpec{1'000'000, Placement::uniform, 1, 3}, tok);
    EXPECT_LE(m.token_count, 1'000'000u);
    EXPECT_GT(m.token_count, 1'000'000u - longest_sentence_tokens(big, tok));
}

TEST(Mixer, ExhaustedCorpusThrows) {
    const auto& tok = sample_tokenizer();
    const auto sample = world::gen_task(world::TaskId::qa1, 2, 2);
    EXPECT_THROW(mix(sample, sample_corpus(), MixSpec{100000, Placement::uniform, 1, 1}, tok), DataError);
}

TEST(Jsonl, RoundTripPreservesOrderAndContent) {
    const auto& tok = sample_tokenizer();
    GenSpec spec;
    spec.task = world::TaskId::qa5;
    spec.count = 1000;
    spec.target_tokens = 256;
    spec.facts_max = 20;
    spec.seed = 9;
    const auto samples = generate_dataset(spec, sample_corpus(), tok);
    const auto path = temp_path("roundtrip.jsonl");
    write_jsonl(samples, path);
    const auto back = read_jsonl(path, &tok);
    ASSERT_EQ(back.size(), samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) ASSERT_EQ(back[i], samples[i]) << i;
    std::filesystem::remove(path);
}

TEST(Jsonl, MissingFieldNamedAndLineReported) {
    const auto path = temp_path("bad.jsonl");
    {
        const auto& tok = sample_tokenizer();
        GenSpec spec;
        spec.count = 2;
        spec.target_tokens = 128;
        auto samples = generate_dataset(spec, sample_corpus(), tok);
        auto j = to_json(samples[1]);
        j.erase("answer");
        std::ofstream out(path);
        out << to_json(samples[0]).dump() << "\n" << j.dump() << "\n";
    }
    try {
        read_jsonl(path);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("answer"), std::string::npos) << msg;
        EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
    }
    {
        std::ofstream out(path);
        out << "{not json\n";
    }
    EXPECT_THROW(read_jsonl(path), DataError);
    std::filesystem::remove(path);
}

TEST(Dataset, DeterministicGeneration) {
    const auto& tok = sample_tokenizer();
    GenSpec spec;
    spec.task = world::TaskId::qa3;
    spec.count = 20;
    spec.target_tokens = 1024;
    spec.facts_max = 40;
    spec.seed = 7;
    EXPECT_EQ(generate_dataset(spec, sample_corpus(), tok), generate_dataset(spec, sample_corpus(), tok));
}
