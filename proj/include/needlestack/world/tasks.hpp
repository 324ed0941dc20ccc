#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "needlestack/world/oracle.hpp"
#include "needlestack/world/world.hpp"

namespace needlestack::world {

struct FactBounds {
    std::size_t min = 0;
    std::size_t max = 0;
};

/// Supporting plus distracting fact counts per task.
inline FactBounds fact_bounds(TaskId task) {
    switch (task) {
        case TaskId::qa1: return {2, 10};
        case TaskId::qa2: return {2, 68};
        case TaskId::qa3: return {4, 320};
        case TaskId::qa4: return {2, 2};
        case TaskId::qa5: return {2, 126};
    }
    return {};
}

struct TaskSample {
    TaskId task = TaskId::qa1;
    std::vector<FactEvent> facts;
    std::string question;
    std::string answer;
    std::vector<std::size_t> supporting;

    std::vector<std::string> fact_texts() const {
        std::vector<std::string> out;
        out.reserve(facts.size());
        for (const auto& f : facts) out.push_back(f.text);
        return out;
    }

    bool operator==(const TaskSample&) const = default;
};

inline constexpr std::size_t kGenerationRetries = 100;

namespace detail {

struct Candidate {
    std::string question;
    std::string answer;  // from simulator state
};

inline std::vector<EventKind> task_kinds(TaskId task) {
    switch (task) {
        case TaskId::qa1: return {EventKind::move};
        case TaskId::qa2:
        case TaskId::qa3: return {EventKind::move, EventKind::grab, EventKind::drop};
        // transfers dominate qa5 stories; a repeated kind is drawn more often
        case TaskId::qa5:
            return {EventKind::move, EventKind::grab, EventKind::grab, EventKind::drop, EventKind::give, EventKind::give};
        case TaskId::qa4: return {};
    }
    return {};
}

/// Latest give in the simulator log matching a predicate.
inline const FactEvent* last_give(const World& w, const std::function<bool(const FactEvent&)>& pred) {
    const auto& g = w.gives();
    for (auto it = g.rbegin(); it != g.rend(); ++it) {
        if (pred(*it)) return &*it;
    }
    return nullptr;
}

inline std::vector<Candidate> simulator_candidates(TaskId task, const World& w, const std::vector<FactEvent>& facts) {
    std::vector<Candidate> out;
    switch (task) {
        case TaskId::qa1: {
            std::vector<std::string> moved;
            for (const auto& f : facts)
                if (std::find(moved.begin(), moved.end(), f.actor) == moved.end()) moved.push_back(f.actor);
            for (const auto& p : moved) out.push_back({"Where is " + p + "?", w.location_of(p)});
            break;
        }
        case TaskId::qa2:
            for (const auto& o : w.objects()) out.push_back({"Where is the " + o + "?", w.object_location(o)});
            break;
        case TaskId::qa3:
            for (const auto& o : w.objects()) {
                const auto& h = w.object(o).history;
                if (h.size() >= 2) {
                    out.push_back({"Where was the " + o + " before the " + h.back() + "?", h[h.size() - 2]});
                }
            }
            break;
        case TaskId::qa5:
            for (const auto& g : w.gives()) {
                const auto* a = last_give(w, [&](const FactEvent& e) { return e.actor == g.actor && e.receiver == g.receiver; });
                out.push_back({"What did " + g.actor + " give to " + g.receiver + "?", a->object});
                const auto* b = last_give(w, [&](const FactEvent& e) { return e.object == g.object && e.receiver == g.receiver; });
                out.push_back({"Who gave the " + g.object + " to " + g.receiver + "?", b->actor});
                const auto* c = last_give(w, [&](const FactEvent& e) { return e.actor == g.actor && e.object == g.object; });
                out.push_back({"Who did " + g.actor + " give the " + g.object + " to?", c->receiver});
                const auto* d = last_give(w, [&](const FactEvent& e) { return e.object == g.object; });
                out.push_back({"Who gave the " + g.object + "?", d->actor});
                out.push_back({"Who received the " + g.object + "?", d->receiver});
            }
            break;
        case TaskId::qa4: break;
    }
    return out;
}

/// Two spatial relations sharing a location; one question per fact and form.
inline std::pair<std::vector<FactEvent>, std::vector<Candidate>> relation_facts(Rng& rng) {
    auto locs = default_locations();
    rng.shuffle(locs);
    const auto& dirs = directions();
    const std::string d1 = rng.pick(dirs);
    std::string d2 = rng.pick(dirs);
    while (d2 == d1) d2 = rng.pick(dirs);
    const std::string& a = locs[0];
    const std::string& c = locs[1];
    const std::string& b = locs[2];
    FactEvent f1{EventKind::relation, a, "", c, "", d1, ""};
    FactEvent f2 = rng.uniform_index(2) == 0 ? FactEvent{EventKind::relation, b, "", c, "", d2, ""}
                                             : FactEvent{EventKind::relation, b, "", a, "", d2, ""};
    std::vector<FactEvent> facts{f1, f2};
    std::vector<Candidate> cands;
    for (auto& f : facts) {
        f.text = render(f, rng);
        cands.push_back({"What is " + f.direction + " of the " + f.location + "?", f.actor});
        cands.push_back({"What is the " + f.actor + " " + f.direction + " of?", f.location});
    }
    return {facts, cands};
}

inline std::optional<std::string> try_answer(TaskId task, const std::vector<oracle::ParsedFact>& facts,
                                             const oracle::Query& q, const std::vector<char>& keep) {
    try {
        return oracle::answer(task, facts, q, keep);
    } catch (const DataError&) {
        return std::nullopt;
    }
}

/// Facts touching an entity tied to the question: the queried person or
/// object, and whoever grabbed, dropped, gave or received a tied object.
/// No other fact can change the oracle's answer.
inline std::vector<char> relevant_facts(const std::vector<oracle::ParsedFact>& facts, const oracle::Query& q) {
    std::set<std::string> tied;
    for (const auto* e : {&q.person, &q.receiver, &q.object})
        if (!e->empty()) tied.insert(*e);
    std::vector<char> out(facts.size(), 0);
    for (bool grew = true; grew;) {
        grew = false;
        for (std::size_t i = 0; i < facts.size(); ++i) {
            if (out[i]) continue;
            const auto& f = facts[i];
            const bool object_tied = !f.object.empty() && tied.count(f.object);
            switch (f.kind) {
                case EventKind::move: out[i] = tied.count(f.actor) ? 1 : 0; break;
                case EventKind::relation: out[i] = 1; break;
                case EventKind::grab:
                case EventKind::drop:
                case EventKind::give:
                    out[i] = object_tied || tied.count(f.actor) || (!f.receiver.empty() && tied.count(f.receiver));
                    if (object_tied) {
                        grew |= tied.insert(f.actor).second;
                        if (!f.receiver.empty()) grew |= tied.insert(f.receiver).second;
                    }
                    break;
            }
        }
    }
    return out;
}

/// Facts whose removal changes (or breaks) the oracle's answer. Empty when
/// the candidate is rejected: oracle disagreement, an insufficient
/// supporting subset, or a non-minimal one.
inline std::optional<std::vector<std::size_t>> supporting_set(TaskId task, const std::vector<oracle::ParsedFact>& parsed,
                                                              const Candidate& cand) {
    const auto q = oracle::parse_question(cand.question);
    std::vector<char> keep(parsed.size(), 1);
    const auto full = try_answer(task, parsed, q, keep);
    if (!full || *full != cand.answer) return std::nullopt;

    const auto relevant = relevant_facts(parsed, q);
    std::vector<oracle::ParsedFact> tied;
    std::vector<std::size_t> index;
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        if (!relevant[i]) continue;
        tied.push_back(parsed[i]);
        index.push_back(i);
    }
    std::vector<char> tied_keep(tied.size(), 1);
    std::vector<std::size_t> support;
    for (std::size_t j = 0; j < tied.size(); ++j) {
        tied_keep[j] = 0;
        const auto a = try_answer(task, tied, q, tied_keep);
        tied_keep[j] = 1;
        if (!a || *a != *full) support.push_back(index[j]);
    }
    if (support.empty()) return std::nullopt;

    std::fill(keep.begin(), keep.end(), 0);
    for (std::size_t i : support) keep[i] = 1;
    const auto sub = try_answer(task, parsed, q, keep);
    if (!sub || *sub != *full) return std::nullopt;
    for (std::size_t i : support) {
        keep[i] = 0;
        const auto a = try_answer(task, parsed, q, keep);
        keep[i] = 1;
        if (a && *a == *full) return std::nullopt;
    }
    return support;
}

/// Per-sample cast: short stories use fewer persons and places so that a
/// well-posed question is likely within a few facts.
inline std::vector<std::string> cast(const std::vector<std::string>& pool, std::size_t size, Rng& rng) {
    auto v = pool;
    rng.shuffle(v);
    v.resize(std::min(size, v.size()));
    return v;
}

inline World make_world(TaskId task, std::size_t n_facts, Rng& rng, std::uint64_t seed) {
    auto persons = cast(default_persons(), std::clamp<std::size_t>((n_facts + 1) / 2, 2, 6), rng);
    auto locations = cast(default_locations(), std::clamp<std::size_t>(n_facts + 1, 3, 6), rng);
    World w(seed, task_kinds(task), persons, locations, default_objects());
    // location questions need the grabber's whereabouts to be stated
    w.set_grab_requires_stated_location(task == TaskId::qa2 || task == TaskId::qa3);
    return w;
}

}  // namespace detail

/// Simulates a world until a well-posed question with a minimal sufficient
/// supporting set exists. Deterministic in (task, n_facts, seed).
inline TaskSample gen_task(TaskId task, std::size_t n_facts, std::uint64_t seed) {
    const auto bounds = fact_bounds(task);
    if (n_facts < bounds.min || n_facts > bounds.max) {
        throw ConfigError(to_string(task) + ": n_facts " + std::to_string(n_facts) + " outside [" +
                          std::to_string(bounds.min) + ", " + std::to_string(bounds.max) + "]");
    }
    for (std::size_t attempt = 0; attempt < kGenerationRetries; ++attempt) {
        const std::uint64_t sub = derive_seed(seed, attempt);
        Rng pick_rng(derive_seed(sub, 1));
        std::vector<FactEvent> facts;
        std::vector<detail::Candidate> cands;
        if (task == TaskId::qa4) {
            Rng rng(sub);
            std::tie(facts, cands) = detail::relation_facts(rng);
        } else {
            Rng cast_rng(derive_seed(sub, 2));
            World w = detail::make_world(task, n_facts, cast_rng, sub);
            for (std::size_t i = 0; i < n_facts; ++i) facts.push_back(step_world(w));
            cands = detail::simulator_candidates(task, w, facts);
        }
        pick_rng.shuffle(cands);
        std::vector<std::string> texts;
        for (const auto& f : facts) texts.push_back(f.text);
        const auto parsed = oracle::parse_facts(texts);
        for (const auto& cand : cands) {
            if (auto support = detail::supporting_set(task, parsed, cand)) {
                return TaskSample{task, std::move(facts), cand.question, cand.answer, std::move(*support)};
            }
        }
    }
    throw GenerationError(to_string(task) + ": no well-posed sample with " + std::to_string(n_facts) +
                          " facts after " + std::to_string(kGenerationRetries) + " attempts (seed " +
                          std::to_string(seed) + ")");
}

}  // namespace needlestack::world
