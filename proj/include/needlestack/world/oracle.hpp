#pragma once

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "needlestack/error.hpp"
#include "needlestack/world/world.hpp"

namespace needlestack::world {

enum class TaskId { qa1 = 1, qa2, qa3, qa4, qa5 };

inline std::string to_string(TaskId t) { return "qa" + std::to_string(static_cast<int>(t)); }

inline const std::vector<TaskId>& all_tasks() {
    static const std::vector<TaskId> v{TaskId::qa1, TaskId::qa2, TaskId::qa3, TaskId::qa4, TaskId::qa5};
    return v;
}

inline TaskId parse_task(const std::string& s) {
    for (TaskId t : all_tasks()) {
        if (to_string(t) == s) return t;
    }
    throw ConfigError("unknown task '" + s + "' (valid tasks: qa1, qa2, qa3, qa4, qa5)");
}

/// Independent replay solver: parses fact and question sentences from text
/// and answers by lookup. It never consults the simulator.
namespace oracle {

struct ParsedFact {
    EventKind kind = EventKind::move;
    std::string actor, object, location, receiver, direction;
};

enum class QueryKind {
    person_location,      // Where is P?
    object_location,      // Where is the O?
    location_before,      // Where was the O before the L?
    what_is_dir_of,       // What is D of the L?
    what_is_l_dir_of,     // What is the L D of?
    what_did_give,        // What did P give to Q?
    who_gave_to,          // Who gave the O to Q?
    who_did_give_to,      // Who did P give the O to?
    who_gave,             // Who gave the O?
    who_received,         // Who received the O?
};

struct Query {
    QueryKind kind = QueryKind::person_location;
    std::string person, receiver, object, location, direction;
};

namespace detail {

inline std::vector<std::string> words_of(std::string s) {
    while (!s.empty() && (s.back() == '.' || s.back() == '?' || s.back() == ' ' || s.back() == '\n')) s.pop_back();
    std::istringstream in(s);
    std::vector<std::string> w;
    for (std::string t; in >> t;) w.push_back(t);
    return w;
}

/// Matches words against a pattern; "$X" slots capture one word each.
inline bool match(const std::vector<std::string>& words, const std::vector<std::string>& pattern,
                  std::map<std::string, std::string>& slots) {
    if (words.size() != pattern.size()) return false;
    slots.clear();
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (!pattern[i].empty() && pattern[i][0] == '$') {
            slots[pattern[i]] = words[i];
        } else if (pattern[i] != words[i]) {
            return false;
        }
    }
    return true;
}

inline std::vector<std::string> split_phrase(const std::string& phrase) { return words_of(phrase); }

inline std::vector<std::string> pattern(std::initializer_list<std::vector<std::string>> pieces) {
    std::vector<std::string> out;
    for (const auto& p : pieces) out.insert(out.end(), p.begin(), p.end());
    return out;
}

}  // namespace detail

inline ParsedFact parse_fact(const std::string& text) {
    using detail::match;
    using detail::pattern;
    const auto w = detail::words_of(text);
    std::map<std::string, std::string> s;
    if (match(w, {"The", "$A", "is", "$D", "of", "the", "$B"}, s)) {
        return {EventKind::relation, s["$A"], "", s["$B"], "", s["$D"]};
    }
    for (const auto& v : move_verbs()) {
        if (match(w, pattern({{"$P"}, detail::split_phrase(v), {"the", "$L"}}), s)) {
            return {EventKind::move, s["$P"], "", s["$L"], "", ""};
        }
    }
    for (const auto& v : grab_verbs()) {
        if (match(w, pattern({{"$P"}, detail::split_phrase(v), {"the", "$O", "there"}}), s) ||
            match(w, pattern({{"$P"}, detail::split_phrase(v), {"the", "$O"}}), s)) {
            return {EventKind::grab, s["$P"], s["$O"], "", "", ""};
        }
    }
    for (const auto& v : drop_verbs()) {
        if (match(w, pattern({{"$P"}, detail::split_phrase(v), {"the", "$O", "there"}}), s) ||
            match(w, pattern({{"$P"}, detail::split_phrase(v), {"the", "$O"}}), s)) {
            return {EventKind::drop, s["$P"], s["$O"], "", "", ""};
        }
    }
    for (const auto& v : give_verbs()) {
        if (match(w, pattern({{"$P"}, detail::split_phrase(v), {"the", "$O", "to", "$Q"}}), s)) {
            return {EventKind::give, s["$P"], s["$O"], "", s["$Q"], ""};
        }
    }
    throw DataError("oracle: cannot parse fact '" + text + "'");
}

inline Query parse_question(const std::string& text) {
    using detail::match;
    const auto w = detail::words_of(text);
    std::map<std::string, std::string> s;
    Query q;
    if (match(w, {"Where", "is", "the", "$O"}, s)) {
        q.kind = QueryKind::object_location;
        q.object = s["$O"];
    } else if (match(w, {"Where", "is", "$P"}, s)) {
        q.kind = QueryKind::person_location;
        q.person = s["$P"];
    } else if (match(w, {"Where", "was", "the", "$O", "before", "the", "$L"}, s)) {
        q.kind = QueryKind::location_before;
        q.object = s["$O"];
        q.location = s["$L"];
    } else if (match(w, {"What", "is", "the", "$L", "$D", "of"}, s)) {
        q.kind = QueryKind::what_is_l_dir_of;
        q.location = s["$L"];
        q.direction = s["$D"];
    } else if (match(w, {"What", "is", "$D", "of", "the", "$L"}, s)) {
        q.kind = QueryKind::what_is_dir_of;
        q.location = s["$L"];
        q.direction = s["$D"];
    } else if (match(w, {"What", "did", "$P", "give", "to", "$Q"}, s)) {
        q.kind = QueryKind::what_did_give;
        q.person = s["$P"];
        q.receiver = s["$Q"];
    } else if (match(w, {"Who", "gave", "the", "$O", "to", "$Q"}, s)) {
        q.kind = QueryKind::who_gave_to;
        q.object = s["$O"];
        q.receiver = s["$Q"];
    } else if (match(w, {"Who", "did", "$P", "give", "the", "$O", "to"}, s)) {
        q.kind = QueryKind::who_did_give_to;
        q.person = s["$P"];
        q.object = s["$O"];
    } else if (match(w, {"Who", "gave", "the", "$O"}, s)) {
        q.kind = QueryKind::who_gave;
        q.object = s["$O"];
    } else if (match(w, {"Who", "received", "the", "$O"}, s)) {
        q.kind = QueryKind::who_received;
        q.object = s["$O"];
    } else {
        throw DataError("oracle: cannot parse question '" + text + "'");
    }
    return q;
}

inline bool query_belongs_to(TaskId task, QueryKind k) {
    switch (task) {
        case TaskId::qa1: return k == QueryKind::person_location;
        case TaskId::qa2: return k == QueryKind::object_location;
        case TaskId::qa3: return k == QueryKind::location_before;
        case TaskId::qa4: return k == QueryKind::what_is_dir_of || k == QueryKind::what_is_l_dir_of;
        case TaskId::qa5:
            return k == QueryKind::what_did_give || k == QueryKind::who_gave_to || k == QueryKind::who_did_give_to ||
                   k == QueryKind::who_gave || k == QueryKind::who_received;
    }
    return false;
}

/// Answers a parsed query by replaying the facts whose `keep` flag is set
/// (all facts when `keep` is empty). Throws DataError when they do not
/// determine an answer.
inline std::string answer(TaskId task, const std::vector<ParsedFact>& facts, const Query& q,
                          const std::vector<char>& keep = {}) {
    if (!query_belongs_to(task, q.kind)) {
        throw DataError("oracle: question form does not belong to " + to_string(task));
    }
    std::map<std::string, std::string> person_loc, holder, resting;
    std::map<std::string, std::vector<std::string>> history;
    std::vector<const ParsedFact*> gives;
    struct Relation {
        std::string a, dir, b;
    };
    std::vector<Relation> relations;

    auto known = [](const std::map<std::string, std::string>& m, const std::string& k) -> const std::string* {
        auto it = m.find(k);
        return it == m.end() ? nullptr : &it->second;
    };
    auto note = [&](const std::string& object, const std::string& loc) {
        auto& h = history[object];
        if (h.empty() || h.back() != loc) h.push_back(loc);
    };

    for (std::size_t i = 0; i < facts.size(); ++i) {
        if (!keep.empty() && !keep[i]) continue;
        const ParsedFact& f = facts[i];
        switch (f.kind) {
            case EventKind::move:
                person_loc[f.actor] = f.location;
                for (const auto& [obj, who] : holder) {
                    if (who == f.actor) note(obj, f.location);
                }
                break;
            case EventKind::grab:
                holder[f.object] = f.actor;
                resting.erase(f.object);
                if (auto* loc = known(person_loc, f.actor)) note(f.object, *loc);
                break;
            case EventKind::drop:
                holder.erase(f.object);
                if (auto* loc = known(person_loc, f.actor)) {
                    resting[f.object] = *loc;
                    note(f.object, *loc);
                } else {
                    resting.erase(f.object);
                }
                break;
            case EventKind::give:
                holder[f.object] = f.receiver;
                resting.erase(f.object);
                gives.push_back(&f);
                if (auto* loc = known(person_loc, f.receiver)) note(f.object, *loc);
                break;
            case EventKind::relation:
                relations.push_back({f.actor, f.direction, f.location});
                relations.push_back({f.location, opposite_direction(f.direction), f.actor});
                break;
        }
    }

    auto fail = [&]() -> std::string { throw DataError("oracle: unanswerable question for the given facts"); };

    switch (q.kind) {
        case QueryKind::person_location: {
            auto* loc = known(person_loc, q.person);
            return loc ? *loc : fail();
        }
        case QueryKind::object_location: {
            if (auto* who = known(holder, q.object)) {
                auto* loc = known(person_loc, *who);
                return loc ? *loc : fail();
            }
            auto* loc = known(resting, q.object);
            return loc ? *loc : fail();
        }
        case QueryKind::location_before: {
            auto it = history.find(q.object);
            if (it == history.end()) return fail();
            const auto& h = it->second;
            for (std::size_t i = h.size(); i-- > 1;) {
                if (h[i] == q.location) return h[i - 1];
            }
            return fail();
        }
        case QueryKind::what_is_dir_of:
        case QueryKind::what_is_l_dir_of: {
            std::optional<std::string> found;
            for (const auto& r : relations) {
                std::optional<std::string> hit;
                if (q.kind == QueryKind::what_is_dir_of && r.dir == q.direction && r.b == q.location) hit = r.a;
                if (q.kind == QueryKind::what_is_l_dir_of && r.dir == q.direction && r.a == q.location) hit = r.b;
                if (hit) {
                    if (found && *found != *hit) return fail();
                    found = hit;
                }
            }
            return found ? *found : fail();
        }
        default: break;
    }

    for (auto it = gives.rbegin(); it != gives.rend(); ++it) {
        const ParsedFact& g = **it;
        switch (q.kind) {
            case QueryKind::what_did_give:
                if (g.actor == q.person && g.receiver == q.receiver) return g.object;
                break;
            case QueryKind::who_gave_to:
                if (g.object == q.object && g.receiver == q.receiver) return g.actor;
                break;
            case QueryKind::who_did_give_to:
                if (g.actor == q.person && g.object == q.object) return g.receiver;
                break;
            case QueryKind::who_gave:
                if (g.object == q.object) return g.actor;
                break;
            case QueryKind::who_received:
                if (g.object == q.object) return g.receiver;
                break;
            default: break;
        }
    }
    return fail();
}

inline std::vector<ParsedFact> parse_facts(const std::vector<std::string>& texts) {
    std::vector<ParsedFact> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(parse_fact(t));
    return out;
}

}  // namespace oracle

/// Answers `question` from fact sentences alone.
inline std::string oracle_answer(TaskId task, const std::vector<std::string>& facts, const std::string& question) {
    return oracle::answer(task, oracle::parse_facts(facts), oracle::parse_question(question));
}

inline std::string oracle_answer(TaskId task, const std::vector<FactEvent>& facts, const std::string& question) {
    std::vector<std::string> texts;
    for (const auto& f : facts) texts.push_back(f.text);
    return oracle_answer(task, texts, question);
}

}  // namespace needlestack::world
