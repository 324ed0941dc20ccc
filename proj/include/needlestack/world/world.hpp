#pragma once

#include <array>
#include <map>
#include <set>
#include <optional>
#include <string>
#include <vector>

#include "needlestack/error.hpp"
#include "needlestack/random.hpp"

namespace needlestack::world {

inline const std::vector<std::string>& default_persons() {
    static const std::vector<std::string> v{"Mary", "John", "Daniel", "Sandra", "Bill", "Fred"};
    return v;
}
inline const std::vector<std::string>& default_locations() {
    static const std::vector<std::string> v{"hallway", "kitchen", "garden", "office", "bathroom", "bedroom"};
    return v;
}
inline const std::vector<std::string>& default_objects() {
    static const std::vector<std::string> v{"apple", "football", "milk", "bottle"};
    return v;
}
inline const std::vector<std::string>& directions() {
    static const std::vector<std::string> v{"north", "south", "east", "west"};
    return v;
}

inline std::string opposite_direction(const std::string& dir) {
    if (dir == "north") return "south";
    if (dir == "south") return "north";
    if (dir == "east") return "west";
    if (dir == "west") return "east";
    throw Error("unknown direction '" + dir + "'");
}

// Verb variants. The parser in oracle.hpp accepts every one of these.
inline const std::vector<std::string>& move_verbs() {
    static const std::vector<std::string> v{"moved to", "went to", "travelled to", "journeyed to", "went back to"};
    return v;
}
inline const std::vector<std::string>& grab_verbs() {
    static const std::vector<std::string> v{"grabbed", "took", "picked up", "got"};
    return v;
}
inline const std::vector<std::string>& drop_verbs() {
    static const std::vector<std::string> v{"dropped", "discarded", "put down", "left"};
    return v;
}
inline const std::vector<std::string>& give_verbs() {
    static const std::vector<std::string> v{"gave", "handed", "passed"};
    return v;
}

enum class EventKind { move, grab, drop, give, relation };

inline std::string to_string(EventKind k) {
    switch (k) {
        case EventKind::move: return "move";
        case EventKind::grab: return "grab";
        case EventKind::drop: return "drop";
        case EventKind::give: return "give";
        case EventKind::relation: return "relation";
    }
    return "?";
}

/// One rendered fact. For relations, `actor` and `location` are the two
/// locations of "The <actor> is <direction> of the <location>."
struct FactEvent {
    EventKind kind = EventKind::move;
    std::string actor;
    std::string object;
    std::string location;
    std::string receiver;
    std::string direction;
    std::string text;

    bool operator==(const FactEvent&) const = default;
};

inline std::string render(const FactEvent& e, Rng& rng) {
    switch (e.kind) {
        case EventKind::move: return e.actor + " " + rng.pick(move_verbs()) + " the " + e.location + ".";
        case EventKind::grab: return e.actor + " " + rng.pick(grab_verbs()) + " the " + e.object + " there.";
        case EventKind::drop: return e.actor + " " + rng.pick(drop_verbs()) + " the " + e.object + ".";
        case EventKind::give:
            return e.actor + " " + rng.pick(give_verbs()) + " the " + e.object + " to " + e.receiver + ".";
        case EventKind::relation: return "The " + e.actor + " is " + e.direction + " of the " + e.location + ".";
    }
    return {};
}

/// Ground-truth simulation state. Persons and objects start at hidden
/// locations that no fact states; only emitted events become visible.
class World {
public:
    struct ObjectState {
        std::optional<std::string> holder;
        std::string location;               // resting place when not held
        std::vector<std::string> history;   // consecutive distinct locations
    };

    World(std::uint64_t seed, std::vector<EventKind> kinds,
          std::vector<std::string> persons = default_persons(),
          std::vector<std::string> locations = default_locations(),
          std::vector<std::string> objects = default_objects())
        : persons_(std::move(persons)), locations_(std::move(locations)), objects_(std::move(objects)),
          kinds_(std::move(kinds)), rng_(seed) {
        if (persons_.size() < 2 || locations_.size() < 2) {
            throw Error("world: need at least two persons and two locations");
        }
        for (const auto& p : persons_) person_location_[p] = rng_.pick(locations_);
        for (const auto& o : objects_) {
            ObjectState s;
            s.location = rng_.pick(locations_);
            s.history.push_back(s.location);
            objects_state_[o] = s;
        }
    }

    const std::vector<std::string>& persons() const { return persons_; }
    const std::vector<std::string>& locations() const { return locations_; }
    const std::vector<std::string>& objects() const { return objects_; }
    Rng& rng() { return rng_; }

    /// When set, a person can grab only after a fact has stated where they are.
    void set_grab_requires_stated_location(bool on) { grab_requires_stated_ = on; }

    const std::string& location_of(const std::string& person) const { return person_location_.at(person); }
    const ObjectState& object(const std::string& name) const { return objects_state_.at(name); }

    std::string object_location(const std::string& name) const {
        const auto& s = objects_state_.at(name);
        return s.holder ? person_location_.at(*s.holder) : s.location;
    }

    bool holds(const std::string& person, const std::string& object) const {
        const auto& s = objects_state_.at(object);
        return s.holder && *s.holder == person;
    }

    /// Every currently valid event of one kind (text left empty).
    std::vector<FactEvent> valid_events(EventKind kind) const {
        std::vector<FactEvent> out;
        switch (kind) {
            case EventKind::move:
                for (const auto& p : persons_)
                    for (const auto& l : locations_)
                        if (l != person_location_.at(p)) out.push_back({EventKind::move, p, "", l, "", "", ""});
                break;
            case EventKind::grab:
                for (const auto& p : persons_)
                    for (const auto& o : objects_) {
                        const auto& s = objects_state_.at(o);
                        if (grab_requires_stated_ && !stated_.count(p)) continue;
                        if (!s.holder && s.location == person_location_.at(p))
                            out.push_back({EventKind::grab, p, o, "", "", "", ""});
                    }
                break;
            case EventKind::drop:
                for (const auto& o : objects_) {
                    const auto& s = objects_state_.at(o);
                    if (s.holder) out.push_back({EventKind::drop, *s.holder, o, "", "", "", ""});
                }
                break;
            case EventKind::give:
                for (const auto& o : objects_) {
                    const auto& s = objects_state_.at(o);
                    if (!s.holder) continue;
                    for (const auto& q : persons_)
                        if (q != *s.holder && person_location_.at(q) == person_location_.at(*s.holder))
                            out.push_back({EventKind::give, *s.holder, o, "", q, "", ""});
                }
                break;
            case EventKind::relation: break;
        }
        return out;
    }

    void apply(const FactEvent& e) {
        switch (e.kind) {
            case EventKind::move: {
                if (e.location == person_location_.at(e.actor)) {
                    throw Error("world: move must change location");
                }
                person_location_[e.actor] = e.location;
                stated_.insert(e.actor);
                for (auto& [name, s] : objects_state_) {
                    if (s.holder && *s.holder == e.actor) push_history(s, e.location);
                }
                break;
            }
            case EventKind::grab: {
                auto& s = objects_state_.at(e.object);
                if (s.holder || s.location != person_location_.at(e.actor)) {
                    throw Error("world: invalid grab");
                }
                s.holder = e.actor;
                break;
            }
            case EventKind::drop: {
                auto& s = objects_state_.at(e.object);
                if (!s.holder || *s.holder != e.actor) {
                    throw Error("world: drop requires holding the object");
                }
                s.location = person_location_.at(e.actor);
                s.holder.reset();
                break;
            }
            case EventKind::give: {
                auto& s = objects_state_.at(e.object);
                if (!s.holder || *s.holder != e.actor ||
                    person_location_.at(e.receiver) != person_location_.at(e.actor)) {
                    throw Error("world: invalid give");
                }
                s.holder = e.receiver;
                gives_.push_back(e);
                break;
            }
            case EventKind::relation: throw Error("world: relations are not simulated");
        }
    }

    const std::vector<FactEvent>& gives() const { return gives_; }

private:
    static void push_history(ObjectState& s, const std::string& loc) {
        if (s.history.empty() || s.history.back() != loc) s.history.push_back(loc);
    }

    std::vector<std::string> persons_, locations_, objects_;
    std::vector<EventKind> kinds_;
    Rng rng_;
    std::map<std::string, std::string> person_location_;
    std::map<std::string, ObjectState> objects_state_;
    std::vector<FactEvent> gives_;
    std::set<std::string> stated_;
    bool grab_requires_stated_ = false;

    friend FactEvent step_world(World&);
};

/// Picks an event kind uniformly among the world's kinds that currently have
/// a valid instance, then an instance uniformly; applies and renders it.
inline FactEvent step_world(World& w) {
    std::vector<std::vector<FactEvent>> options;
    for (EventKind k : w.kinds_) {
        auto events = w.valid_events(k);
        if (!events.empty()) options.push_back(std::move(events));
    }
    if (options.empty()) {
        throw GenerationError("world: no valid event");
    }
    const auto& kind_events = options[w.rng_.uniform_index(options.size())];
    FactEvent e = kind_events[w.rng_.uniform_index(kind_events.size())];
    w.apply(e);
    e.text = render(e, w.rng_);
    return e;
}

}  // namespace needlestack::world
