#pragma once

#include <string>
#include <vector>

#include "needlestack/error.hpp"
#include "needlestack/random.hpp"
#include "needlestack/rmt/rmt.hpp"

namespace needlestack::train {

using Curriculum = std::vector<std::size_t>;

inline Curriculum canonical_curriculum(rmt::Mode mode) {
    // single-segment training is skipped with retrieval: it equals plain RMT
    return mode == rmt::Mode::rmt ? Curriculum{1, 2, 4, 6, 8, 16, 32} : Curriculum{2, 4, 6, 8, 16, 32};
}

/// The canonical schedule truncated after the last stage ≤ max_segments.
inline Curriculum make_curriculum(rmt::Mode mode, std::size_t max_segments) {
    Curriculum out;
    for (std::size_t n : canonical_curriculum(mode)) {
        if (n <= max_segments) out.push_back(n);
    }
    if (out.empty()) {
        throw ConfigError("curriculum: max_segments " + std::to_string(max_segments) + " is below the first stage " +
                          std::to_string(canonical_curriculum(mode).front()));
    }
    return out;
}

inline void validate_curriculum(const Curriculum& c) {
    if (c.empty()) throw ConfigError("curriculum: no stages");
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (c[i] < 1) throw ConfigError("curriculum: stages must be >= 1");
        if (i > 0 && c[i] <= c[i - 1]) throw ConfigError("curriculum: stages must be strictly increasing");
    }
}

/// Uniform segment count in [1, stage_n].
inline std::size_t sample_num_segments(std::size_t stage_n, Rng& rng) {
    if (stage_n == 0) throw ConfigError("sample_num_segments: stage must be >= 1");
    return 1 + static_cast<std::size_t>(rng.uniform_index(stage_n));
}

/// Convergence test: no accuracy gain above `min_delta` for `patience`
/// consecutive evaluations.
struct PlateauTracker {
    std::size_t patience = 3;
    double min_delta = 0.005;
    double best = -1.0;
    std::size_t stale = 0;

    /// Returns true when the stage has converged.
    bool update(double accuracy) {
        if (accuracy > best + min_delta) {
            best = accuracy;
            stale = 0;
        } else {
            ++stale;
        }
        return stale >= patience;
    }

    bool improved_last() const { return stale == 0; }
    void reset() {
        best = -1.0;
        stale = 0;
    }

    bool operator==(const PlateauTracker&) const = default;
};

}  // namespace needlestack::train
