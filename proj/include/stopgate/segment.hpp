#pragma once
// Splits a raw reasoning trace into episodes at self-correction markers
// ("Wait", "Alternatively", ...). A marker only opens a new episode when
// it begins a sentence; mid-word and mid-sentence hits are ignored.

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stopgate/core.hpp"

namespace stopgate {

inline const std::vector<std::string>& default_markers() {
    static const std::vector<std::string> markers = {
        "Wait", "Alternatively", "However", "Hmm", "Let me reconsider", "On second thought",
    };
    return markers;
}

struct EpisodeSplit {
    // Half-open [begin, end) character ranges; concatenation restores the trace.
    std::vector<std::pair<std::size_t, std::size_t>> episodes;
    // (marker, position) for each hit that opened an episode, in text order.
    std::vector<std::pair<std::string, std::size_t>> markers_hit;
};

namespace detail {

// A marker begins a sentence when only whitespace separates it from the
// start of the text, from a newline, or from terminal punctuation.
inline bool begins_sentence(std::string_view text, std::size_t pos) {
    if (pos == 0) return true;
    std::size_t i = pos;
    bool saw_whitespace = false;
    bool saw_newline = false;
    while (i > 0) {
        const char c = text[i - 1];
        if (c == '\n') {
            saw_newline = true;
            saw_whitespace = true;
            --i;
        } else if (c == ' ' || c == '\t' || c == '\r') {
            saw_whitespace = true;
            --i;
        } else {
            break;
        }
    }
    if (!saw_whitespace) return false;
    if (saw_newline || i == 0) return true;
    const char prev = text[i - 1];
    return prev == '.' || prev == '!' || prev == '?';
}

}  // namespace detail

inline EpisodeSplit segment_episodes(std::string_view trace,
                                     const std::vector<std::string>& markers) {
    if (markers.empty()) throw Error("segment_episodes: marker list is empty");
    for (const auto& m : markers) {
        if (m.empty()) throw Error("segment_episodes: empty marker string");
    }

    EpisodeSplit split;
    if (trace.empty()) return split;

    // Collect sentence-starting hits; at most one boundary per position.
    std::vector<std::pair<std::size_t, const std::string*>> hits;
    for (const auto& marker : markers) {
        std::size_t from = 0;
        while (true) {
            const std::size_t pos = trace.find(marker, from);
            if (pos == std::string_view::npos) break;
            if (detail::begins_sentence(trace, pos)) {
                hits.emplace_back(pos, &marker);
            }
            from = pos + 1;
        }
    }
    std::sort(hits.begin(), hits.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    std::size_t begin = 0;
    for (const auto& [pos, marker] : hits) {
        if (pos == begin) continue;  // marker at an episode start opens nothing new
        split.episodes.emplace_back(begin, pos);
        split.markers_hit.emplace_back(*marker, pos);
        begin = pos;
    }
    split.episodes.emplace_back(begin, trace.size());
    return split;
}

// Text of the first k episodes. k == 0 yields the empty string.
inline std::string prefix_text(const EpisodeSplit& split, std::string_view trace,
                               std::size_t k) {
    if (k > split.episodes.size()) {
        throw RangeError("prefix_text: k = " + std::to_string(k) + " exceeds episode count " +
                         std::to_string(split.episodes.size()));
    }
    if (k == 0) return std::string();
    return std::string(trace.substr(0, split.episodes[k - 1].second));
}

// One marker per line; blank lines skipped, trailing carriage returns stripped.
inline std::vector<std::string> load_markers(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_markers: cannot open " + path);
    std::vector<std::string> markers;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) markers.push_back(line);
    }
    return markers;
}

}  // namespace stopgate
