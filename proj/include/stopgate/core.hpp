#pragma once
// Shared vocabulary: trajectories, prefix labels, termination decisions,
// dataset examples, error types, and structural validation.
//
// Indexing convention used throughout: observations are 0-indexed;
// prefix_len counts observations and is 1-based; a stop at step t means
// the policy terminated after seeing observations [0, t). The label for a
// stop at t lives at label index t-1 when labels are dense.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace stopgate {

inline constexpr const char* kVersion = "stopgate 0.1.0";

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Argument outside its documented range (indices, probabilities, ratios).
struct RangeError : Error {
    using Error::Error;
};

// Invalid run or generator configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Data violates a structural invariant (missing labels, ragged features).
struct StructuralError : Error {
    using Error::Error;
};

// Operation not available for this input mode (e.g. text without an embedder).
struct UnsupportedError : Error {
    using Error::Error;
};

// Operation not defined for the trajectory's domain.
struct UnsupportedDomainError : UnsupportedError {
    using UnsupportedError::UnsupportedError;
};

// Malformed input file; carries the 1-based line number.
struct ParseError : Error {
    ParseError(std::size_t line_number, const std::string& what)
        : Error("line " + std::to_string(line_number) + ": " + what), line(line_number) {}
    std::size_t line;
};

// Network-level failure (endpoint unreachable, timeout, HTTP 5xx). Retryable.
struct TransportError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Enums

enum class Domain { Medical, Math, Synthetic };
enum class ObservationKind { QuestionAnswer, ReasoningEpisode };
enum class Action { Continue, Terminate };
enum class Provenance {
    OriginalTerminate,
    CounterfactualContinue,
    ResampledContinue,
    EarlierPrefixContinue,
};

inline const char* to_string(Domain d) {
    switch (d) {
        case Domain::Medical: return "medical";
        case Domain::Math: return "math";
        case Domain::Synthetic: return "synthetic";
    }
    throw RangeError("unknown domain value");
}

inline const char* to_string(ObservationKind k) {
    switch (k) {
        case ObservationKind::QuestionAnswer: return "question_answer";
        case ObservationKind::ReasoningEpisode: return "reasoning_episode";
    }
    throw RangeError("unknown observation kind value");
}

inline const char* to_string(Action a) {
    return a == Action::Terminate ? "terminate" : "continue";
}

inline const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::OriginalTerminate: return "original_terminate";
        case Provenance::CounterfactualContinue: return "counterfactual_continue";
        case Provenance::ResampledContinue: return "resampled_continue";
        case Provenance::EarlierPrefixContinue: return "earlier_prefix_continue";
    }
    throw RangeError("unknown provenance value");
}

inline Domain domain_from_string(const std::string& s) {
    if (s == "medical") return Domain::Medical;
    if (s == "math") return Domain::Math;
    if (s == "synthetic") return Domain::Synthetic;
    throw RangeError("unknown domain: " + s);
}

inline ObservationKind observation_kind_from_string(const std::string& s) {
    if (s == "question_answer") return ObservationKind::QuestionAnswer;
    if (s == "reasoning_episode") return ObservationKind::ReasoningEpisode;
    throw RangeError("unknown observation kind: " + s);
}

inline Action action_from_string(const std::string& s) {
    if (s == "terminate") return Action::Terminate;
    if (s == "continue") return Action::Continue;
    throw RangeError("unknown action: " + s);
}

inline Provenance provenance_from_string(const std::string& s) {
    if (s == "original_terminate") return Provenance::OriginalTerminate;
    if (s == "counterfactual_continue") return Provenance::CounterfactualContinue;
    if (s == "resampled_continue") return Provenance::ResampledContinue;
    if (s == "earlier_prefix_continue") return Provenance::EarlierPrefixContinue;
    throw RangeError("unknown provenance: " + s);
}

// ---------------------------------------------------------------------------
// Data types

// One unit of interaction: a question-answer turn or a reasoning episode.
// Carries text, a feature vector, or both.
struct Observation {
    int index = 0;
    ObservationKind kind = ObservationKind::QuestionAnswer;
    std::optional<std::string> text;
    std::optional<std::vector<double>> features;
    std::optional<bool> is_key;  // synthetic domain: marks the decisive observation
};

// Estimated success probabilities for the prefix of the first
// `prefix_len` observations. p_cont is only populated in domains where a
// continue-and-finish success rate is measurable.
struct PrefixLabel {
    int prefix_len = 0;
    double p_term = 0.0;
    int n_term_samples = 0;
    std::optional<double> p_cont;
    std::optional<int> n_cont_samples;
};

struct Trajectory {
    std::string problem_id;
    std::string ground_truth;
    Domain domain = Domain::Synthetic;
    std::vector<Observation> observations;
    std::vector<PrefixLabel> labels;                // sorted by prefix_len
    std::optional<PrefixLabel> baseline_label;      // prefix_len == 0, pre-interaction

    // Label lookup by prefix length; labels may be sparse (subsampled).
    const PrefixLabel* label_for_prefix(int prefix_len) const {
        const std::size_t guess = static_cast<std::size_t>(prefix_len) - 1;
        if (prefix_len >= 1 && guess < labels.size() &&
            labels[guess].prefix_len == prefix_len) {
            return &labels[guess];
        }
        for (const auto& l : labels) {
            if (l.prefix_len == prefix_len) return &l;
        }
        return nullptr;
    }
};

// A policy's verdict for one prefix.
struct Decision {
    Action action = Action::Continue;
    double p_terminate = 0.0;
    std::optional<double> confidence;
    std::optional<std::string> rationale;
};

// One supervised example for termination training.
struct TerminationExample {
    std::string problem_id;
    int prefix_len = 0;
    Action decision = Action::Continue;
    Provenance provenance = Provenance::OriginalTerminate;
    std::optional<std::vector<double>> features;
    std::optional<std::string> rationale;
    std::optional<int> confidence_pct;
    // Success probability the example's prefix was labeled with, kept so
    // that reward export and postcondition checks need no trajectory join.
    std::optional<double> label_p_term;
};

// A minimally differing (terminate, continue) pair of examples from one
// trajectory: one perturbed observation (medical) or a truncated suffix (math).
struct CounterfactualPair {
    TerminationExample positive;  // decision == terminate
    TerminationExample negative;  // decision == continue
    std::optional<int> edit_index;               // medical: the single perturbed step
    std::optional<std::pair<int, int>> edit_span; // math: removed suffix [begin, end)
    int attempts_used = 0;
    // The observation that replaced the original at edit_index, kept so the
    // perturbed prefix can be reconstructed and re-checked without re-running
    // the perturber.
    std::optional<Observation> replacement;
};

// Result of running a policy over one trajectory's prefixes.
struct Rollout {
    std::string problem_id;
    int stop_index = 1;       // 1-based count of observations consumed
    bool forced = false;      // hit the horizon without terminating
    double success_at_stop = 0.0;
    std::vector<double> per_step_p_terminate;
};

struct EvalReport {
    double frq_sr = 0.0;
    double frq_sr_diff_from_mean = 0.0;
    std::optional<double> otr;  // absent when no trajectory has a breakpoint
    double mean_stop_index = 0.0;
    double discounted_return = 0.0;
    double gamma = 1.0;
    int n_trajectories = 0;
    int n_with_breakpoint = 0;
    std::optional<std::pair<double, double>> frq_sr_ci;  // percentile bootstrap
    std::optional<std::pair<double, double>> otr_ci;
};

// ---------------------------------------------------------------------------
// Index conversion

// Stop step t (1-based prefix length) -> dense label index.
inline int label_index_for_stop(int stop_index) {
    if (stop_index < 1) throw RangeError("stop_index must be >= 1");
    return stop_index - 1;
}

// Dense label index -> stop step.
inline int stop_index_for_label(int label_index) {
    if (label_index < 0) throw RangeError("label index must be >= 0");
    return label_index + 1;
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {
inline void check_probability(double p, const std::string& field,
                              std::vector<std::string>& out) {
    if (!(p >= 0.0 && p <= 1.0)) {
        out.push_back(field + ": probability " + std::to_string(p) + " outside [0, 1]");
    }
}
}  // namespace detail

// Structural invariants for a fully labeled trajectory. Returns one
// message per violation, each naming the offending field; empty means valid.
inline std::vector<std::string> validate_trajectory(const Trajectory& t) {
    std::vector<std::string> out;
    if (t.problem_id.empty()) out.push_back("problem_id: empty");
    if (t.observations.empty()) out.push_back("observations: empty");

    for (std::size_t i = 0; i < t.observations.size(); ++i) {
        const Observation& o = t.observations[i];
        const std::string at = "observations[" + std::to_string(i) + "]";
        if (o.index != static_cast<int>(i)) {
            out.push_back(at + ".index: expected " + std::to_string(i) + ", got " +
                          std::to_string(o.index));
        }
        if (!o.text.has_value() && !o.features.has_value()) {
            out.push_back(at + ": neither text nor features present");
        }
    }

    if (t.labels.size() != t.observations.size()) {
        out.push_back("labels length: expected " + std::to_string(t.observations.size()) +
                      " (one per observation), got " + std::to_string(t.labels.size()));
    }
    const std::size_t n = std::min(t.labels.size(), t.observations.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (t.labels[i].prefix_len != static_cast<int>(i) + 1) {
            out.push_back("labels[" + std::to_string(i) + "].prefix_len: expected " +
                          std::to_string(i + 1) + ", got " +
                          std::to_string(t.labels[i].prefix_len));
        }
    }
    for (std::size_t i = 0; i < t.labels.size(); ++i) {
        const PrefixLabel& l = t.labels[i];
        const std::string at = "labels[" + std::to_string(i) + "]";
        detail::check_probability(l.p_term, at + ".p_term", out);
        if (l.n_term_samples < 1) {
            out.push_back(at + ".n_term_samples: must be >= 1, got " +
                          std::to_string(l.n_term_samples));
        }
        if (l.p_cont.has_value()) detail::check_probability(*l.p_cont, at + ".p_cont", out);
        if (l.n_cont_samples.has_value() && *l.n_cont_samples < 1) {
            out.push_back(at + ".n_cont_samples: must be >= 1, got " +
                          std::to_string(*l.n_cont_samples));
        }
    }

    if (t.baseline_label.has_value()) {
        const PrefixLabel& b = *t.baseline_label;
        if (b.prefix_len != 0) {
            out.push_back("baseline_label.prefix_len: expected 0, got " +
                          std::to_string(b.prefix_len));
        }
        detail::check_probability(b.p_term, "baseline_label.p_term", out);
        if (b.n_term_samples < 1) {
            out.push_back("baseline_label.n_term_samples: must be >= 1, got " +
                          std::to_string(b.n_term_samples));
        }
    }
    return out;
}

}  // namespace stopgate
