#pragma once
// Counterfactual dataset pipeline: breakpoint detection, minimally
// differing terminate/continue pairs, class balancing, and rationale /
// confidence augmentation.

#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stopgate/core.hpp"
#include "stopgate/features.hpp"
#include "stopgate/labeling.hpp"
#include "stopgate/rng.hpp"

namespace stopgate {

// Counterfactual perturbation loop used up its attempt budget.
struct CfExhausted : Error {
    CfExhausted(const std::string& id, int attempts)
        : Error("counterfactual exhausted after " + std::to_string(attempts) +
                " attempts on " + id),
          problem_id(id),
          attempts_used(attempts) {}
    std::string problem_id;
    int attempts_used;
};

// Continue/terminate ratio unreachable (nothing to resample against).
struct BalanceImpossible : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Breakpoint detection

// Smallest label index i where p_term rises by at least `jump` over the
// previous prefix. With a baseline label (the empty prefix), index 0 is
// eligible using baseline.p_term as the predecessor; otherwise the scan
// starts at 1. Returns nullopt when no index qualifies.
inline std::optional<int> detect_breakpoint(const std::vector<PrefixLabel>& labels,
                                            double jump = 0.5,
                                            const PrefixLabel* baseline = nullptr) {
    if (!(jump > 0.0 && jump <= 1.0)) {
        throw RangeError("detect_breakpoint: jump must be in (0, 1]");
    }
    if (labels.empty()) return std::nullopt;
    const int start = baseline != nullptr ? 0 : 1;
    for (int i = start; i < static_cast<int>(labels.size()); ++i) {
        const double prev = i == 0 ? baseline->p_term : labels[i - 1].p_term;
        if (labels[i].p_term - prev >= jump) return i;
    }
    return std::nullopt;
}

// Smallest label index where terminating now strictly beats continuing.
inline std::optional<int> detect_math_breakpoint(const std::vector<PrefixLabel>& labels) {
    for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
        if (!labels[i].p_cont.has_value()) {
            throw StructuralError("detect_math_breakpoint: labels[" + std::to_string(i) +
                                  "] has no p_cont");
        }
        if (labels[i].p_term > *labels[i].p_cont) return i;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Counterfactual pairs

// Produces a replacement for observation `index`; `attempt` (1-based)
// varies the candidate across retries.
using Perturber = std::function<Observation(const Trajectory&, int index, int attempt)>;

inline Perturber make_synth_perturber(std::uint64_t seed) {
    return [seed](const Trajectory& t, int index, int attempt) {
        return synth_perturb(t, index, derive_seed(seed, "attempt",
                                                   static_cast<std::uint64_t>(attempt)));
    };
}

namespace detail {
// Features for the first prefix_len observations, or nullopt when the
// prefix is not featurizable (text-mode trajectories without an embedder).
inline std::optional<std::vector<double>> try_featurize(const Trajectory& t, int prefix_len,
                                                        const Embedder& embedder = nullptr) {
    try {
        const std::span<const Observation> prefix(t.observations.data(),
                                                  static_cast<std::size_t>(prefix_len));
        return featurize(prefix, static_cast<int>(t.observations.size()), embedder);
    } catch (const UnsupportedError&) {
        return std::nullopt;
    }
}
}  // namespace detail

// Perturbs the observation at breakpoint index bp until the relabeled
// success of the perturbed prefix falls below `low`. The positive keeps
// the original prefix (terminate); the negative differs only at bp
// (continue). Throws CfExhausted when max_attempts candidates all stay at
// or above `low`.
inline CounterfactualPair make_counterfactual_medical(
    const Trajectory& t, int bp, const Perturber& perturber, const SuccessProvider& provider,
    double low = 0.3, int max_attempts = 8, std::uint64_t seed = 0, double jump = 0.5,
    int n_relabel_samples = 50) {
    if (bp < 0 || bp >= static_cast<int>(t.labels.size())) {
        throw RangeError("make_counterfactual_medical: bp " + std::to_string(bp) +
                         " outside label range");
    }
    const int prefix_len = t.labels[bp].prefix_len;
    if (prefix_len != bp + 1) {
        throw StructuralError("make_counterfactual_medical: labels are sparse at index " +
                              std::to_string(bp) + "; dense labels required");
    }
    const PrefixLabel* baseline =
        t.baseline_label.has_value() ? &*t.baseline_label : nullptr;
    const double prev = bp == 0 ? (baseline != nullptr ? baseline->p_term : 2.0)
                                : t.labels[bp - 1].p_term;
    if (t.labels[bp].p_term - prev < jump) {
        throw RangeError("make_counterfactual_medical: index " + std::to_string(bp) +
                         " is not a breakpoint at jump " + std::to_string(jump));
    }
    if (max_attempts < 1) throw RangeError("make_counterfactual_medical: max_attempts >= 1");

    CounterfactualPair pair;
    pair.positive.problem_id = t.problem_id;
    pair.positive.prefix_len = prefix_len;
    pair.positive.decision = Action::Terminate;
    pair.positive.provenance = Provenance::OriginalTerminate;
    pair.positive.features = detail::try_featurize(t, prefix_len);
    pair.positive.label_p_term = t.labels[bp].p_term;
    pair.edit_index = bp;

    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
        Observation candidate = perturber(t, bp, attempt);
        candidate.index = bp;
        Trajectory perturbed = t;
        perturbed.observations[bp] = candidate;

        double p_cf;
        if (provider.is_exact()) {
            p_cf = provider.exact_p_term(perturbed, prefix_len);
        } else {
            p_cf = estimate_success(provider, perturbed, prefix_len, n_relabel_samples,
                                    derive_seed(seed, "relabel",
                                                static_cast<std::uint64_t>(attempt)))
                       .p_term;
        }
        if (p_cf < low) {
            pair.negative.problem_id = t.problem_id;
            pair.negative.prefix_len = prefix_len;
            pair.negative.decision = Action::Continue;
            pair.negative.provenance = Provenance::CounterfactualContinue;
            pair.negative.features = detail::try_featurize(perturbed, prefix_len);
            pair.negative.label_p_term = p_cf;
            pair.attempts_used = attempt;
            pair.replacement = std::move(candidate);
            return pair;
        }
    }
    throw CfExhausted(t.problem_id, max_attempts);
}

// Math-mode counterfactual: an earlier prefix of a trajectory whose
// breakpoint label index is bp becomes a continue example at
// prefix_len = bp - offset.
inline TerminationExample make_counterfactual_math(const Trajectory& t, int bp,
                                                   int offset = 1) {
    if (offset < 1 || bp - offset < 1) {
        throw RangeError("make_counterfactual_math: offset " + std::to_string(offset) +
                         " with bp " + std::to_string(bp) +
                         " leaves no valid earlier prefix");
    }
    const int prefix_len = bp - offset;
    if (prefix_len > static_cast<int>(t.observations.size())) {
        throw RangeError("make_counterfactual_math: prefix_len " + std::to_string(prefix_len) +
                         " exceeds observation count");
    }
    TerminationExample e;
    e.problem_id = t.problem_id;
    e.prefix_len = prefix_len;
    e.decision = Action::Continue;
    e.provenance = Provenance::EarlierPrefixContinue;
    e.features = detail::try_featurize(t, prefix_len);
    if (const PrefixLabel* l = t.label_for_prefix(prefix_len)) e.label_p_term = l->p_term;
    return e;
}

// ---------------------------------------------------------------------------
// Balancing

// A (trajectory, prefix) eligible for continue-resampling: any prefix
// strictly before its trajectory's breakpoint.
struct ResampleCandidate {
    std::string problem_id;
    int prefix_len = 0;
    std::optional<std::vector<double>> features;
    std::optional<double> label_p_term;
};

// All prefixes strictly before the breakpoint (label index bp) of t.
inline std::vector<ResampleCandidate> make_resample_pool(const Trajectory& t, int bp) {
    std::vector<ResampleCandidate> pool;
    for (int prefix_len = 1; prefix_len <= bp; ++prefix_len) {
        ResampleCandidate c;
        c.problem_id = t.problem_id;
        c.prefix_len = prefix_len;
        c.features = detail::try_featurize(t, prefix_len);
        if (const PrefixLabel* l = t.label_for_prefix(prefix_len)) c.label_p_term = l->p_term;
        pool.push_back(std::move(c));
    }
    return pool;
}

struct ProvenanceCounts {
    int original_terminate = 0;
    int counterfactual_continue = 0;
    int resampled_continue = 0;
    int earlier_prefix_continue = 0;

    int total() const {
        return original_terminate + counterfactual_continue + resampled_continue +
               earlier_prefix_continue;
    }
    void add(Provenance p) {
        switch (p) {
            case Provenance::OriginalTerminate: ++original_terminate; break;
            case Provenance::CounterfactualContinue: ++counterfactual_continue; break;
            case Provenance::ResampledContinue: ++resampled_continue; break;
            case Provenance::EarlierPrefixContinue: ++earlier_prefix_continue; break;
        }
    }
};

struct DatasetManifest {
    std::vector<TerminationExample> examples;
    double continue_ratio = 0.8;   // target ratio the balancer was run with
    double jump_threshold = 0.5;
    double low_threshold = 0.3;
    std::string marker_list_hash;
    std::uint64_t seed = 0;
    ProvenanceCounts counts;
};

// Thresholds and provenance metadata recorded into the manifest.
struct ManifestMeta {
    double jump_threshold = 0.5;
    double low_threshold = 0.3;
    std::string marker_list_hash;
};

// Appends uniformly resampled (with replacement) pre-breakpoint prefixes
// as continue examples until the continue fraction reaches
// continue_ratio, stopping at the smallest such count. Never removes or
// relabels existing examples.
inline DatasetManifest balance_dataset(std::vector<TerminationExample> examples,
                                       const std::vector<ResampleCandidate>& pool,
                                       double continue_ratio, std::uint64_t seed,
                                       const ManifestMeta& meta = {}) {
    if (!(continue_ratio > 0.0 && continue_ratio < 1.0)) {
        throw RangeError("balance_dataset: continue_ratio must be in (0, 1)");
    }
    long long n_continue = 0;
    long long n_terminate = 0;
    for (const auto& e : examples) {
        (e.decision == Action::Continue ? n_continue : n_terminate) += 1;
    }
    if (n_terminate == 0) {
        throw BalanceImpossible("balance_dataset: no terminate examples to balance against");
    }

    const long long n = n_continue + n_terminate;
    // Smallest x >= 0 with (n_continue + x) / (n + x) >= continue_ratio.
    long long x = 0;
    if (static_cast<double>(n_continue) < continue_ratio * static_cast<double>(n)) {
        x = static_cast<long long>(std::ceil(
            (continue_ratio * static_cast<double>(n) - static_cast<double>(n_continue)) /
            (1.0 - continue_ratio)));
        while (static_cast<double>(n_continue + x) <
               continue_ratio * static_cast<double>(n + x)) {
            ++x;
        }
        while (x > 0 && static_cast<double>(n_continue + x - 1) >=
                            continue_ratio * static_cast<double>(n + x - 1)) {
            --x;
        }
    }
    if (x > 0 && pool.empty()) {
        throw BalanceImpossible("balance_dataset: no earlier prefixes available to resample");
    }

    DatasetManifest manifest;
    manifest.continue_ratio = continue_ratio;
    manifest.jump_threshold = meta.jump_threshold;
    manifest.low_threshold = meta.low_threshold;
    manifest.marker_list_hash = meta.marker_list_hash;
    manifest.seed = seed;
    manifest.examples = std::move(examples);
    manifest.examples.reserve(manifest.examples.size() + static_cast<std::size_t>(x));

    Rng rng(derive_seed(seed, "balance"));
    for (long long i = 0; i < x; ++i) {
        const ResampleCandidate& c =
            pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
        TerminationExample e;
        e.problem_id = c.problem_id;
        e.prefix_len = c.prefix_len;
        e.decision = Action::Continue;
        e.provenance = Provenance::ResampledContinue;
        e.features = c.features;
        e.label_p_term = c.label_p_term;
        manifest.examples.push_back(std::move(e));
    }
    for (const auto& e : manifest.examples) manifest.counts.add(e.provenance);
    return manifest;
}

// ---------------------------------------------------------------------------
// Augmentation

// Produces an explanation for an example's decision. Real mode queries an
// external model; synthetic mode renders a deterministic template.
class RationaleProvider {
public:
    virtual ~RationaleProvider() = default;
    virtual std::string rationale_for(const TerminationExample& e) = 0;
};

// Template rationales for synthetic trajectories: names the key
// observation that the prefix supplied (terminate) or still lacks
// (continue).
class SyntheticRationaleProvider : public RationaleProvider {
public:
    explicit SyntheticRationaleProvider(const std::map<std::string, const Trajectory*>& by_id)
        : by_id_(by_id) {}

    std::string rationale_for(const TerminationExample& e) override {
        const auto it = by_id_.find(e.problem_id);
        if (it == by_id_.end()) {
            throw StructuralError("rationale: unknown trajectory " + e.problem_id);
        }
        int key_index = -1;
        for (const Observation& o : it->second->observations) {
            if (o.is_key.value_or(false)) {
                key_index = o.index;
                break;
            }
        }
        if (e.decision == Action::Terminate) {
            return "Observation " + std::to_string(key_index) +
                   " supplied the key information; the first " +
                   std::to_string(e.prefix_len) +
                   " observations are sufficient to answer, so terminate.";
        }
        return "The key information expected at observation " + std::to_string(key_index) +
               " is not available in the first " + std::to_string(e.prefix_len) +
               " observations, so continue gathering.";
    }

private:
    const std::map<std::string, const Trajectory*>& by_id_;
};

// Fills e.rationale from the provider, retrying transient failures.
// Exhausted retries log a skip and return the example unchanged.
inline TerminationExample augment_rationale(const TerminationExample& e,
                                            RationaleProvider& provider, int retries = 3) {
    if (e.rationale.has_value()) {
        throw RangeError("augment_rationale: rationale already set on " + e.problem_id);
    }
    for (int attempt = 1; attempt <= retries; ++attempt) {
        try {
            std::string r = provider.rationale_for(e);
            if (r.empty()) continue;  // degenerate reply counts as a failure
            TerminationExample out = e;
            out.rationale = std::move(r);
            return out;
        } catch (const TransportError&) {
            // transient; retry
        }
    }
    std::cerr << "[stopgate] rationale skipped for " << e.problem_id << " prefix "
              << e.prefix_len << " after " << retries << " attempts\n";
    return e;
}

inline std::string confidence_phrase(int pct) {
    return "Confidence in providing a diagnosis: " + std::to_string(pct) + "%";
}

// Attaches a half-up-rounded integer percent confidence.
inline TerminationExample augment_confidence(const TerminationExample& e, double p) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw RangeError("augment_confidence: p must be in [0, 1]");
    }
    TerminationExample out = e;
    out.confidence_pct = static_cast<int>(std::floor(100.0 * p + 0.5));
    return out;
}

}  // namespace stopgate
