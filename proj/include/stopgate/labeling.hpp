#pragma once
// Prefix success labeling: success providers, whole-trajectory labeling,
// difficulty filters, and the synthetic environment (generator plus
// single-observation perturbation).

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "stopgate/core.hpp"
#include "stopgate/rng.hpp"

namespace stopgate {

// Labeling failure at one prefix; retryable when caused by transport.
struct LabelingError : Error {
    LabelingError(int prefix, bool retry, const std::string& what)
        : Error("prefix_len " + std::to_string(prefix) + ": " + what),
          prefix_len(prefix),
          retryable(retry) {}
    int prefix_len;
    bool retryable;
};

// ---------------------------------------------------------------------------
// Success providers

// Source of success-if-terminate (and optionally success-if-continue)
// signals for a prefix. Exact providers report the true probability;
// sampled providers yield i.i.d. Bernoulli draws for fixed (trajectory,
// prefix_len).
class SuccessProvider {
public:
    virtual ~SuccessProvider() = default;
    virtual bool is_exact() const = 0;
    virtual bool supports_continue() const { return false; }

    virtual double exact_p_term(const Trajectory&, int /*prefix_len*/) const {
        throw Error("provider is not exact");
    }
    virtual double exact_p_cont(const Trajectory&, int /*prefix_len*/) const {
        throw Error("provider has no continue-mode signal");
    }
    virtual bool sample_term(const Trajectory& t, int prefix_len, Rng& rng) const {
        return rng.bernoulli(exact_p_term(t, prefix_len));
    }
    virtual bool sample_cont(const Trajectory& t, int prefix_len, Rng& rng) const {
        return rng.bernoulli(exact_p_cont(t, prefix_len));
    }
};

// Ground-truth provider for synthetic trajectories: success is p_high once
// the key observation is inside the prefix, p_low before.
class SyntheticExactProvider : public SuccessProvider {
public:
    SyntheticExactProvider(double p_low, double p_high) : p_low_(p_low), p_high_(p_high) {}
    bool is_exact() const override { return true; }
    double exact_p_term(const Trajectory& t, int prefix_len) const override {
        const int n = std::min<int>(prefix_len, static_cast<int>(t.observations.size()));
        for (int j = 0; j < n; ++j) {
            if (t.observations[j].is_key.value_or(false)) return p_high_;
        }
        return p_low_;
    }

private:
    double p_low_, p_high_;
};

// Same curve, observed only through Bernoulli draws.
class SyntheticSampledProvider : public SuccessProvider {
public:
    SyntheticSampledProvider(double p_low, double p_high) : exact_(p_low, p_high) {}
    bool is_exact() const override { return false; }
    bool sample_term(const Trajectory& t, int prefix_len, Rng& rng) const override {
        return rng.bernoulli(exact_.exact_p_term(t, prefix_len));
    }

private:
    SyntheticExactProvider exact_;
};

// Test/adapter provider wrapping arbitrary curve functions.
class FunctionProvider : public SuccessProvider {
public:
    using Curve = std::function<double(const Trajectory&, int)>;
    FunctionProvider(Curve term, bool exact, Curve cont = nullptr)
        : term_(std::move(term)), cont_(std::move(cont)), exact_(exact) {}
    bool is_exact() const override { return exact_; }
    bool supports_continue() const override { return static_cast<bool>(cont_); }
    double exact_p_term(const Trajectory& t, int prefix_len) const override {
        if (!exact_) throw Error("provider is not exact");
        return term_(t, prefix_len);
    }
    double exact_p_cont(const Trajectory& t, int prefix_len) const override {
        if (!exact_ || !cont_) throw Error("provider has no exact continue-mode signal");
        return cont_(t, prefix_len);
    }
    bool sample_term(const Trajectory& t, int prefix_len, Rng& rng) const override {
        return rng.bernoulli(term_(t, prefix_len));
    }
    bool sample_cont(const Trajectory& t, int prefix_len, Rng& rng) const override {
        if (!cont_) throw Error("provider has no continue-mode signal");
        return rng.bernoulli(cont_(t, prefix_len));
    }

private:
    Curve term_, cont_;
    bool exact_;
};

// ---------------------------------------------------------------------------
// Labeling

// Success-if-terminate estimate for one prefix. Exact providers
// short-circuit to the true probability; sampled providers average
// n_samples Bernoulli draws from a stream derived from
// (seed, problem_id, prefix_len), so labeling order never matters.
inline PrefixLabel estimate_success(const SuccessProvider& provider, const Trajectory& t,
                                    int prefix_len, int n_samples, std::uint64_t seed) {
    if (prefix_len < 1 || prefix_len > static_cast<int>(t.observations.size())) {
        throw RangeError("estimate_success: prefix_len " + std::to_string(prefix_len) +
                         " outside [1, " + std::to_string(t.observations.size()) + "]");
    }
    if (n_samples < 1) throw RangeError("estimate_success: n_samples must be >= 1");

    PrefixLabel label;
    label.prefix_len = prefix_len;
    label.n_term_samples = n_samples;
    try {
        if (provider.is_exact()) {
            label.p_term = provider.exact_p_term(t, prefix_len);
        } else {
            Rng rng(derive_seed(seed, t.problem_id, static_cast<std::uint64_t>(prefix_len)));
            int successes = 0;
            for (int i = 0; i < n_samples; ++i) {
                if (provider.sample_term(t, prefix_len, rng)) ++successes;
            }
            label.p_term = static_cast<double>(successes) / n_samples;
        }
    } catch (const TransportError& e) {
        throw LabelingError(prefix_len, /*retry=*/true, e.what());
    }
    return label;
}

namespace detail {
inline double estimate_cont(const SuccessProvider& provider, const Trajectory& t,
                            int prefix_len, int n_samples, std::uint64_t seed) {
    try {
        if (provider.is_exact()) return provider.exact_p_cont(t, prefix_len);
        Rng rng(derive_seed(seed, t.problem_id + "#cont",
                            static_cast<std::uint64_t>(prefix_len)));
        int successes = 0;
        for (int i = 0; i < n_samples; ++i) {
            if (provider.sample_cont(t, prefix_len, rng)) ++successes;
        }
        return static_cast<double>(successes) / n_samples;
    } catch (const TransportError& e) {
        throw LabelingError(prefix_len, /*retry=*/true, e.what());
    }
}

// m prefix lengths evenly spaced over [1, n], always ending at n.
inline std::vector<int> evenly_spaced_prefixes(int n, int m) {
    m = std::min(m, n);
    std::vector<int> out;
    out.reserve(m);
    for (int j = 1; j <= m; ++j) {
        out.push_back(static_cast<int>((static_cast<long long>(j) * n + m - 1) / m));
    }
    return out;
}
}  // namespace detail

// Labels a trajectory's prefixes. Medical and synthetic trajectories get
// every prefix; math trajectories get `math_subsample` evenly spaced
// prefixes (the final one always included). p_cont is filled when the
// provider supports continue-mode.
inline Trajectory label_trajectory(const SuccessProvider& provider, const Trajectory& t,
                                   int n_samples, std::uint64_t seed,
                                   int math_subsample = 10) {
    if (t.observations.empty()) {
        throw StructuralError("label_trajectory: trajectory " + t.problem_id +
                              " has no observations");
    }
    const int n = static_cast<int>(t.observations.size());
    std::vector<int> prefixes;
    if (t.domain == Domain::Math) {
        prefixes = detail::evenly_spaced_prefixes(n, math_subsample);
    } else {
        prefixes.resize(n);
        for (int i = 0; i < n; ++i) prefixes[i] = i + 1;
    }

    Trajectory out = t;
    out.labels.clear();
    out.labels.reserve(prefixes.size());
    for (int prefix_len : prefixes) {
        PrefixLabel label = estimate_success(provider, t, prefix_len, n_samples, seed);
        if (provider.supports_continue()) {
            label.p_cont = detail::estimate_cont(provider, t, prefix_len, n_samples, seed);
            label.n_cont_samples = n_samples;
        }
        out.labels.push_back(label);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Difficulty filters

struct FilterResult {
    std::vector<Trajectory> kept;
    std::vector<std::pair<Trajectory, std::string>> dropped;  // with reason
};

namespace detail {
inline const PrefixLabel* final_label(const Trajectory& t) {
    const PrefixLabel* best = nullptr;
    for (const auto& l : t.labels) {
        if (best == nullptr || l.prefix_len > best->prefix_len) best = &l;
    }
    return best;
}
}  // namespace detail

// Keeps problems that are solvable with full information but not already
// solved by the first exchange: p_term(full) >= min_full_info and
// p_term(first) < max_single_turn. The first-exchange label is the
// baseline_label when present, else the prefix-1 label.
inline FilterResult filter_problems(const std::vector<Trajectory>& trajectories,
                                    double min_full_info = 0.2,
                                    double max_single_turn = 0.4) {
    FilterResult result;
    for (const Trajectory& t : trajectories) {
        const PrefixLabel* full = detail::final_label(t);
        if (full == nullptr) {
            throw StructuralError("filter_problems: trajectory " + t.problem_id +
                                  " has no final-prefix label");
        }
        const PrefixLabel* first =
            t.baseline_label.has_value() ? &*t.baseline_label : t.label_for_prefix(1);
        if (first == nullptr) {
            throw StructuralError("filter_problems: trajectory " + t.problem_id +
                                  " has neither baseline_label nor a prefix-1 label");
        }
        if (full->p_term < min_full_info) {
            result.dropped.emplace_back(t, "unsolvable");
        } else if (first->p_term >= max_single_turn) {
            result.dropped.emplace_back(t, "trivial");
        } else {
            result.kept.push_back(t);
        }
    }
    return result;
}

// Keeps evaluation trajectories where at least one prefix clears
// min_any_prefix; unlabeled trajectories are dropped with a warning.
inline std::vector<Trajectory> filter_eval_conversations(
    const std::vector<Trajectory>& trajectories, double min_any_prefix = 0.1,
    std::vector<std::string>* warnings = nullptr) {
    std::vector<Trajectory> kept;
    for (const Trajectory& t : trajectories) {
        if (t.labels.empty()) {
            if (warnings != nullptr) {
                warnings->push_back("trajectory " + t.problem_id +
                                    ": empty label list, dropped");
            }
            continue;
        }
        const bool any = std::any_of(t.labels.begin(), t.labels.end(), [&](const auto& l) {
            return l.p_term >= min_any_prefix;
        });
        if (any) kept.push_back(t);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Synthetic environment

// A horizon_T-step environment where exactly one observation (the key, at
// 1-based position k drawn from [key_min, key_max]) carries the decisive
// information: success-if-terminate is p_low before the key is seen and
// p_high from then on. Key observations get a mean offset of key_offset
// along a per-config random direction so a linear policy can find them.
struct SynthConfig {
    int horizon_T = 20;
    double p_low = 0.1;
    double p_high = 0.8;
    int key_min = 1;
    int key_max = 19;
    int feature_dim = 8;
    int label_noise_samples = 50;
    std::uint64_t seed = 0;
    double key_offset = 2.0;

    void validate() const {
        if (horizon_T < 2) throw ConfigError("horizon_T must be >= 2");
        if (!(p_low >= 0.0 && p_low < p_high && p_high <= 1.0)) {
            throw ConfigError("require 0 <= p_low < p_high <= 1");
        }
        if (key_min < 1 || key_max < key_min || key_max > horizon_T - 1) {
            throw ConfigError("key index range must lie within [1, horizon_T - 1]");
        }
        if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
        if (label_noise_samples < 1) throw ConfigError("label_noise_samples must be >= 1");
        if (key_offset < 0.0) throw ConfigError("key_offset must be >= 0");
    }
};

namespace detail {
inline std::vector<double> unit_direction(int dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> u(dim);
    double norm2 = 0.0;
    for (double& x : u) {
        x = rng.gaussian();
        norm2 += x * x;
    }
    const double norm = std::sqrt(norm2);
    if (norm > 0.0) {
        for (double& x : u) x /= norm;
    } else {
        u[0] = 1.0;
    }
    return u;
}
}  // namespace detail

// Deterministic generator: same (cfg, n) always yields the same batch.
inline std::vector<Trajectory> synth_generate(const SynthConfig& cfg, int n) {
    cfg.validate();
    if (n < 1) throw ConfigError("synth_generate: n must be >= 1");

    const std::vector<double> u =
        detail::unit_direction(cfg.feature_dim, derive_seed(cfg.seed, "direction"));

    std::vector<Trajectory> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(cfg.seed, "trajectory", static_cast<std::uint64_t>(i)));
        const int k = static_cast<int>(rng.uniform_int(cfg.key_min, cfg.key_max));

        Trajectory t;
        t.problem_id = "synth-" + std::to_string(cfg.seed) + "-" + std::to_string(i);
        t.ground_truth = "key@" + std::to_string(k);
        t.domain = Domain::Synthetic;
        t.observations.reserve(cfg.horizon_T);
        for (int j = 0; j < cfg.horizon_T; ++j) {
            Observation o;
            o.index = j;
            o.kind = ObservationKind::QuestionAnswer;
            o.is_key = (j == k - 1);
            std::vector<double> f(cfg.feature_dim);
            for (int d = 0; d < cfg.feature_dim; ++d) {
                f[d] = rng.gaussian();
                if (j == k - 1) f[d] += cfg.key_offset * u[d];
            }
            o.features = std::move(f);
            t.observations.push_back(std::move(o));
        }
        t.labels.reserve(cfg.horizon_T);
        for (int prefix_len = 1; prefix_len <= cfg.horizon_T; ++prefix_len) {
            PrefixLabel l;
            l.prefix_len = prefix_len;
            l.p_term = prefix_len < k ? cfg.p_low : cfg.p_high;
            l.n_term_samples = cfg.label_noise_samples;
            t.labels.push_back(l);
        }
        t.baseline_label = PrefixLabel{0, cfg.p_low, cfg.label_noise_samples, {}, {}};
        out.push_back(std::move(t));
    }
    return out;
}

// Replacement non-key observation for position `index`; swapping it in for
// the key observation flattens the true curve to p_low from there on.
inline Observation synth_perturb(const Trajectory& t, int index, std::uint64_t seed) {
    if (t.domain != Domain::Synthetic) {
        throw UnsupportedDomainError("synth_perturb: trajectory " + t.problem_id +
                                     " is not synthetic");
    }
    if (index < 0 || index >= static_cast<int>(t.observations.size())) {
        throw RangeError("synth_perturb: index " + std::to_string(index) + " outside [0, " +
                         std::to_string(t.observations.size()) + ")");
    }
    const Observation& original = t.observations[index];
    if (!original.features.has_value()) {
        throw StructuralError("synth_perturb: observation " + std::to_string(index) +
                              " has no feature vector");
    }
    Rng rng(derive_seed(seed, t.problem_id + "#perturb", static_cast<std::uint64_t>(index)));
    Observation o;
    o.index = index;
    o.kind = original.kind;
    o.is_key = false;
    std::vector<double> f(original.features->size());
    for (double& x : f) x = rng.gaussian();
    o.features = std::move(f);
    return o;
}

}  // namespace stopgate
