#pragma once
// Rollouts and the metric suite: FRQ success rate, difference from the
// mean-stop baseline, optimal termination rate, discounted return, the RL
// reward, termination-rate curves, the representation probe, reward
// export, and percentile-bootstrap confidence intervals.
//
// stop_index is 1-based throughout (the t of the discounted objective);
// the label for a stop at t is the one with prefix_len == t.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stopgate/cfgen.hpp"
#include "stopgate/core.hpp"
#include "stopgate/parallel.hpp"
#include "stopgate/policy.hpp"
#include "stopgate/rng.hpp"

namespace stopgate {

struct EmptyPopulationError : Error {
    using Error::Error;
};

// Policy failed while deciding; carries the 1-based step.
struct RolloutError : Error {
    RolloutError(int at_step, const std::string& what)
        : Error("step " + std::to_string(at_step) + ": " + what), step(at_step) {}
    int step;
};

enum class RolloutMode { Deterministic, Sampled };

// ---------------------------------------------------------------------------
// Rollout

// Feeds prefixes 1..horizon_T to the policy, stopping at the first
// terminate. Deterministic mode applies the p >= 0.5 rule the policy
// recorded in its action; sampled mode draws a Bernoulli from
// p_terminate per step. Never terminating forces a stop at the horizon.
inline Rollout rollout(const Policy& policy, const Trajectory& t, RolloutMode mode,
                       int horizon_T, std::uint64_t seed = 0) {
    if (horizon_T < 1 || horizon_T > static_cast<int>(t.observations.size())) {
        throw RangeError("rollout: horizon_T " + std::to_string(horizon_T) +
                         " outside [1, " + std::to_string(t.observations.size()) + "]");
    }
    for (int step = 1; step <= horizon_T; ++step) {
        if (t.label_for_prefix(step) == nullptr) {
            throw StructuralError("rollout: trajectory " + t.problem_id +
                                  " missing label for prefix " + std::to_string(step));
        }
    }

    Rollout r;
    r.problem_id = t.problem_id;
    Rng rng(derive_seed(seed, t.problem_id + "#rollout"));
    int stop = horizon_T;
    bool terminated = false;
    for (int step = 1; step <= horizon_T; ++step) {
        Decision d;
        try {
            d = policy.decide(make_prefix_view(t, step, horizon_T));
        } catch (const std::exception& e) {
            throw RolloutError(step, e.what());
        }
        r.per_step_p_terminate.push_back(d.p_terminate);
        const bool stop_now = mode == RolloutMode::Deterministic
                                  ? d.action == Action::Terminate
                                  : rng.bernoulli(d.p_terminate);
        if (stop_now) {
            stop = step;
            terminated = true;
            break;
        }
    }
    r.stop_index = stop;
    r.forced = !terminated;
    r.success_at_stop = t.label_for_prefix(stop)->p_term;
    return r;
}

// ---------------------------------------------------------------------------
// Metrics

inline double frq_sr(const std::vector<Rollout>& rollouts) {
    if (rollouts.empty()) throw EmptyPopulationError("frq_sr: no rollouts");
    double sum = 0.0;
    for (const Rollout& r : rollouts) sum += r.success_at_stop;
    return sum / static_cast<double>(rollouts.size());
}

inline double mean_stop_index(const std::vector<Rollout>& rollouts) {
    if (rollouts.empty()) throw EmptyPopulationError("mean_stop_index: no rollouts");
    double sum = 0.0;
    for (const Rollout& r : rollouts) sum += static_cast<double>(r.stop_index);
    return sum / static_cast<double>(rollouts.size());
}

namespace detail {

inline std::map<std::string, const Trajectory*> index_by_id(
    const std::vector<Trajectory>& trajectories) {
    std::map<std::string, const Trajectory*> by_id;
    for (const Trajectory& t : trajectories) by_id[t.problem_id] = &t;
    return by_id;
}

inline const Trajectory& trajectory_for(const std::map<std::string, const Trajectory*>& by_id,
                                        const std::string& problem_id) {
    const auto it = by_id.find(problem_id);
    if (it == by_id.end()) {
        throw StructuralError("metric: rollout references unknown trajectory " + problem_id);
    }
    return *it->second;
}

// p_term at stop position `want`, clamped to the trajectory's labeled
// range (sparse labels snap to the nearest labeled prefix at or below).
inline double p_term_at(const Trajectory& t, int want, bool* clamped) {
    if (t.labels.empty()) {
        throw StructuralError("metric: trajectory " + t.problem_id + " has no labels");
    }
    const PrefixLabel* best = nullptr;
    int max_prefix = 0;
    for (const auto& l : t.labels) {
        max_prefix = std::max(max_prefix, l.prefix_len);
        if (l.prefix_len <= want &&
            (best == nullptr || l.prefix_len > best->prefix_len)) {
            best = &l;
        }
    }
    if (want > max_prefix && clamped != nullptr) *clamped = true;
    if (best == nullptr) {  // want below every labeled prefix: snap up
        for (const auto& l : t.labels) {
            if (best == nullptr || l.prefix_len < best->prefix_len) best = &l;
        }
        if (clamped != nullptr) *clamped = true;
    }
    return best->p_term;
}

}  // namespace detail

// FRQ SR minus the success rate of a baseline that stops every trajectory
// at the policies' mean stop index m, stochastically rounded: floor(m)
// with weight ceil(m) - m and ceil(m) with weight m - floor(m). The
// baseline is evaluated in closed form (probability-weighted), not by
// sampling.
inline double diff_from_mean(const std::vector<Rollout>& rollouts,
                             const std::vector<Trajectory>& trajectories) {
    if (rollouts.empty()) throw EmptyPopulationError("diff_from_mean: no rollouts");
    const auto by_id = detail::index_by_id(trajectories);
    const double m = mean_stop_index(rollouts);
    const int lo = static_cast<int>(std::floor(m));
    const int hi = static_cast<int>(std::ceil(m));
    const double w_hi = m - static_cast<double>(lo);

    double baseline_sum = 0.0;
    int clamps = 0;
    for (const Rollout& r : rollouts) {
        const Trajectory& t = detail::trajectory_for(by_id, r.problem_id);
        bool clamped = false;
        const double p_lo = detail::p_term_at(t, lo, &clamped);
        const double p_hi = w_hi > 0.0 ? detail::p_term_at(t, hi, &clamped) : p_lo;
        baseline_sum += (1.0 - w_hi) * p_lo + w_hi * p_hi;
        if (clamped) ++clamps;
    }
    if (clamps > 0) {
        std::cerr << "[stopgate] diff_from_mean: mean stop " << m << " clamped to label range"
                  << " on " << clamps << " trajectories\n";
    }
    return frq_sr(rollouts) - baseline_sum / static_cast<double>(rollouts.size());
}

struct OtrResult {
    std::optional<double> rate;  // absent when no trajectory has a breakpoint
    int n_with_breakpoint = 0;
};

// Fraction of breakpoint-bearing trajectories whose rollout stopped
// exactly at the breakpoint. Medical/synthetic trajectories use the jump
// detector (with baseline when present); math trajectories use the
// strict terminate-vs-continue detector.
inline OtrResult otr(const std::vector<Rollout>& rollouts,
                     const std::vector<Trajectory>& trajectories, double jump = 0.5) {
    const auto by_id = detail::index_by_id(trajectories);
    OtrResult result;
    int hits = 0;
    for (const Rollout& r : rollouts) {
        const Trajectory& t = detail::trajectory_for(by_id, r.problem_id);
        std::optional<int> bp;
        if (t.domain == Domain::Math) {
            bp = detect_math_breakpoint(t.labels);
        } else {
            const PrefixLabel* baseline =
                t.baseline_label.has_value() ? &*t.baseline_label : nullptr;
            bp = detect_breakpoint(t.labels, jump, baseline);
        }
        if (!bp.has_value()) continue;
        ++result.n_with_breakpoint;
        if (t.labels[static_cast<std::size_t>(*bp)].prefix_len == r.stop_index) ++hits;
    }
    if (result.n_with_breakpoint > 0) {
        result.rate = static_cast<double>(hits) / result.n_with_breakpoint;
    }
    return result;
}

// Mean of gamma^stop_index * success_at_stop (stop_index 1-based).
inline double discounted_return(const std::vector<Rollout>& rollouts, double gamma) {
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw RangeError("discounted_return: gamma must be in (0, 1]");
    }
    if (rollouts.empty()) throw EmptyPopulationError("discounted_return: no rollouts");
    double sum = 0.0;
    for (const Rollout& r : rollouts) {
        sum += std::pow(gamma, static_cast<double>(r.stop_index)) * r.success_at_stop;
    }
    return sum / static_cast<double>(rollouts.size());
}

// +1 for a correct decision (terminate at p >= 0.5, continue at p < 0.5),
// -1 otherwise.
inline int rl_reward(Action decision, double p_term) {
    if (!(p_term >= 0.0 && p_term <= 1.0)) {
        throw RangeError("rl_reward: p_term must be in [0, 1]");
    }
    const bool correct = decision == Action::Terminate ? p_term >= 0.5 : p_term < 0.5;
    return correct ? 1 : -1;
}

// ---------------------------------------------------------------------------
// Diagnostics

struct TermRateCurve {
    std::vector<double> p_terminate;   // one entry per queried prefix
    std::optional<int> fault_step;     // 1-based step where the policy failed
};

// p_terminate at every prefix without stopping. A policy failure yields a
// partial curve with the failing step recorded.
inline TermRateCurve term_rate_curve(const Policy& policy, const Trajectory& t) {
    TermRateCurve curve;
    const int n = static_cast<int>(t.observations.size());
    for (int step = 1; step <= n; ++step) {
        try {
            curve.p_terminate.push_back(policy.decide(make_prefix_view(t, step, n)).p_terminate);
        } catch (const std::exception&) {
            curve.fault_step = step;
            break;
        }
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Representation probe

struct ProbeReport {
    double train_acc = 0.0;
    double test_acc = 0.0;
    double train_fraction = 0.7;
    std::uint64_t seed = 0;
    int n_train = 0;
    int n_test = 0;
};

// Shuffles, splits floor(train_fraction * n) / rest, fits the same
// logistic trainer the policy module uses, and reports both accuracies.
inline ProbeReport probe_split_lr(const std::vector<std::vector<double>>& features,
                                  const std::vector<int>& labels,
                                  double train_fraction = 0.7, std::uint64_t seed = 0,
                                  const TrainHyper& hyper = {}) {
    const std::size_t n = features.size();
    if (labels.size() != n) throw RangeError("probe_split_lr: |features| != |labels|");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw RangeError("probe_split_lr: train_fraction must be in (0, 1)");
    }
    int pos = 0;
    int neg = 0;
    for (int v : labels) (v == 1 ? pos : neg) += 1;
    if (pos < 2 || neg < 2) {
        throw DegenerateDataset("probe_split_lr: need >= 2 examples per class");
    }
    for (const auto& f : features) {
        if (f.size() != features[0].size()) {
            throw StructuralError("probe_split_lr: inconsistent feature dimensions");
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "probe"));
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(i)));
        std::swap(order[i], order[j]);
    }

    const std::size_t n_train =
        static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
    if (n_train == 0 || n_train == n) {
        throw RangeError("probe_split_lr: split leaves an empty side");
    }
    std::vector<std::vector<double>> x_train, x_test;
    std::vector<int> y_train, y_test;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_train) {
            x_train.push_back(features[order[i]]);
            y_train.push_back(labels[order[i]]);
        } else {
            x_test.push_back(features[order[i]]);
            y_test.push_back(labels[order[i]]);
        }
    }

    const LinearModel model = train_logistic_raw(x_train, y_train, hyper);
    const auto accuracy = [&](const std::vector<std::vector<double>>& X,
                              const std::vector<int>& y) {
        int hits = 0;
        for (std::size_t i = 0; i < X.size(); ++i) {
            double z = model.bias;
            for (std::size_t j = 0; j < X[i].size(); ++j) z += model.weights[j] * X[i][j];
            if ((sigmoid(z) >= 0.5 ? 1 : 0) == y[i]) ++hits;
        }
        return static_cast<double>(hits) / static_cast<double>(X.size());
    };

    ProbeReport report;
    report.train_acc = accuracy(x_train, y_train);
    report.test_acc = accuracy(x_test, y_test);
    report.train_fraction = train_fraction;
    report.seed = seed;
    report.n_train = static_cast<int>(n_train);
    report.n_test = static_cast<int>(n - n_train);
    return report;
}

// ---------------------------------------------------------------------------
// RL reward export

struct RlRecord {
    std::string problem_id;
    int prefix_len = 0;
    Action decision = Action::Continue;
    double p_term = 0.0;
    int reward = 0;
    bool inconsistent = false;  // decision contradicts its own label
};

// True p_term for an example; the default resolver reads the label the
// pipeline recorded on the example.
using PTermResolver = std::function<std::optional<double>(const TerminationExample&)>;

inline std::vector<RlRecord> export_rl_dataset(const DatasetManifest& manifest,
                                               const PTermResolver& resolver = nullptr) {
    std::vector<RlRecord> records;
    records.reserve(manifest.examples.size());
    for (const TerminationExample& e : manifest.examples) {
        std::optional<double> p = resolver ? resolver(e) : e.label_p_term;
        if (!p.has_value() && resolver) p = e.label_p_term;
        if (!p.has_value()) {
            throw StructuralError("export_rl_dataset: no p_term for " + e.problem_id +
                                  " prefix " + std::to_string(e.prefix_len));
        }
        RlRecord rec;
        rec.problem_id = e.problem_id;
        rec.prefix_len = e.prefix_len;
        rec.decision = e.decision;
        rec.p_term = *p;
        rec.reward = rl_reward(e.decision, *p);
        rec.inconsistent = rec.reward < 0;
        records.push_back(std::move(rec));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Bootstrap

// Percentile bootstrap over item indices: metric_fn sees a resampled
// index multiset and returns the metric, or nullopt when undefined for
// that resample (such reps are skipped).
inline std::pair<double, double> bootstrap_ci(
    std::size_t n_items,
    const std::function<std::optional<double>(const std::vector<std::size_t>&)>& metric_fn,
    int resamples = 1000, std::uint64_t seed = 0) {
    if (n_items == 0) throw EmptyPopulationError("bootstrap_ci: empty population");
    if (resamples < 1) throw RangeError("bootstrap_ci: resamples must be >= 1");
    Rng rng(derive_seed(seed, "bootstrap"));
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(resamples));
    std::vector<std::size_t> indices(n_items);
    for (int rep = 0; rep < resamples; ++rep) {
        for (std::size_t i = 0; i < n_items; ++i) {
            indices[i] = static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(n_items) - 1));
        }
        const std::optional<double> v = metric_fn(indices);
        if (v.has_value()) values.push_back(*v);
    }
    if (values.empty()) throw EmptyPopulationError("bootstrap_ci: metric undefined in every resample");
    std::sort(values.begin(), values.end());
    const auto at_quantile = [&](double q) {
        const double pos = q * static_cast<double>(values.size() - 1);
        return values[static_cast<std::size_t>(std::llround(pos))];
    };
    return {at_quantile(0.025), at_quantile(0.975)};
}

// ---------------------------------------------------------------------------
// Whole-suite evaluation

struct EvalOptions {
    RolloutMode mode = RolloutMode::Deterministic;
    int horizon_T = 20;
    double gamma = 1.0;
    double jump_threshold = 0.5;
    std::uint64_t seed = 0;
    bool with_bootstrap = true;
    int bootstrap_resamples = 1000;
    int jobs = 1;
};

// Builds the policy per trajectory; constant policies ignore the argument.
using PolicyFactory = std::function<std::shared_ptr<const Policy>(const Trajectory&)>;

struct EvalResult {
    EvalReport report;
    std::vector<Rollout> rollouts;
};

inline EvalResult evaluate(const PolicyFactory& factory,
                           const std::vector<Trajectory>& trajectories,
                           const EvalOptions& opts) {
    if (trajectories.empty()) throw EmptyPopulationError("evaluate: no trajectories");

    EvalResult result;
    result.rollouts.resize(trajectories.size());
    parallel_for(trajectories.size(), opts.jobs, [&](std::size_t i) {
        const std::shared_ptr<const Policy> policy = factory(trajectories[i]);
        result.rollouts[i] =
            rollout(*policy, trajectories[i], opts.mode, opts.horizon_T, opts.seed);
    });

    EvalReport& report = result.report;
    report.gamma = opts.gamma;
    report.n_trajectories = static_cast<int>(trajectories.size());
    report.frq_sr = frq_sr(result.rollouts);
    report.frq_sr_diff_from_mean = diff_from_mean(result.rollouts, trajectories);
    report.mean_stop_index = mean_stop_index(result.rollouts);
    report.discounted_return = discounted_return(result.rollouts, opts.gamma);
    const OtrResult o = otr(result.rollouts, trajectories, opts.jump_threshold);
    report.otr = o.rate;
    report.n_with_breakpoint = o.n_with_breakpoint;

    if (opts.with_bootstrap) {
        report.frq_sr_ci = bootstrap_ci(
            result.rollouts.size(),
            [&](const std::vector<std::size_t>& idx) -> std::optional<double> {
                double sum = 0.0;
                for (std::size_t i : idx) sum += result.rollouts[i].success_at_stop;
                return sum / static_cast<double>(idx.size());
            },
            opts.bootstrap_resamples, opts.seed);
        if (o.rate.has_value()) {
            const auto by_id = detail::index_by_id(trajectories);
            // Precompute per-rollout breakpoint hits so resamples are cheap.
            std::vector<int> state(result.rollouts.size(), -1);  // -1 none, 0 miss, 1 hit
            for (std::size_t i = 0; i < result.rollouts.size(); ++i) {
                const Rollout& r = result.rollouts[i];
                const Trajectory& t = detail::trajectory_for(by_id, r.problem_id);
                std::optional<int> bp;
                if (t.domain == Domain::Math) {
                    bp = detect_math_breakpoint(t.labels);
                } else {
                    const PrefixLabel* baseline =
                        t.baseline_label.has_value() ? &*t.baseline_label : nullptr;
                    bp = detect_breakpoint(t.labels, opts.jump_threshold, baseline);
                }
                if (bp.has_value()) {
                    state[i] = t.labels[static_cast<std::size_t>(*bp)].prefix_len ==
                                       r.stop_index
                                   ? 1
                                   : 0;
                }
            }
            report.otr_ci = bootstrap_ci(
                result.rollouts.size(),
                [&](const std::vector<std::size_t>& idx) -> std::optional<double> {
                    int with_bp = 0;
                    int hits = 0;
                    for (std::size_t i : idx) {
                        if (state[i] >= 0) {
                            ++with_bp;
                            hits += state[i];
                        }
                    }
                    if (with_bp == 0) return std::nullopt;
                    return static_cast<double>(hits) / with_bp;
                },
                opts.bootstrap_resamples, opts.seed);
        }
    }
    return result;
}

inline EvalResult evaluate(std::shared_ptr<const Policy> policy,
                           const std::vector<Trajectory>& trajectories,
                           const EvalOptions& opts) {
    return evaluate([policy](const Trajectory&) { return policy; }, trajectories, opts);
}

}  // namespace stopgate
