#pragma once
// Termination policies and the behavioral-cloning trainer. Policies are
// label-blind: they decide from a PrefixView, which exposes observations
// only — the view type cannot reach labels.

#include <atomic>
#include <cmath>
#include <functional>
#include <iostream>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stopgate/cfgen.hpp"
#include "stopgate/core.hpp"
#include "stopgate/features.hpp"

namespace stopgate {

// Training data collapses to a single class.
struct DegenerateDataset : Error {
    using Error::Error;
};

// Loss became non-finite during training.
struct DivergenceError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Prefix views

// What a policy is allowed to see: the first prefix_len observations and
// the horizon. No labels.
struct PrefixView {
    std::span<const Observation> observations;
    int horizon_T = 0;

    int prefix_len() const { return static_cast<int>(observations.size()); }
};

inline PrefixView make_prefix_view(const Trajectory& t, int prefix_len, int horizon_T) {
    if (prefix_len < 1 || prefix_len > static_cast<int>(t.observations.size())) {
        throw RangeError("make_prefix_view: prefix_len " + std::to_string(prefix_len) +
                         " outside [1, " + std::to_string(t.observations.size()) + "]");
    }
    return PrefixView{
        std::span<const Observation>(t.observations.data(),
                                     static_cast<std::size_t>(prefix_len)),
        horizon_T};
}

class Policy {
public:
    virtual ~Policy() = default;
    virtual Decision decide(const PrefixView& view) const = 0;
};

// ---------------------------------------------------------------------------
// Baseline policies

// Terminates as soon as prefix_len reaches the budget k.
class FixedBudgetPolicy : public Policy {
public:
    explicit FixedBudgetPolicy(int k) : k_(k) {
        if (k < 1) throw RangeError("fixed_budget_policy: k must be >= 1");
    }
    Decision decide(const PrefixView& view) const override {
        Decision d;
        d.p_terminate = view.prefix_len() >= k_ ? 1.0 : 0.0;
        d.action = d.p_terminate >= 0.5 ? Action::Terminate : Action::Continue;
        return d;
    }
    int budget() const { return k_; }

private:
    int k_;
};

using ConfidenceFn = std::function<double(const PrefixView&)>;

// Terminates once a caller-supplied confidence score reaches theta.
// A failing confidence function forces continue and logs the fault.
class ThresholdPolicy : public Policy {
public:
    ThresholdPolicy(ConfidenceFn confidence_fn, double theta = 0.8)
        : confidence_fn_(std::move(confidence_fn)), theta_(theta) {
        if (!(theta > 0.0 && theta <= 1.0)) {
            throw RangeError("threshold_policy: theta must be in (0, 1]");
        }
        if (!confidence_fn_) throw RangeError("threshold_policy: confidence_fn is empty");
    }
    Decision decide(const PrefixView& view) const override {
        Decision d;
        double confidence;
        try {
            confidence = confidence_fn_(view);
        } catch (const std::exception& e) {
            fault_count_.fetch_add(1, std::memory_order_relaxed);
            std::cerr << "[stopgate] confidence fault at prefix " << view.prefix_len()
                      << ": " << e.what() << "; forcing continue\n";
            d.action = Action::Continue;
            d.p_terminate = 0.0;
            return d;
        }
        d.confidence = confidence;
        d.p_terminate = confidence >= theta_ ? 1.0 : 0.0;
        d.action = d.p_terminate >= 0.5 ? Action::Terminate : Action::Continue;
        return d;
    }
    int fault_count() const { return fault_count_.load(std::memory_order_relaxed); }

private:
    ConfidenceFn confidence_fn_;
    double theta_;
    mutable std::atomic<int> fault_count_{0};
};

// Brute-force maximizer of the discounted objective for one labeled
// trajectory: stops exactly at t* = argmax over t of gamma^t * p_term(t),
// earliest index on ties. Labels are read at construction time only; the
// decide path sees observations like any other policy.
class OraclePolicy : public Policy {
public:
    OraclePolicy(const Trajectory& t, double gamma) {
        if (!(gamma > 0.0 && gamma <= 1.0)) {
            throw RangeError("oracle_policy: gamma must be in (0, 1]");
        }
        const int n = static_cast<int>(t.observations.size());
        double best = -1.0;
        stop_target_ = 1;
        double discount = 1.0;
        for (int stop = 1; stop <= n; ++stop) {
            discount *= gamma;
            const PrefixLabel* label = t.label_for_prefix(stop);
            if (label == nullptr) {
                throw StructuralError("oracle_policy: trajectory " + t.problem_id +
                                      " missing label for prefix " + std::to_string(stop));
            }
            const double value = discount * label->p_term;
            if (value > best) {
                best = value;
                stop_target_ = stop;
            }
        }
    }
    Decision decide(const PrefixView& view) const override {
        Decision d;
        d.p_terminate = view.prefix_len() >= stop_target_ ? 1.0 : 0.0;
        d.action = d.p_terminate >= 0.5 ? Action::Terminate : Action::Continue;
        return d;
    }
    int stop_target() const { return stop_target_; }

private:
    int stop_target_ = 1;
};

inline std::shared_ptr<Policy> fixed_budget_policy(int k) {
    return std::make_shared<FixedBudgetPolicy>(k);
}
inline std::shared_ptr<Policy> threshold_policy(ConfidenceFn fn, double theta = 0.8) {
    return std::make_shared<ThresholdPolicy>(std::move(fn), theta);
}
inline std::shared_ptr<Policy> oracle_policy(const Trajectory& t, double gamma) {
    return std::make_shared<OraclePolicy>(t, gamma);
}

// ---------------------------------------------------------------------------
// Logistic trainer

struct TrainHyper {
    double learning_rate = 0.1;
    int epochs = 500;
    double l2 = 1e-4;
    std::uint64_t seed = 0;
};

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

namespace detail {
// softplus(x) = log(1 + e^x), computed without overflow.
inline double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}
}  // namespace detail

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad_w;
    double grad_b = 0.0;
};

// Mean cross-entropy plus 0.5 * l2 * |w|^2 (bias unregularized), with its
// exact gradient. Exposed so tests can check it against finite differences.
inline LossGrad logistic_loss_grad(const std::vector<std::vector<double>>& X,
                                   const std::vector<int>& y, const std::vector<double>& w,
                                   double b, double l2) {
    const std::size_t n = X.size();
    if (n == 0) throw RangeError("logistic_loss_grad: empty inputs");
    if (y.size() != n) throw RangeError("logistic_loss_grad: |X| != |y|");
    const std::size_t d = w.size();

    LossGrad out;
    out.grad_w.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (X[i].size() != d) {
            throw StructuralError("logistic_loss_grad: row " + std::to_string(i) +
                                  " has dimension " + std::to_string(X[i].size()) +
                                  ", expected " + std::to_string(d));
        }
        double z = b;
        for (std::size_t j = 0; j < d; ++j) z += w[j] * X[i][j];
        const double p = sigmoid(z);
        // y=1: -log p = softplus(-z); y=0: -log(1-p) = softplus(z)
        out.loss += y[i] == 1 ? detail::softplus(-z) : detail::softplus(z);
        const double residual = p - static_cast<double>(y[i]);
        for (std::size_t j = 0; j < d; ++j) out.grad_w[j] += residual * X[i][j];
        out.grad_b += residual;
    }
    out.loss /= static_cast<double>(n);
    out.grad_b /= static_cast<double>(n);
    double w2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        out.grad_w[j] = out.grad_w[j] / static_cast<double>(n) + l2 * w[j];
        w2 += w[j] * w[j];
    }
    out.loss += 0.5 * l2 * w2;
    return out;
}

struct LinearModel {
    std::vector<double> weights;
    double bias = 0.0;
};

// Full-batch gradient descent from zero initialization; deterministic.
inline LinearModel train_logistic_raw(const std::vector<std::vector<double>>& X,
                                      const std::vector<int>& y,
                                      const TrainHyper& hyper = {}) {
    if (X.empty()) throw DegenerateDataset("train_logistic: empty dataset");
    if (X.size() != y.size()) throw RangeError("train_logistic: |X| != |y|");
    bool any_pos = false;
    bool any_neg = false;
    for (int v : y) (v == 1 ? any_pos : any_neg) = true;
    if (!any_pos || !any_neg) {
        throw DegenerateDataset("train_logistic: single-class dataset");
    }
    if (hyper.epochs < 0) throw RangeError("train_logistic: epochs must be >= 0");
    if (hyper.learning_rate <= 0.0) throw RangeError("train_logistic: learning_rate > 0");

    LinearModel model;
    model.weights.assign(X[0].size(), 0.0);
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        const LossGrad g = logistic_loss_grad(X, y, model.weights, model.bias, hyper.l2);
        if (!std::isfinite(g.loss)) {
            throw DivergenceError("train_logistic: loss became non-finite at epoch " +
                                  std::to_string(epoch) +
                                  "; try a smaller learning_rate");
        }
        for (std::size_t j = 0; j < model.weights.size(); ++j) {
            model.weights[j] -= hyper.learning_rate * g.grad_w[j];
        }
        model.bias -= hyper.learning_rate * g.grad_b;
    }
    return model;
}

// Learned policy: p_terminate = sigmoid(w . featurize(prefix) + b),
// terminate at p >= 0.5 (ties terminate).
class LogisticPolicy : public Policy {
public:
    LogisticPolicy(LinearModel model, FeatureSpec spec, TrainHyper hyper,
                   std::string trained_on = "", Embedder embedder = nullptr)
        : model_(std::move(model)),
          spec_(std::move(spec)),
          hyper_(hyper),
          trained_on_(std::move(trained_on)),
          embedder_(std::move(embedder)) {
        if (static_cast<int>(model_.weights.size()) != spec_.dimension()) {
            throw StructuralError("logistic policy: weight dimension " +
                                  std::to_string(model_.weights.size()) +
                                  " != feature dimension " +
                                  std::to_string(spec_.dimension()));
        }
    }

    Decision decide(const PrefixView& view) const override {
        const std::vector<double> x = featurize(view.observations, view.horizon_T, embedder_);
        if (x.size() != model_.weights.size()) {
            throw StructuralError("logistic policy: input dimension " +
                                  std::to_string(x.size()) + " != weight dimension " +
                                  std::to_string(model_.weights.size()));
        }
        double z = model_.bias;
        for (std::size_t j = 0; j < x.size(); ++j) z += model_.weights[j] * x[j];
        Decision d;
        d.p_terminate = sigmoid(z);
        d.action = d.p_terminate >= 0.5 ? Action::Terminate : Action::Continue;
        return d;
    }

    const LinearModel& model() const { return model_; }
    const FeatureSpec& feature_spec() const { return spec_; }
    const TrainHyper& hyper() const { return hyper_; }
    const std::string& trained_on() const { return trained_on_; }

private:
    LinearModel model_;
    FeatureSpec spec_;
    TrainHyper hyper_;
    std::string trained_on_;
    Embedder embedder_;
};

// Behavioral cloning on a manifest: features -> decision. Every example
// must carry a feature vector.
inline std::shared_ptr<LogisticPolicy> train_logistic(const DatasetManifest& manifest,
                                                      const TrainHyper& hyper = {},
                                                      const std::string& trained_on = "") {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    X.reserve(manifest.examples.size());
    y.reserve(manifest.examples.size());
    for (const TerminationExample& e : manifest.examples) {
        if (!e.features.has_value()) {
            throw StructuralError("train_logistic: example " + e.problem_id + " prefix " +
                                  std::to_string(e.prefix_len) + " has no features");
        }
        X.push_back(*e.features);
        y.push_back(e.decision == Action::Terminate ? 1 : 0);
    }
    LinearModel model = train_logistic_raw(X, y, hyper);

    FeatureSpec spec;
    spec.mode = "vector";
    spec.obs_dim = static_cast<int>((model.weights.size() - 1) / 2);
    if (spec.dimension() != static_cast<int>(model.weights.size())) {
        throw StructuralError("train_logistic: feature dimension " +
                              std::to_string(model.weights.size()) +
                              " is not of the form 2d + 1");
    }
    return std::make_shared<LogisticPolicy>(std::move(model), spec, hyper, trained_on);
}

// Fraction of manifest examples the policy's 0.5-rule reproduces.
inline double training_accuracy(const LogisticPolicy& policy, const DatasetManifest& manifest) {
    if (manifest.examples.empty()) throw RangeError("training_accuracy: empty manifest");
    int hits = 0;
    for (const TerminationExample& e : manifest.examples) {
        if (!e.features.has_value()) {
            throw StructuralError("training_accuracy: example without features");
        }
        double z = policy.model().bias;
        for (std::size_t j = 0; j < e.features->size(); ++j) {
            z += policy.model().weights[j] * (*e.features)[j];
        }
        const Action predicted = sigmoid(z) >= 0.5 ? Action::Terminate : Action::Continue;
        if (predicted == e.decision) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(manifest.examples.size());
}

}  // namespace stopgate
