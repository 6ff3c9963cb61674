#pragma once
// File formats: trajectory JSONL, dataset manifest JSONL + header record,
// policy checkpoint JSON, evaluation report JSON, termination-rate CSV,
// and the run configuration. Every file embeds the resolved config hash
// and the version string; nothing embeds timestamps, so equal inputs
// produce byte-identical outputs.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stopgate/cfgen.hpp"
#include "stopgate/core.hpp"
#include "stopgate/eval.hpp"
#include "stopgate/hash.hpp"
#include "stopgate/policy.hpp"

namespace stopgate {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
    std::uint64_t seed = 0;
    double gamma = 1.0;
    double jump_threshold = 0.5;
    double low_threshold = 0.3;
    double continue_ratio = 0.8;
    int n_label_samples = 50;
    int horizon_T = 20;
    std::string marker_file;  // empty: built-in default marker list
    std::string llm_url;      // empty: STOPGATE_LLM_URL or unset
    std::string llm_key;      // empty: STOPGATE_LLM_KEY or unset
    std::string llm_model = "external-grader";
    // Synthetic environment
    double p_low = 0.1;
    double p_high = 0.8;
    int key_min = 1;
    int key_max = 19;
    int feature_dim = 8;
    double key_offset = 2.0;
    // Trainer
    double learning_rate = 0.1;
    int epochs = 500;
    double l2 = 1e-4;
    // Pipeline
    int max_cf_attempts = 8;
    int math_subsample = 10;
    int math_offset = 1;
    int jobs = 0;  // 0: one worker per logical core
    // Synthetic experiment
    int train_n = 300;
    int eval_n = 100;
    int n_seeds = 3;

    SynthConfig synth() const {
        SynthConfig s;
        s.horizon_T = horizon_T;
        s.p_low = p_low;
        s.p_high = p_high;
        s.key_min = key_min;
        s.key_max = key_max;
        s.feature_dim = feature_dim;
        s.label_noise_samples = n_label_samples;
        s.seed = seed;
        s.key_offset = key_offset;
        return s;
    }
    TrainHyper hyper() const { return TrainHyper{learning_rate, epochs, l2, seed}; }
};

inline json to_json(const RunConfig& c) {
    // llm_key is a secret and must not influence or appear in artifacts.
    return json{{"seed", c.seed},
                {"gamma", c.gamma},
                {"jump_threshold", c.jump_threshold},
                {"low_threshold", c.low_threshold},
                {"continue_ratio", c.continue_ratio},
                {"n_label_samples", c.n_label_samples},
                {"horizon_T", c.horizon_T},
                {"marker_file", c.marker_file},
                {"llm_url", c.llm_url},
                {"llm_model", c.llm_model},
                {"p_low", c.p_low},
                {"p_high", c.p_high},
                {"key_min", c.key_min},
                {"key_max", c.key_max},
                {"feature_dim", c.feature_dim},
                {"key_offset", c.key_offset},
                {"learning_rate", c.learning_rate},
                {"epochs", c.epochs},
                {"l2", c.l2},
                {"max_cf_attempts", c.max_cf_attempts},
                {"math_subsample", c.math_subsample},
                {"math_offset", c.math_offset},
                {"jobs", c.jobs},
                {"train_n", c.train_n},
                {"eval_n", c.eval_n},
                {"n_seeds", c.n_seeds}};
}

namespace detail {
template <typename T>
void maybe_get(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}
}  // namespace detail

inline RunConfig run_config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    RunConfig c;
    detail::maybe_get(j, "seed", c.seed);
    detail::maybe_get(j, "gamma", c.gamma);
    detail::maybe_get(j, "jump_threshold", c.jump_threshold);
    detail::maybe_get(j, "low_threshold", c.low_threshold);
    detail::maybe_get(j, "continue_ratio", c.continue_ratio);
    detail::maybe_get(j, "n_label_samples", c.n_label_samples);
    detail::maybe_get(j, "horizon_T", c.horizon_T);
    detail::maybe_get(j, "marker_file", c.marker_file);
    detail::maybe_get(j, "llm_url", c.llm_url);
    detail::maybe_get(j, "llm_key", c.llm_key);
    detail::maybe_get(j, "llm_model", c.llm_model);
    detail::maybe_get(j, "p_low", c.p_low);
    detail::maybe_get(j, "p_high", c.p_high);
    detail::maybe_get(j, "key_min", c.key_min);
    detail::maybe_get(j, "key_max", c.key_max);
    detail::maybe_get(j, "feature_dim", c.feature_dim);
    detail::maybe_get(j, "key_offset", c.key_offset);
    detail::maybe_get(j, "learning_rate", c.learning_rate);
    detail::maybe_get(j, "epochs", c.epochs);
    detail::maybe_get(j, "l2", c.l2);
    detail::maybe_get(j, "max_cf_attempts", c.max_cf_attempts);
    detail::maybe_get(j, "math_subsample", c.math_subsample);
    detail::maybe_get(j, "math_offset", c.math_offset);
    detail::maybe_get(j, "jobs", c.jobs);
    detail::maybe_get(j, "train_n", c.train_n);
    detail::maybe_get(j, "eval_n", c.eval_n);
    detail::maybe_get(j, "n_seeds", c.n_seeds);
    return c;
}

// Fingerprint of the resolved configuration (secrets excluded).
inline std::string config_hash(const RunConfig& c) { return sha256_hex(to_json(c).dump()); }

// ---------------------------------------------------------------------------
// Core type serialization

inline json to_json(const Observation& o) {
    json j{{"index", o.index}, {"kind", to_string(o.kind)}};
    if (o.text.has_value()) j["text"] = *o.text;
    if (o.features.has_value()) j["features"] = *o.features;
    if (o.is_key.has_value()) j["is_key"] = *o.is_key;
    return j;
}

inline Observation observation_from_json(const json& j) {
    Observation o;
    o.index = j.at("index").get<int>();
    o.kind = observation_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("text")) o.text = j.at("text").get<std::string>();
    if (j.contains("features")) o.features = j.at("features").get<std::vector<double>>();
    if (j.contains("is_key")) o.is_key = j.at("is_key").get<bool>();
    return o;
}

inline json to_json(const PrefixLabel& l) {
    json j{{"prefix_len", l.prefix_len},
           {"p_term", l.p_term},
           {"n_term_samples", l.n_term_samples}};
    if (l.p_cont.has_value()) j["p_cont"] = *l.p_cont;
    if (l.n_cont_samples.has_value()) j["n_cont_samples"] = *l.n_cont_samples;
    return j;
}

inline PrefixLabel prefix_label_from_json(const json& j) {
    PrefixLabel l;
    l.prefix_len = j.at("prefix_len").get<int>();
    l.p_term = j.at("p_term").get<double>();
    l.n_term_samples = j.at("n_term_samples").get<int>();
    if (j.contains("p_cont")) l.p_cont = j.at("p_cont").get<double>();
    if (j.contains("n_cont_samples")) l.n_cont_samples = j.at("n_cont_samples").get<int>();
    return l;
}

inline json to_json(const Trajectory& t) {
    json observations = json::array();
    for (const auto& o : t.observations) observations.push_back(to_json(o));
    json labels = json::array();
    for (const auto& l : t.labels) labels.push_back(to_json(l));
    json j{{"problem_id", t.problem_id},
           {"ground_truth", t.ground_truth},
           {"domain", to_string(t.domain)},
           {"observations", std::move(observations)},
           {"labels", std::move(labels)}};
    if (t.baseline_label.has_value()) j["baseline_label"] = to_json(*t.baseline_label);
    return j;
}

inline Trajectory trajectory_from_json(const json& j) {
    Trajectory t;
    t.problem_id = j.at("problem_id").get<std::string>();
    t.ground_truth = j.at("ground_truth").get<std::string>();
    t.domain = domain_from_string(j.at("domain").get<std::string>());
    for (const json& o : j.at("observations")) t.observations.push_back(observation_from_json(o));
    for (const json& l : j.at("labels")) t.labels.push_back(prefix_label_from_json(l));
    if (j.contains("baseline_label")) {
        t.baseline_label = prefix_label_from_json(j.at("baseline_label"));
    }
    return t;
}

inline json to_json(const TerminationExample& e) {
    json j{{"problem_id", e.problem_id},
           {"prefix_len", e.prefix_len},
           {"decision", to_string(e.decision)},
           {"provenance", to_string(e.provenance)}};
    if (e.features.has_value()) j["features"] = *e.features;
    if (e.rationale.has_value()) j["rationale"] = *e.rationale;
    if (e.confidence_pct.has_value()) j["confidence_pct"] = *e.confidence_pct;
    if (e.label_p_term.has_value()) j["label_p_term"] = *e.label_p_term;
    return j;
}

inline TerminationExample termination_example_from_json(const json& j) {
    TerminationExample e;
    e.problem_id = j.at("problem_id").get<std::string>();
    e.prefix_len = j.at("prefix_len").get<int>();
    e.decision = action_from_string(j.at("decision").get<std::string>());
    e.provenance = provenance_from_string(j.at("provenance").get<std::string>());
    if (j.contains("features")) e.features = j.at("features").get<std::vector<double>>();
    if (j.contains("rationale")) e.rationale = j.at("rationale").get<std::string>();
    if (j.contains("confidence_pct")) e.confidence_pct = j.at("confidence_pct").get<int>();
    if (j.contains("label_p_term")) e.label_p_term = j.at("label_p_term").get<double>();
    return e;
}

inline json to_json(const Rollout& r) {
    return json{{"problem_id", r.problem_id},
                {"stop_index", r.stop_index},
                {"forced", r.forced},
                {"success_at_stop", r.success_at_stop},
                {"per_step_p_terminate", r.per_step_p_terminate}};
}

inline Rollout rollout_from_json(const json& j) {
    Rollout r;
    r.problem_id = j.at("problem_id").get<std::string>();
    r.stop_index = j.at("stop_index").get<int>();
    r.forced = j.at("forced").get<bool>();
    r.success_at_stop = j.at("success_at_stop").get<double>();
    r.per_step_p_terminate = j.at("per_step_p_terminate").get<std::vector<double>>();
    return r;
}

// ---------------------------------------------------------------------------
// Trajectory JSONL

namespace detail {
inline void require_stream(const std::ofstream& out, const std::string& path) {
    if (!out) throw Error("cannot write " + path);
}
}  // namespace detail

// Header line first, then one trajectory per line.
inline void write_trajectories_jsonl(const std::string& path,
                                     const std::vector<Trajectory>& trajectories,
                                     const std::string& cfg_hash) {
    std::ofstream out(path, std::ios::binary);
    detail::require_stream(out, path);
    const json header{{"type", "stopgate_trajectories"},
                      {"version", kVersion},
                      {"config_hash", cfg_hash},
                      {"n", trajectories.size()}};
    out << header.dump() << "\n";
    for (const auto& t : trajectories) out << to_json(t).dump() << "\n";
    if (!out) throw Error("short write to " + path);
}

// Reads trajectory JSONL, skipping a header line when present. Raw files
// without a header (every line a record) are accepted.
inline std::vector<Trajectory> read_trajectories_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::vector<Trajectory> out;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(line_number, e.what());
        }
        if (j.is_object() && j.contains("type")) {
            if (j.at("type") == "stopgate_trajectories") continue;  // header
            throw ParseError(line_number, "unexpected record type");
        }
        try {
            out.push_back(trajectory_from_json(j));
        } catch (const json::exception& e) {
            throw ParseError(line_number, e.what());
        } catch (const RangeError& e) {
            throw ParseError(line_number, e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset manifest JSONL + header

inline json manifest_header_json(const DatasetManifest& m, const std::string& cfg_hash) {
    return json{{"type", "stopgate_manifest"},
                {"version", kVersion},
                {"config_hash", cfg_hash},
                {"continue_ratio", m.continue_ratio},
                {"jump_threshold", m.jump_threshold},
                {"low_threshold", m.low_threshold},
                {"marker_list_hash", m.marker_list_hash},
                {"seed", m.seed},
                {"counts",
                 {{"original_terminate", m.counts.original_terminate},
                  {"counterfactual_continue", m.counts.counterfactual_continue},
                  {"resampled_continue", m.counts.resampled_continue},
                  {"earlier_prefix_continue", m.counts.earlier_prefix_continue}}},
                {"n_examples", m.examples.size()}};
}

// Canonical serialization the manifest hash is computed over: header
// (without the hash field) plus one line per example.
inline std::string manifest_canonical(const DatasetManifest& m, const std::string& cfg_hash) {
    std::ostringstream out;
    out << manifest_header_json(m, cfg_hash).dump() << "\n";
    for (const auto& e : m.examples) out << to_json(e).dump() << "\n";
    return out.str();
}

inline std::string manifest_hash(const DatasetManifest& m, const std::string& cfg_hash) {
    return sha256_hex(manifest_canonical(m, cfg_hash));
}

inline void write_manifest_jsonl(const std::string& path, const DatasetManifest& m,
                                 const std::string& cfg_hash) {
    std::ofstream out(path, std::ios::binary);
    detail::require_stream(out, path);
    json header = manifest_header_json(m, cfg_hash);
    header["manifest_hash"] = manifest_hash(m, cfg_hash);
    out << header.dump() << "\n";
    for (const auto& e : m.examples) out << to_json(e).dump() << "\n";
    if (!out) throw Error("short write to " + path);
}

inline DatasetManifest read_manifest_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    DatasetManifest m;
    std::string line;
    std::size_t line_number = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(line_number, e.what());
        }
        try {
            if (!saw_header) {
                if (!j.is_object() || j.value("type", "") != "stopgate_manifest") {
                    throw ParseError(line_number, "expected manifest header record");
                }
                m.continue_ratio = j.at("continue_ratio").get<double>();
                m.jump_threshold = j.at("jump_threshold").get<double>();
                m.low_threshold = j.at("low_threshold").get<double>();
                m.marker_list_hash = j.at("marker_list_hash").get<std::string>();
                m.seed = j.at("seed").get<std::uint64_t>();
                saw_header = true;
                continue;
            }
            m.examples.push_back(termination_example_from_json(j));
        } catch (const json::exception& e) {
            throw ParseError(line_number, e.what());
        }
    }
    if (!saw_header) throw ParseError(1, "missing manifest header record");
    for (const auto& e : m.examples) m.counts.add(e.provenance);
    return m;
}

// ---------------------------------------------------------------------------
// Policy checkpoint

inline void write_policy_checkpoint(const std::string& path, const LogisticPolicy& policy,
                                    const std::string& cfg_hash) {
    const json j{{"type", "stopgate_policy"},
                 {"version", kVersion},
                 {"config_hash", cfg_hash},
                 {"weights", policy.model().weights},
                 {"bias", policy.model().bias},
                 {"feature_spec",
                  {{"mode", policy.feature_spec().mode},
                   {"obs_dim", policy.feature_spec().obs_dim},
                   {"include_rationale", policy.feature_spec().include_rationale}}},
                 {"hyper",
                  {{"learning_rate", policy.hyper().learning_rate},
                   {"epochs", policy.hyper().epochs},
                   {"l2", policy.hyper().l2},
                   {"seed", policy.hyper().seed}}},
                 {"trained_on", policy.trained_on()}};
    std::ofstream out(path, std::ios::binary);
    detail::require_stream(out, path);
    out << j.dump(2) << "\n";
    if (!out) throw Error("short write to " + path);
}

inline std::shared_ptr<LogisticPolicy> read_policy_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(1, e.what());
    }
    try {
        if (j.value("type", "") != "stopgate_policy") {
            throw ParseError(1, "not a policy checkpoint");
        }
        LinearModel model;
        model.weights = j.at("weights").get<std::vector<double>>();
        model.bias = j.at("bias").get<double>();
        FeatureSpec spec;
        spec.mode = j.at("feature_spec").at("mode").get<std::string>();
        spec.obs_dim = j.at("feature_spec").at("obs_dim").get<int>();
        spec.include_rationale = j.at("feature_spec").at("include_rationale").get<bool>();
        TrainHyper hyper;
        hyper.learning_rate = j.at("hyper").at("learning_rate").get<double>();
        hyper.epochs = j.at("hyper").at("epochs").get<int>();
        hyper.l2 = j.at("hyper").at("l2").get<double>();
        hyper.seed = j.at("hyper").at("seed").get<std::uint64_t>();
        return std::make_shared<LogisticPolicy>(std::move(model), spec, hyper,
                                                j.value("trained_on", ""));
    } catch (const json::exception& e) {
        throw ParseError(1, e.what());
    }
}

// ---------------------------------------------------------------------------
// Evaluation report

inline json eval_report_json(const EvalReport& report, const std::vector<Rollout>& rollouts,
                             const std::string& policy_spec, const std::string& cfg_hash) {
    json j{{"type", "stopgate_eval_report"},
           {"version", kVersion},
           {"config_hash", cfg_hash},
           {"policy", policy_spec},
           {"gamma", report.gamma},
           {"frq_sr", report.frq_sr},
           {"frq_sr_diff_from_mean", report.frq_sr_diff_from_mean},
           {"mean_stop_index", report.mean_stop_index},
           {"discounted_return", report.discounted_return},
           {"n_trajectories", report.n_trajectories},
           {"n_with_breakpoint", report.n_with_breakpoint}};
    if (report.otr.has_value()) {
        j["otr"] = *report.otr;
    } else {
        j["otr_undefined"] = "no trajectory in the population has a breakpoint";
    }
    if (report.frq_sr_ci.has_value()) {
        j["frq_sr_ci"] = {report.frq_sr_ci->first, report.frq_sr_ci->second};
    }
    if (report.otr_ci.has_value()) {
        j["otr_ci"] = {report.otr_ci->first, report.otr_ci->second};
    }
    json rollout_array = json::array();
    for (const auto& r : rollouts) rollout_array.push_back(to_json(r));
    j["rollouts"] = std::move(rollout_array);
    return j;
}

inline void write_eval_report(const std::string& path, const EvalReport& report,
                              const std::vector<Rollout>& rollouts,
                              const std::string& policy_spec, const std::string& cfg_hash) {
    std::ofstream out(path, std::ios::binary);
    detail::require_stream(out, path);
    out << eval_report_json(report, rollouts, policy_spec, cfg_hash).dump(2) << "\n";
    if (!out) throw Error("short write to " + path);
}

// ---------------------------------------------------------------------------
// Termination-rate curve CSV

inline void write_curve_csv(const std::string& path, const TermRateCurve& curve,
                            const std::string& cfg_hash) {
    std::ofstream out(path, std::ios::binary);
    detail::require_stream(out, path);
    out << "# " << kVersion << " config_hash=" << cfg_hash << "\n";
    out << "prefix_len,p_terminate\n";
    for (std::size_t i = 0; i < curve.p_terminate.size(); ++i) {
        out << (i + 1) << "," << json(curve.p_terminate[i]).dump() << "\n";
    }
    if (curve.fault_step.has_value()) {
        out << "# fault at step " << *curve.fault_step << "\n";
    }
    if (!out) throw Error("short write to " + path);
}

// ---------------------------------------------------------------------------
// RL reward export JSONL

inline void write_rl_dataset_jsonl(const std::string& path,
                                   const std::vector<RlRecord>& records,
                                   const std::string& cfg_hash) {
    std::ofstream out(path, std::ios::binary);
    detail::require_stream(out, path);
    const json header{{"type", "stopgate_rl_dataset"},
                      {"version", kVersion},
                      {"config_hash", cfg_hash},
                      {"n", records.size()}};
    out << header.dump() << "\n";
    for (const auto& r : records) {
        out << json{{"problem_id", r.problem_id},
                    {"prefix_len", r.prefix_len},
                    {"decision", to_string(r.decision)},
                    {"p_term", r.p_term},
                    {"reward", r.reward},
                    {"inconsistent", r.inconsistent}}
                   .dump()
            << "\n";
    }
    if (!out) throw Error("short write to " + path);
}

}  // namespace stopgate
