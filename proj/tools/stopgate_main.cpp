// stopgate command-line tool: synthetic corpus generation (synth),
// counterfactual dataset builds (build), policy evaluation (eval), and the
// seeded end-to-end synthetic experiment (repro). Exit codes: 0 success,
// 1 runtime/IO, 2 usage/validation, 3 result-ordering failure.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <stopgate/stopgate.hpp>

namespace sg = stopgate;

namespace {

// A measured comparison came out the wrong way round; reserved exit code 3.
struct OrderingFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::string> markers_for(const sg::RunConfig& cfg) {
    return cfg.marker_file.empty() ? sg::default_markers() : sg::load_markers(cfg.marker_file);
}

std::string marker_hash_for(const sg::RunConfig& cfg) {
    std::string joined;
    for (const std::string& m : markers_for(cfg)) {
        joined += m;
        joined += '\n';
    }
    return sg::sha256_hex(joined);
}

int resolved_jobs(const sg::RunConfig& cfg) {
    if (cfg.jobs >= 1) return cfg.jobs;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

std::optional<std::vector<double>> try_features(const sg::Trajectory& t, int prefix_len) {
    const std::span<const sg::Observation> prefix(t.observations.data(),
                                                  static_cast<std::size_t>(prefix_len));
    try {
        return sg::featurize(prefix, static_cast<int>(t.observations.size()));
    } catch (const sg::UnsupportedError&) {
        return std::nullopt;
    }
}

std::map<std::string, const sg::Trajectory*> index_trajectories(
    const std::vector<sg::Trajectory>& trajs) {
    std::map<std::string, const sg::Trajectory*> by_id;
    for (const sg::Trajectory& t : trajs) by_id[t.problem_id] = &t;
    return by_id;
}

// ---------------------------------------------------------------------------
// Configuration

struct LoadedConfig {
    sg::RunConfig cfg;
    bool has_seed = false;
};

LoadedConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw sg::Error("cannot open config file " + path);
    sg::json j;
    try {
        in >> j;
    } catch (const sg::json::exception& e) {
        throw sg::ConfigError("config file " + path + ": " + e.what());
    }
    LoadedConfig loaded;
    try {
        loaded.cfg = sg::run_config_from_json(j);
    } catch (const sg::json::exception& e) {
        throw sg::ConfigError("config file " + path + ": " + e.what());
    }
    loaded.has_seed = j.is_object() && j.contains("seed");
    return loaded;
}

void validate_config(const sg::RunConfig& cfg) {
    if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0)) throw sg::ConfigError("gamma must be in (0, 1]");
    if (!(cfg.jump_threshold > 0.0 && cfg.jump_threshold <= 1.0)) {
        throw sg::ConfigError("jump_threshold must be in (0, 1]");
    }
    if (!(cfg.low_threshold > 0.0 && cfg.low_threshold < 1.0)) {
        throw sg::ConfigError("low_threshold must be in (0, 1)");
    }
    if (!(cfg.continue_ratio > 0.0 && cfg.continue_ratio < 1.0)) {
        throw sg::ConfigError("continue_ratio must be in (0, 1)");
    }
    if (cfg.n_label_samples < 1) throw sg::ConfigError("n_label_samples must be >= 1");
    if (cfg.horizon_T < 2) throw sg::ConfigError("horizon_T must be >= 2");
    if (cfg.max_cf_attempts < 1) throw sg::ConfigError("max_cf_attempts must be >= 1");
    if (cfg.math_offset < 1) throw sg::ConfigError("math_offset must be >= 1");
    if (cfg.jobs < 0) throw sg::ConfigError("jobs must be >= 0");
    if (cfg.train_n < 1 || cfg.eval_n < 1) throw sg::ConfigError("train_n and eval_n must be >= 1");
    if (cfg.n_seeds < 1) throw sg::ConfigError("n_seeds must be >= 1");
}

// ---------------------------------------------------------------------------
// Policy specs: fixed:<k>, threshold:<theta>, oracle, logistic:<checkpoint>,
// remote:<url>

long long parse_integer(const std::string& text, const std::string& what) {
    std::size_t used = 0;
    long long value = 0;
    try {
        value = std::stoll(text, &used);
    } catch (const std::exception&) {
        throw sg::ConfigError(what + ": not an integer: " + text);
    }
    if (used != text.size()) throw sg::ConfigError(what + ": not an integer: " + text);
    return value;
}

double parse_real(const std::string& text, const std::string& what) {
    std::size_t used = 0;
    double value = 0.0;
    try {
        value = std::stod(text, &used);
    } catch (const std::exception&) {
        throw sg::ConfigError(what + ": not a number: " + text);
    }
    if (used != text.size()) throw sg::ConfigError(what + ": not a number: " + text);
    return value;
}

sg::PolicyFactory parse_policy_spec(const std::string& spec, const sg::RunConfig& cfg,
                                    const std::string& confidence_from, bool allow_threshold) {
    const auto suffix_of = [&](const std::string& prefix) {
        return spec.substr(prefix.size());
    };
    if (spec.rfind("fixed:", 0) == 0) {
        const long long k = parse_integer(suffix_of("fixed:"), "fixed:<k>");
        if (k < 1) throw sg::ConfigError("fixed:<k>: k must be >= 1");
        const auto policy = sg::fixed_budget_policy(static_cast<int>(k));
        return [policy](const sg::Trajectory&) { return policy; };
    }
    if (spec.rfind("threshold:", 0) == 0) {
        if (!allow_threshold) {
            throw sg::ConfigError("threshold:<theta> cannot serve as a confidence source");
        }
        const double theta = parse_real(suffix_of("threshold:"), "threshold:<theta>");
        if (!(theta > 0.0 && theta <= 1.0)) {
            throw sg::ConfigError("threshold:<theta>: theta must be in (0, 1]");
        }
        if (confidence_from.empty()) {
            throw sg::ConfigError(
                "threshold:<theta> needs --confidence-from <policy_spec> as its "
                "confidence source");
        }
        const sg::PolicyFactory inner = parse_policy_spec(confidence_from, cfg, "", false);
        return [inner, theta](const sg::Trajectory& t) {
            const std::shared_ptr<const sg::Policy> source = inner(t);
            sg::ConfidenceFn fn = [source](const sg::PrefixView& view) {
                return source->decide(view).p_terminate;
            };
            return sg::threshold_policy(std::move(fn), theta);
        };
    }
    if (spec == "oracle") {
        const double gamma = cfg.gamma;
        return [gamma](const sg::Trajectory& t) { return sg::oracle_policy(t, gamma); };
    }
    if (spec.rfind("logistic:", 0) == 0) {
        const std::shared_ptr<sg::LogisticPolicy> policy =
            sg::read_policy_checkpoint(suffix_of("logistic:"));
        return [policy](const sg::Trajectory&) { return policy; };
    }
    if (spec.rfind("remote:", 0) == 0) {
        const auto policy = std::make_shared<sg::RemotePolicy>(suffix_of("remote:"));
        return [policy](const sg::Trajectory&) { return policy; };
    }
    throw sg::ConfigError("unknown policy spec: " + spec +
                          " (expected fixed:<k>, threshold:<theta>, oracle, "
                          "logistic:<checkpoint>, or remote:<url>)");
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(const sg::RunConfig& cfg, int n, const std::string& out_path) {
    if (n < 1) throw sg::ConfigError("--n must be >= 1");
    const std::vector<sg::Trajectory> trajs = sg::synth_generate(cfg.synth(), n);
    sg::write_trajectories_jsonl(out_path, trajs, sg::config_hash(cfg));
    std::cout << "wrote " << trajs.size() << " trajectories to " << out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// build

struct BuildPools {
    std::vector<sg::TerminationExample> examples;
    std::vector<sg::ResampleCandidate> pool;
    std::vector<std::string> skipped;        // counterfactual generation exhausted
    std::vector<std::string> no_breakpoint;  // nothing to pair
};

// Collects counterfactual pairs and the pre-breakpoint resample pool for
// synthetic trajectories against the exact success provider.
void collect_synthetic(const std::vector<sg::Trajectory>& trajs, const sg::RunConfig& cfg,
                       std::uint64_t seed, BuildPools& out) {
    const sg::SyntheticExactProvider provider(cfg.p_low, cfg.p_high);
    const sg::Perturber perturber = sg::make_synth_perturber(sg::derive_seed(seed, "perturb"));
    for (const sg::Trajectory& t : trajs) {
        if (t.domain != sg::Domain::Synthetic) continue;
        const sg::PrefixLabel* baseline =
            t.baseline_label.has_value() ? &*t.baseline_label : nullptr;
        const std::optional<int> bp =
            sg::detect_breakpoint(t.labels, cfg.jump_threshold, baseline);
        if (!bp.has_value()) {
            out.no_breakpoint.push_back(t.problem_id);
            continue;
        }
        try {
            sg::CounterfactualPair pair = sg::make_counterfactual_medical(
                t, *bp, perturber, provider, cfg.low_threshold, cfg.max_cf_attempts,
                sg::derive_seed(seed, t.problem_id), cfg.jump_threshold, cfg.n_label_samples);
            out.examples.push_back(std::move(pair.positive));
            out.examples.push_back(std::move(pair.negative));
        } catch (const sg::CfExhausted&) {
            out.skipped.push_back(t.problem_id);
            continue;
        }
        for (sg::ResampleCandidate& c : sg::make_resample_pool(t, *bp)) {
            out.pool.push_back(std::move(c));
        }
    }
}

// Same pipeline for text conversations, with the chat endpoint supplying
// both the replacement questions and the relabeling grades.
void collect_medical(const std::vector<sg::Trajectory>& trajs, const sg::RunConfig& cfg,
                     std::uint64_t seed, const std::string& template_dir, BuildPools& out) {
    bool any = false;
    for (const sg::Trajectory& t : trajs) any = any || t.domain == sg::Domain::Medical;
    if (!any) return;

    const sg::ChatClient::Options grade_opts = sg::chat_options_from_env(cfg);
    if (grade_opts.url.empty()) {
        throw sg::ConfigError(
            "medical trajectories need a chat endpoint for counterfactual generation; set "
            "--llm-url or STOPGATE_LLM_URL");
    }
    const sg::GraderPrompts grader = template_dir.empty() ? sg::GraderPrompts::defaults()
                                                          : sg::GraderPrompts::load(template_dir);
    const sg::SimPrompts sim =
        template_dir.empty() ? sg::SimPrompts::defaults() : sg::SimPrompts::load(template_dir);
    const sg::LlmSuccessProvider provider(grade_opts, grader);
    sg::ChatClient::Options perturb_opts = grade_opts;
    perturb_opts.temperature = 0.7;  // sampling is the source of per-attempt diversity
    const sg::Perturber perturber = sg::make_llm_perturber(std::move(perturb_opts), sim);

    for (const sg::Trajectory& t : trajs) {
        if (t.domain != sg::Domain::Medical) continue;
        const sg::PrefixLabel* baseline =
            t.baseline_label.has_value() ? &*t.baseline_label : nullptr;
        const std::optional<int> bp =
            sg::detect_breakpoint(t.labels, cfg.jump_threshold, baseline);
        if (!bp.has_value()) {
            out.no_breakpoint.push_back(t.problem_id);
            continue;
        }
        try {
            sg::CounterfactualPair pair = sg::make_counterfactual_medical(
                t, *bp, perturber, provider, cfg.low_threshold, cfg.max_cf_attempts,
                sg::derive_seed(seed, t.problem_id), cfg.jump_threshold, cfg.n_label_samples);
            out.examples.push_back(std::move(pair.positive));
            out.examples.push_back(std::move(pair.negative));
        } catch (const sg::CfExhausted&) {
            out.skipped.push_back(t.problem_id);
            continue;
        }
        for (sg::ResampleCandidate& c : sg::make_resample_pool(t, *bp)) {
            out.pool.push_back(std::move(c));
        }
    }
}

// Reasoning episodes: terminate at the first prefix where stopping beats
// continuing, pair it with an earlier prefix, pool the labeled prefixes
// below the breakpoint.
void collect_math(const std::vector<sg::Trajectory>& trajs, const sg::RunConfig& cfg,
                  BuildPools& out) {
    for (const sg::Trajectory& t : trajs) {
        if (t.domain != sg::Domain::Math) continue;
        const std::optional<int> bp = sg::detect_math_breakpoint(t.labels);
        if (!bp.has_value()) {
            out.no_breakpoint.push_back(t.problem_id);
            continue;
        }
        const sg::PrefixLabel& at = t.labels[static_cast<std::size_t>(*bp)];
        try {
            sg::TerminationExample negative =
                sg::make_counterfactual_math(t, at.prefix_len, cfg.math_offset);
            sg::TerminationExample positive;
            positive.problem_id = t.problem_id;
            positive.prefix_len = at.prefix_len;
            positive.decision = sg::Action::Terminate;
            positive.provenance = sg::Provenance::OriginalTerminate;
            positive.features = try_features(t, at.prefix_len);
            positive.label_p_term = at.p_term;
            out.examples.push_back(std::move(positive));
            out.examples.push_back(std::move(negative));
        } catch (const sg::RangeError&) {
            out.skipped.push_back(t.problem_id);  // breakpoint too early to truncate
            continue;
        }
        for (int j = 0; j < *bp; ++j) {
            const sg::PrefixLabel& l = t.labels[static_cast<std::size_t>(j)];
            if (l.prefix_len < 1 || l.prefix_len >= at.prefix_len) continue;
            sg::ResampleCandidate c;
            c.problem_id = t.problem_id;
            c.prefix_len = l.prefix_len;
            c.features = try_features(t, l.prefix_len);
            c.label_p_term = l.p_term;
            out.pool.push_back(std::move(c));
        }
    }
}

void augment_manifest(sg::DatasetManifest& manifest,
                      const std::vector<sg::Trajectory>& trajs, const sg::RunConfig& cfg,
                      bool with_rationale, bool with_confidence) {
    const auto by_id = index_trajectories(trajs);
    std::unique_ptr<sg::SyntheticRationaleProvider> synth_rationales;
    std::unique_ptr<sg::LlmRationaleProvider> llm_rationales;
    int without_label = 0;
    for (sg::TerminationExample& e : manifest.examples) {
        const auto it = by_id.find(e.problem_id);
        if (it == by_id.end()) throw sg::StructuralError("augment: no trajectory for " + e.problem_id);
        if (with_rationale) {
            if (it->second->domain == sg::Domain::Synthetic) {
                if (!synth_rationales) {
                    synth_rationales = std::make_unique<sg::SyntheticRationaleProvider>(by_id);
                }
                e = sg::augment_rationale(e, *synth_rationales);
            } else {
                if (!llm_rationales) {
                    const sg::ChatClient::Options opts = sg::chat_options_from_env(cfg);
                    if (opts.url.empty()) {
                        throw sg::ConfigError(
                            "--rationale on text trajectories needs a chat endpoint; set "
                            "--llm-url or STOPGATE_LLM_URL");
                    }
                    llm_rationales = std::make_unique<sg::LlmRationaleProvider>(opts, by_id);
                }
                e = sg::augment_rationale(e, *llm_rationales);
            }
        }
        if (with_confidence) {
            if (e.label_p_term.has_value()) {
                e = sg::augment_confidence(e, *e.label_p_term);
            } else {
                ++without_label;
            }
        }
    }
    if (without_label > 0) {
        std::cerr << "stopgate: " << without_label
                  << " examples lack a success label; no confidence attached\n";
    }
}

int cmd_build(const sg::RunConfig& cfg, const std::string& in_path, const std::string& out_path,
              bool with_rationale, bool with_confidence, const std::string& chat_out,
              const std::string& chat_variant, const std::string& template_dir) {
    const std::vector<sg::Trajectory> trajs = sg::read_trajectories_jsonl(in_path);
    if (trajs.empty()) throw sg::Error("no trajectories in " + in_path);

    BuildPools pools;
    collect_synthetic(trajs, cfg, cfg.seed, pools);
    collect_medical(trajs, cfg, cfg.seed, template_dir, pools);
    collect_math(trajs, cfg, pools);

    if (!pools.no_breakpoint.empty()) {
        std::cerr << "stopgate: no breakpoint in " << pools.no_breakpoint.size()
                  << " of " << trajs.size() << " trajectories; no pairs emitted for:";
        for (const std::string& id : pools.no_breakpoint) std::cerr << " " << id;
        std::cerr << "\n";
    }
    if (!pools.skipped.empty()) {
        std::cerr << "stopgate: counterfactual generation exhausted; skipped:";
        for (const std::string& id : pools.skipped) std::cerr << " " << id;
        std::cerr << "\n";
    }

    sg::ManifestMeta meta;
    meta.jump_threshold = cfg.jump_threshold;
    meta.low_threshold = cfg.low_threshold;
    meta.marker_list_hash = marker_hash_for(cfg);
    sg::DatasetManifest manifest = sg::balance_dataset(std::move(pools.examples), pools.pool,
                                                       cfg.continue_ratio, cfg.seed, meta);

    if (with_rationale || with_confidence) {
        augment_manifest(manifest, trajs, cfg, with_rationale, with_confidence);
    }

    const std::string cfg_hash = sg::config_hash(cfg);
    sg::write_manifest_jsonl(out_path, manifest, cfg_hash);

    const sg::ProvenanceCounts& counts = manifest.counts;
    std::cout << "manifest: " << counts.total() << " examples (" << counts.original_terminate
              << " original_terminate, " << counts.counterfactual_continue
              << " counterfactual_continue, " << counts.resampled_continue
              << " resampled_continue, " << counts.earlier_prefix_continue
              << " earlier_prefix_continue)\n";
    std::cout << "wrote " << out_path << "\n";

    if (!chat_out.empty()) {
        const sg::TerminationPrompts prompts = template_dir.empty()
                                                   ? sg::TerminationPrompts::defaults()
                                                   : sg::TerminationPrompts::load(template_dir);
        sg::write_chat_dataset_jsonl(chat_out, manifest, index_trajectories(trajs), prompts,
                                     sg::chat_variant_from_string(chat_variant), cfg_hash);
        std::cout << "wrote " << chat_out << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// eval

void print_report(std::ostream& out, const std::string& name, const sg::EvalReport& r) {
    const auto ci = [](const std::optional<std::pair<double, double>>& interval) {
        if (!interval.has_value()) return std::string();
        std::ostringstream s;
        s << "  [" << std::fixed << std::setprecision(4) << interval->first << ", "
          << interval->second << "]";
        return s.str();
    };
    out << std::fixed << std::setprecision(4);
    out << "policy            " << name << "\n";
    out << "trajectories      " << r.n_trajectories << "\n";
    out << "frq_sr            " << r.frq_sr << ci(r.frq_sr_ci) << "\n";
    out << "diff_from_mean    " << r.frq_sr_diff_from_mean << "\n";
    if (r.otr.has_value()) {
        out << "otr               " << *r.otr << ci(r.otr_ci) << "  (" << r.n_with_breakpoint
            << " with breakpoint)\n";
    } else {
        out << "otr               undefined (no trajectory has a breakpoint)\n";
    }
    out << "mean_stop_index   " << r.mean_stop_index << "\n";
    out << "discounted_return " << r.discounted_return << "  (gamma " << r.gamma << ")\n";
}

int cmd_eval(const sg::RunConfig& cfg, const std::string& policy_spec, const std::string& in_path,
             const std::string& out_path, const std::string& mode_name,
             const std::string& confidence_from, bool no_bootstrap, int resamples,
             const std::string& curve_out, const std::string& curve_id) {
    const std::vector<sg::Trajectory> trajs = sg::read_trajectories_jsonl(in_path);
    if (trajs.empty()) throw sg::Error("no trajectories in " + in_path);

    const sg::PolicyFactory factory = parse_policy_spec(policy_spec, cfg, confidence_from, true);

    sg::EvalOptions opts;
    opts.mode = mode_name == "sampled" ? sg::RolloutMode::Sampled : sg::RolloutMode::Deterministic;
    opts.horizon_T = cfg.horizon_T;
    opts.gamma = cfg.gamma;
    opts.jump_threshold = cfg.jump_threshold;
    opts.seed = cfg.seed;
    opts.with_bootstrap = !no_bootstrap;
    opts.bootstrap_resamples = resamples;
    opts.jobs = resolved_jobs(cfg);

    const sg::EvalResult result = sg::evaluate(factory, trajs, opts);
    sg::write_eval_report(out_path, result.report, result.rollouts, policy_spec,
                          sg::config_hash(cfg));
    print_report(std::cout, policy_spec, result.report);
    std::cout << "wrote " << out_path << "\n";

    if (!curve_out.empty()) {
        const sg::Trajectory* chosen = &trajs.front();
        if (!curve_id.empty()) {
            chosen = nullptr;
            for (const sg::Trajectory& t : trajs) {
                if (t.problem_id == curve_id) chosen = &t;
            }
            if (chosen == nullptr) throw sg::ConfigError("--curve-id: no trajectory " + curve_id);
        }
        const std::shared_ptr<const sg::Policy> policy = factory(*chosen);
        sg::write_curve_csv(curve_out, sg::term_rate_curve(*policy, *chosen),
                            sg::config_hash(cfg));
        std::cout << "wrote " << curve_out << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// repro

struct SeedOutcome {
    std::uint64_t seed = 0;
    std::map<std::string, sg::EvalReport> reports;  // policy name -> report
};

// Uniform baseline at matched size and decision ratio: prefixes are drawn
// uniformly (with replacement) from correctly labeled positions rather
// than from counterfactual pairs at breakpoints.
sg::DatasetManifest build_uniform_manifest(const std::vector<sg::Trajectory>& trajs,
                                           const sg::RunConfig& cfg, std::uint64_t seed,
                                           std::size_t total, std::size_t n_terminate) {
    struct Slot {
        const sg::Trajectory* t;
        int prefix_len;
        double p_term;
    };
    std::vector<Slot> terminate_pool;
    std::vector<Slot> continue_pool;
    for (const sg::Trajectory& t : trajs) {
        for (const sg::PrefixLabel& l : t.labels) {
            if (l.prefix_len < 1) continue;
            (l.p_term >= 0.5 ? terminate_pool : continue_pool).push_back(
                Slot{&t, l.prefix_len, l.p_term});
        }
    }
    if (terminate_pool.empty() || continue_pool.empty()) {
        throw sg::BalanceImpossible("uniform baseline: a decision class has no prefixes");
    }
    if (n_terminate > total) throw sg::RangeError("uniform baseline: n_terminate > total");

    sg::Rng rng(sg::derive_seed(seed, "uniform-sft"));
    std::vector<sg::TerminationExample> examples;
    examples.reserve(total);
    const auto draw = [&](const std::vector<Slot>& pool, sg::Action action, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            const Slot& s =
                pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
            sg::TerminationExample e;
            e.problem_id = s.t->problem_id;
            e.prefix_len = s.prefix_len;
            e.decision = action;
            e.provenance = action == sg::Action::Terminate ? sg::Provenance::OriginalTerminate
                                                           : sg::Provenance::ResampledContinue;
            e.features = try_features(*s.t, s.prefix_len);
            e.label_p_term = s.p_term;
            examples.push_back(std::move(e));
        }
    };
    draw(terminate_pool, sg::Action::Terminate, n_terminate);
    draw(continue_pool, sg::Action::Continue, total - n_terminate);

    sg::DatasetManifest m;
    m.examples = std::move(examples);
    m.continue_ratio = cfg.continue_ratio;
    m.jump_threshold = cfg.jump_threshold;
    m.low_threshold = cfg.low_threshold;
    m.marker_list_hash = marker_hash_for(cfg);
    m.seed = seed;
    for (const sg::TerminationExample& e : m.examples) m.counts.add(e.provenance);
    return m;
}

std::string csv_number(double v) { return sg::json(v).dump(); }

int cmd_repro(const sg::RunConfig& base_cfg, const std::string& out_dir) {
    base_cfg.synth().validate();  // degenerate environments rejected before any work

    std::filesystem::create_directories(out_dir);
    std::vector<SeedOutcome> outcomes;

    for (int i = 0; i < base_cfg.n_seeds; ++i) {
        const std::uint64_t s = base_cfg.seed + static_cast<std::uint64_t>(i);
        sg::RunConfig cfg = base_cfg;
        cfg.seed = s;
        const std::string cfg_hash = sg::config_hash(cfg);
        const std::string dir = out_dir + "/seed_" + std::to_string(s);
        std::filesystem::create_directories(dir);

        // one environment per seed: train and holdout share the feature
        // geometry and split into disjoint problems
        sg::SynthConfig env = cfg.synth();
        env.seed = sg::derive_seed(s, "corpus");
        std::vector<sg::Trajectory> corpus = sg::synth_generate(env, cfg.train_n + cfg.eval_n);
        const std::vector<sg::Trajectory> holdout(corpus.begin() + cfg.train_n, corpus.end());
        std::vector<sg::Trajectory> train = std::move(corpus);
        train.resize(static_cast<std::size_t>(cfg.train_n));
        sg::write_trajectories_jsonl(dir + "/train.jsonl", train, cfg_hash);
        sg::write_trajectories_jsonl(dir + "/eval.jsonl", holdout, cfg_hash);

        BuildPools pools;
        collect_synthetic(train, cfg, s, pools);
        sg::ManifestMeta meta;
        meta.jump_threshold = cfg.jump_threshold;
        meta.low_threshold = cfg.low_threshold;
        meta.marker_list_hash = marker_hash_for(cfg);
        const sg::DatasetManifest cf_manifest = sg::balance_dataset(
            std::move(pools.examples), pools.pool, cfg.continue_ratio, s, meta);

        std::size_t n_terminate = 0;
        for (const sg::TerminationExample& e : cf_manifest.examples) {
            if (e.decision == sg::Action::Terminate) ++n_terminate;
        }
        const sg::DatasetManifest sft_manifest = build_uniform_manifest(
            train, cfg, s, cf_manifest.examples.size(), n_terminate);

        sg::write_manifest_jsonl(dir + "/manifest_cf.jsonl", cf_manifest, cfg_hash);
        sg::write_manifest_jsonl(dir + "/manifest_uniform.jsonl", sft_manifest, cfg_hash);

        sg::TrainHyper hyper = cfg.hyper();
        hyper.seed = s;
        const std::shared_ptr<sg::LogisticPolicy> cf_policy =
            sg::train_logistic(cf_manifest, hyper, "counterfactual");
        const std::shared_ptr<sg::LogisticPolicy> sft_policy =
            sg::train_logistic(sft_manifest, hyper, "uniform");
        sg::write_policy_checkpoint(dir + "/policy_cf.json", *cf_policy, cfg_hash);
        sg::write_policy_checkpoint(dir + "/policy_uniform.json", *sft_policy, cfg_hash);

        sg::EvalOptions opts;
        opts.mode = sg::RolloutMode::Deterministic;
        opts.horizon_T = cfg.horizon_T;
        opts.gamma = cfg.gamma;
        opts.jump_threshold = cfg.jump_threshold;
        opts.seed = s;
        opts.jobs = resolved_jobs(cfg);

        SeedOutcome outcome;
        outcome.seed = s;
        const int fixed_k = std::max(1, cfg.horizon_T / 2);
        const std::map<std::string, sg::PolicyFactory> lineup{
            {"cf", [cf_policy](const sg::Trajectory&) { return cf_policy; }},
            {"uniform", [sft_policy](const sg::Trajectory&) { return sft_policy; }},
            {"fixed", parse_policy_spec("fixed:" + std::to_string(fixed_k), cfg, "", false)},
            {"oracle", parse_policy_spec("oracle", cfg, "", false)},
        };
        for (const auto& [name, factory] : lineup) {
            const sg::EvalResult result = sg::evaluate(factory, holdout, opts);
            sg::write_eval_report(dir + "/report_" + name + ".json", result.report,
                                  result.rollouts, name, cfg_hash);
            outcome.reports[name] = result.report;
        }
        outcomes.push_back(std::move(outcome));
        std::cout << "seed " << s << ": cf otr " << csv_number(*outcomes.back().reports["cf"].otr)
                  << ", uniform otr " << csv_number(*outcomes.back().reports["uniform"].otr)
                  << ", oracle otr " << csv_number(*outcomes.back().reports["oracle"].otr) << "\n";
    }

    // Comparison table plus the mean across seeds per policy.
    const std::vector<std::string> names{"cf", "uniform", "fixed", "oracle"};
    std::map<std::string, sg::EvalReport> means;
    {
        std::ofstream csv(out_dir + "/comparison.csv", std::ios::binary);
        if (!csv) throw sg::Error("cannot open " + out_dir + "/comparison.csv for writing");
        csv << "seed,policy,frq_sr,diff_from_mean,otr,mean_stop_index,discounted_return\n";
        for (const std::string& name : names) {
            sg::EvalReport mean;
            mean.gamma = base_cfg.gamma;
            for (const SeedOutcome& o : outcomes) {
                const sg::EvalReport& r = o.reports.at(name);
                if (!r.otr.has_value()) {
                    throw OrderingFailure("ordering violation: otr undefined for policy " + name +
                                          " at seed " + std::to_string(o.seed));
                }
                csv << o.seed << "," << name << "," << csv_number(r.frq_sr) << ","
                    << csv_number(r.frq_sr_diff_from_mean) << "," << csv_number(*r.otr) << ","
                    << csv_number(r.mean_stop_index) << "," << csv_number(r.discounted_return)
                    << "\n";
                mean.frq_sr += r.frq_sr;
                mean.frq_sr_diff_from_mean += r.frq_sr_diff_from_mean;
                mean.otr = mean.otr.value_or(0.0) + *r.otr;
                mean.mean_stop_index += r.mean_stop_index;
                mean.discounted_return += r.discounted_return;
            }
            const double k = static_cast<double>(outcomes.size());
            mean.frq_sr /= k;
            mean.frq_sr_diff_from_mean /= k;
            mean.otr = *mean.otr / k;
            mean.mean_stop_index /= k;
            mean.discounted_return /= k;
            csv << "mean," << name << "," << csv_number(mean.frq_sr) << ","
                << csv_number(mean.frq_sr_diff_from_mean) << "," << csv_number(*mean.otr) << ","
                << csv_number(mean.mean_stop_index) << "," << csv_number(mean.discounted_return)
                << "\n";
            means[name] = mean;
        }
        if (!csv) throw sg::Error("short write to " + out_dir + "/comparison.csv");
    }

    std::cout << std::fixed << std::setprecision(4);
    std::cout << "\nmean over " << outcomes.size() << " seeds:\n";
    std::cout << "policy    frq_sr  diff     otr     mean_stop  disc_return\n";
    for (const std::string& name : names) {
        const sg::EvalReport& m = means[name];
        std::cout << std::left << std::setw(10) << name << std::right << m.frq_sr << "  "
                  << std::setw(7) << m.frq_sr_diff_from_mean << "  " << std::setw(6) << *m.otr
                  << "  " << std::setw(9) << m.mean_stop_index << "  " << std::setw(11)
                  << m.discounted_return << "\n";
    }
    std::cout << "wrote " << out_dir << "/comparison.csv\n";

    // The orderings this experiment exists to demonstrate.
    for (const SeedOutcome& o : outcomes) {
        const double oracle_otr = *o.reports.at("oracle").otr;
        if (!(oracle_otr >= 1.0)) {
            throw OrderingFailure("ordering violation: oracle otr " + csv_number(oracle_otr) +
                                  " != 1.0 at seed " + std::to_string(o.seed));
        }
    }
    const double cf_otr = *means["cf"].otr;
    const double uniform_otr = *means["uniform"].otr;
    if (!(cf_otr - uniform_otr >= 0.1)) {
        throw OrderingFailure("ordering violation: mean cf otr " + csv_number(cf_otr) +
                              " does not exceed mean uniform otr " + csv_number(uniform_otr) +
                              " by 0.1");
    }
    if (!(means["cf"].frq_sr_diff_from_mean > 0.0)) {
        throw OrderingFailure("ordering violation: mean cf diff_from_mean " +
                              csv_number(means["cf"].frq_sr_diff_from_mean) + " is not > 0");
    }
    if (!(std::abs(means["fixed"].frq_sr_diff_from_mean) <= 0.02)) {
        throw OrderingFailure("ordering violation: |mean fixed diff_from_mean| " +
                              csv_number(std::abs(means["fixed"].frq_sr_diff_from_mean)) +
                              " exceeds 0.02");
    }
    std::cout << "ordering checks passed: oracle otr 1.0; cf otr - uniform otr = "
              << (cf_otr - uniform_otr) << "; cf diff " << means["cf"].frq_sr_diff_from_mean
              << "; fixed diff " << means["fixed"].frq_sr_diff_from_mean << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// argument plumbing

std::string prescan_config_path(int argc, char** argv) {
    std::string path;
    CLI::App pre;
    pre.allow_extras();
    pre.set_help_flag();
    pre.add_option("--config", path);
    try {
        pre.parse(argc, argv);
    } catch (const CLI::ParseError&) {
        // real errors resurface in the main parse
    }
    return path;
}

int run(int argc, char** argv) {
    const std::string config_path = prescan_config_path(argc, argv);
    sg::RunConfig cfg;
    bool file_has_seed = false;
    if (!config_path.empty()) {
        LoadedConfig loaded = load_config_file(config_path);
        cfg = loaded.cfg;
        file_has_seed = loaded.has_seed;
    }

    CLI::App app{"verifiable early-termination policies for sequential decision tasks"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(sg::kVersion));

    std::string config_dummy;
    app.add_option("--config", config_dummy, "JSON config file (flags override file values)");
    auto* seed_opt = app.add_option("--seed", cfg.seed, "master seed (or STOPGATE_SEED)");
    app.add_option("--gamma", cfg.gamma, "discount factor in (0, 1]");
    app.add_option("--jump-threshold", cfg.jump_threshold, "breakpoint success jump");
    app.add_option("--low-threshold", cfg.low_threshold, "counterfactual success ceiling");
    app.add_option("--continue-ratio", cfg.continue_ratio, "target continue fraction");
    app.add_option("--label-samples", cfg.n_label_samples, "success samples per prefix");
    app.add_option("--horizon", cfg.horizon_T, "rollout horizon");
    app.add_option("--marker-file", cfg.marker_file, "episode marker list, one per line");
    app.add_option("--llm-url", cfg.llm_url, "chat endpoint (or STOPGATE_LLM_URL)");
    app.add_option("--llm-model", cfg.llm_model, "chat endpoint model name");
    app.add_option("--jobs", cfg.jobs, "worker threads (0: one per core)");
    app.add_option("--p-low", cfg.p_low, "synthetic pre-key success rate");
    app.add_option("--p-high", cfg.p_high, "synthetic post-key success rate");
    app.add_option("--key-min", cfg.key_min, "earliest synthetic key position");
    app.add_option("--key-max", cfg.key_max, "latest synthetic key position");
    app.add_option("--feature-dim", cfg.feature_dim, "synthetic observation feature dim");
    app.add_option("--key-offset", cfg.key_offset, "synthetic key feature offset");
    app.add_option("--learning-rate", cfg.learning_rate, "trainer learning rate");
    app.add_option("--epochs", cfg.epochs, "trainer epochs");
    app.add_option("--l2", cfg.l2, "trainer l2 penalty");
    app.add_option("--max-cf-attempts", cfg.max_cf_attempts, "perturbation attempts per pair");
    app.add_option("--math-subsample", cfg.math_subsample, "labeled prefixes per math trace");
    app.add_option("--math-offset", cfg.math_offset, "earlier-prefix distance for math pairs");
    app.add_option("--train-n", cfg.train_n, "repro training trajectories per seed");
    app.add_option("--eval-n", cfg.eval_n, "repro holdout trajectories per seed");
    app.add_option("--n-seeds", cfg.n_seeds, "repro seeds");

    // synth
    auto* synth = app.add_subcommand("synth", "generate labeled synthetic trajectories");
    synth->fallthrough();
    int synth_n = 0;
    std::string synth_out;
    synth->add_option("--n", synth_n, "number of trajectories")->required();
    synth->add_option("--out", synth_out, "output trajectory JSONL")->required();

    // build
    auto* build = app.add_subcommand("build", "build a balanced termination dataset");
    build->fallthrough();
    std::string build_in;
    std::string build_out;
    bool build_rationale = false;
    bool build_confidence = false;
    std::string chat_out;
    std::string chat_variant = "standard";
    std::string template_dir;
    build->add_option("--in", build_in, "input trajectory JSONL")->required();
    build->add_option("--out", build_out, "output manifest JSONL")->required();
    build->add_flag("--rationale", build_rationale, "attach a rationale to every example");
    build->add_flag("--confidence", build_confidence, "attach confidence from the prefix label");
    build->add_option("--chat-out", chat_out, "also write a chat-formatted training JSONL");
    build->add_option("--chat-variant", chat_variant, "standard|reasoning|confidence|reasoning_confidence")
        ->check(CLI::IsMember({"standard", "reasoning", "confidence", "reasoning_confidence"}));
    build->add_option("--template-dir", template_dir, "prompt template directory override");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a termination policy");
    eval->fallthrough();
    std::string policy_spec;
    std::string eval_in;
    std::string eval_out;
    std::string mode_name = "deterministic";
    std::string confidence_from;
    std::string curve_out;
    std::string curve_id;
    bool no_bootstrap = false;
    int resamples = 1000;
    eval->add_option("--policy", policy_spec,
                     "fixed:<k> | threshold:<theta> | oracle | logistic:<checkpoint> | remote:<url>")
        ->required();
    eval->add_option("--in", eval_in, "input trajectory JSONL")->required();
    eval->add_option("--out", eval_out, "output report JSON")->required();
    eval->add_option("--mode", mode_name, "deterministic|sampled")
        ->check(CLI::IsMember({"deterministic", "sampled"}));
    eval->add_option("--confidence-from", confidence_from,
                     "policy spec whose p_terminate feeds threshold:<theta>");
    eval->add_option("--curve-out", curve_out, "write a per-prefix termination-rate CSV");
    eval->add_option("--curve-id", curve_id, "trajectory for --curve-out (default: first)");
    eval->add_flag("--no-bootstrap", no_bootstrap, "skip confidence intervals");
    eval->add_option("--resamples", resamples, "bootstrap resamples");

    // repro
    auto* repro = app.add_subcommand("repro", "run the seeded synthetic experiment end to end");
    repro->fallthrough();
    std::string repro_out;
    repro->add_option("--out", repro_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    if (seed_opt->count() == 0 && !file_has_seed) {
        if (const char* env = std::getenv("STOPGATE_SEED")) {
            try {
                std::size_t used = 0;
                cfg.seed = std::stoull(env, &used);
                if (used != std::string(env).size()) throw std::invalid_argument(env);
            } catch (const std::exception&) {
                throw sg::ConfigError("STOPGATE_SEED must be an unsigned integer, got: " +
                                      std::string(env));
            }
        }
    }
    validate_config(cfg);

    if (synth->parsed()) return cmd_synth(cfg, synth_n, synth_out);
    if (build->parsed()) {
        return cmd_build(cfg, build_in, build_out, build_rationale, build_confidence, chat_out,
                         chat_variant, template_dir);
    }
    if (eval->parsed()) {
        return cmd_eval(cfg, policy_spec, eval_in, eval_out, mode_name, confidence_from,
                        no_bootstrap, resamples, curve_out, curve_id);
    }
    if (repro->parsed()) return cmd_repro(cfg, repro_out);
    return 2;  // unreachable: require_subcommand(1)
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const OrderingFailure& e) {
        std::cerr << "stopgate: " << e.what() << "\n";
        return 3;
    } catch (const sg::ConfigError& e) {
        std::cerr << "stopgate: " << e.what() << "\n";
        return 2;
    } catch (const sg::RangeError& e) {
        std::cerr << "stopgate: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "stopgate: " << e.what() << "\n";
        return 1;
    }
}
