#pragma once
// Shared test fixtures: hand-built trajectories, temp directories, and a
// helper that spawns the CLI binary and captures its output.

#include <stopgate/stopgate.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace test {

namespace sg = stopgate;

// A dense-labeled trajectory from a plain p_term curve; observation i gets
// a one-dimensional feature so featurization works.
inline sg::Trajectory hand_trajectory(const std::string& id, const std::vector<double>& p_terms,
                                      sg::Domain domain = sg::Domain::Synthetic) {
    sg::Trajectory t;
    t.problem_id = id;
    t.ground_truth = "answer";
    t.domain = domain;
    for (std::size_t i = 0; i < p_terms.size(); ++i) {
        sg::Observation o;
        o.index = static_cast<int>(i);
        o.kind = domain == sg::Domain::Math ? sg::ObservationKind::ReasoningEpisode
                                            : sg::ObservationKind::QuestionAnswer;
        o.features = std::vector<double>{static_cast<double>(i)};
        t.observations.push_back(std::move(o));
        sg::PrefixLabel l;
        l.prefix_len = static_cast<int>(i) + 1;
        l.p_term = p_terms[i];
        l.n_term_samples = 50;
        t.labels.push_back(l);
    }
    return t;
}

// Adds success-if-continue labels (math setting).
inline void with_p_cont(sg::Trajectory& t, const std::vector<double>& p_conts) {
    for (std::size_t i = 0; i < p_conts.size() && i < t.labels.size(); ++i) {
        t.labels[i].p_cont = p_conts[i];
        t.labels[i].n_cont_samples = 50;
    }
}

inline sg::SynthConfig small_synth(std::uint64_t seed = 1, int horizon = 20) {
    sg::SynthConfig cfg;
    cfg.horizon_T = horizon;
    cfg.key_max = horizon - 1;
    cfg.seed = seed;
    return cfg;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "stopgate-XXXXXX").string();
        char* made = mkdtemp(tmpl.data());
        if (made == nullptr) throw std::runtime_error("mkdtemp failed");
        path = made;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

struct CmdResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

inline std::string shell_quote(const std::string& s) {
    std::string quoted = "'";
    for (char c : s) {
        if (c == '\'') {
            quoted += "'\\''";
        } else {
            quoted.push_back(c);
        }
    }
    quoted += "'";
    return quoted;
}

inline std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

// Runs the CLI with the given arguments; `env` entries are NAME=VALUE.
inline CmdResult run_cli(const std::vector<std::string>& args,
                         const std::vector<std::string>& env = {}) {
    const TempDir capture;
    std::string command;
    for (const std::string& e : env) command += e + " ";
    command += shell_quote(STOPGATE_CLI_PATH);
    for (const std::string& a : args) command += " " + shell_quote(a);
    command += " >" + shell_quote(capture.file("out")) + " 2>" + shell_quote(capture.file("err"));
    const int status = std::system(command.c_str());
    CmdResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.out = slurp(capture.file("out"));
    result.err = slurp(capture.file("err"));
    return result;
}

}  // namespace test
