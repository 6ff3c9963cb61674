#pragma once
// Chat-formatted dataset export: renders manifest examples as
// system/user/assistant message triples for external trainers. The
// decision suffix is "Final Diagnosis: <answer>" for terminate and
// "Need More Information" for continue; variants prepend reasoning
// and/or a confidence line.

#include <json.hpp>

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "stopgate/cfgen.hpp"
#include "stopgate/core.hpp"

namespace stopgate {

// System prompts given to the termination model; the embedded {diagnosis},
// {reason}, {confidence} and {decision} braces are literal instructions to
// that model, not placeholders this library fills in.
struct TerminationPrompts {
    std::string standard;
    std::string reasoning;
    std::string confidence;
    std::string reasoning_confidence;
    std::string confidence_threshold;

    static TerminationPrompts defaults();
    static TerminationPrompts load(const std::string& dir);
};

inline TerminationPrompts TerminationPrompts::defaults() {
    TerminationPrompts p;
    p.standard =
        "You are a Medical Triage Assistant. Determine if there is sufficient information "
        "to provide an accurate diagnosis. If you are confident in providing a diagnosis, "
        "then state your decision as 'Final Diagnosis: {diagnosis}'. Otherwise, state your "
        "decision as 'Need More Information'.";
    p.reasoning =
        "You are a Medical Triage Assistant. Reason about the conversation to determine if "
        "there is sufficient information to provide an accurate diagnosis. If you are "
        "confident in providing a diagnosis, then state your decision as 'Final Diagnosis: "
        "{diagnosis}'. Otherwise, state your decision as 'Need More Information'. Format "
        "your response as:\n<think>\n{reason}\n</think>\n{decision}";
    p.confidence =
        "You are a Medical Triage Assistant. Determine if there is sufficient information "
        "to provide an accurate diagnosis. Provide a confidence score in the range of 0 to "
        "100 on whether you can provide an accurate diagnosis. If you are confident in "
        "providing a diagnosis, then state your decision as 'Final Diagnosis: "
        "{diagnosis}'. Otherwise, state your decision as 'Need More Information'. Format "
        "your response as:\nConfidence in providing a diagnosis: {confidence}\n{decision}";
    p.reasoning_confidence =
        "You are a Medical Triage Assistant. Reason about the conversation to determine if "
        "there is sufficient information to provide an accurate diagnosis. Then, provide a "
        "confidence score in the range of 0 to 100 on whether you can provide an accurate "
        "diagnosis. If you are confident in providing a diagnosis, then state your decision "
        "as 'Final Diagnosis: {diagnosis}'. Otherwise, state your decision as 'Need More "
        "Information'. Format your response as:\n<think>\n{reason}\n</think>\nConfidence "
        "in providing a diagnosis: {confidence}\n{decision}";
    p.confidence_threshold =
        "You are a Medical Triage Assistant. Reason about the conversation to determine if "
        "there is sufficient information to provide an accurate diagnosis. Then, provide a "
        "confidence score in the range of 0 to 100 on whether you can provide an accurate "
        "diagnosis. Format your response as:\nConfidence in providing a diagnosis: "
        "{confidence}";
    return p;
}

inline TerminationPrompts TerminationPrompts::load(const std::string& dir) {
    const auto read_file = [&](const std::string& name) {
        const std::string path = dir + "/" + name;
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open prompt template " + path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        return text;
    };
    TerminationPrompts p;
    p.standard = read_file("termination_standard.txt");
    p.reasoning = read_file("termination_reasoning.txt");
    p.confidence = read_file("termination_confidence.txt");
    p.reasoning_confidence = read_file("termination_reasoning_confidence.txt");
    p.confidence_threshold = read_file("termination_confidence_threshold.txt");
    return p;
}

enum class ChatVariant { Standard, Reasoning, Confidence, ReasoningConfidence };

inline ChatVariant chat_variant_from_string(const std::string& s) {
    if (s == "standard") return ChatVariant::Standard;
    if (s == "reasoning") return ChatVariant::Reasoning;
    if (s == "confidence") return ChatVariant::Confidence;
    if (s == "reasoning_confidence") return ChatVariant::ReasoningConfidence;
    throw ConfigError("unknown chat variant: " + s);
}

// Joins the first prefix_len observation texts with blank lines.
inline std::string render_conversation(const Trajectory& t, int prefix_len) {
    if (prefix_len < 0 || prefix_len > static_cast<int>(t.observations.size())) {
        throw RangeError("render_conversation: prefix_len " + std::to_string(prefix_len) +
                         " out of range for " + t.problem_id);
    }
    std::string out;
    for (int i = 0; i < prefix_len; ++i) {
        const Observation& o = t.observations[static_cast<std::size_t>(i)];
        if (!o.text.has_value()) {
            throw StructuralError("render_conversation: observation " + std::to_string(i) +
                                  " of " + t.problem_id + " has no text");
        }
        if (!out.empty()) out += "\n\n";
        out += *o.text;
    }
    return out;
}

namespace detail {

inline std::string decision_suffix(const TerminationExample& e, const Trajectory& t) {
    return e.decision == Action::Terminate ? "Final Diagnosis: " + t.ground_truth
                                           : std::string("Need More Information");
}

}  // namespace detail

// One training record: system prompt for the variant, the conversation
// prefix as the user turn, and the decision suffix as the assistant turn.
inline nlohmann::json chat_example_json(const TerminationExample& e, const Trajectory& t,
                                        const TerminationPrompts& prompts, ChatVariant variant) {
    std::string system;
    std::string assistant;
    const std::string suffix = detail::decision_suffix(e, t);
    const auto need_rationale = [&]() -> const std::string& {
        if (!e.rationale.has_value()) {
            throw StructuralError("chat export: example " + e.problem_id + " prefix " +
                                  std::to_string(e.prefix_len) +
                                  " has no rationale; augment the manifest first");
        }
        return *e.rationale;
    };
    const auto need_confidence = [&]() {
        if (!e.confidence_pct.has_value()) {
            throw StructuralError("chat export: example " + e.problem_id + " prefix " +
                                  std::to_string(e.prefix_len) +
                                  " has no confidence; augment the manifest first");
        }
        return confidence_phrase(*e.confidence_pct);
    };
    switch (variant) {
        case ChatVariant::Standard:
            system = prompts.standard;
            assistant = suffix;
            break;
        case ChatVariant::Reasoning:
            system = prompts.reasoning;
            assistant = "<think>\n" + need_rationale() + "\n</think>\n" + suffix;
            break;
        case ChatVariant::Confidence:
            system = prompts.confidence;
            assistant = need_confidence() + "\n" + suffix;
            break;
        case ChatVariant::ReasoningConfidence:
            system = prompts.reasoning_confidence;
            assistant = "<think>\n" + need_rationale() + "\n</think>\n" + need_confidence() +
                        "\n" + suffix;
            break;
    }
    return nlohmann::json{
        {"problem_id", e.problem_id},
        {"prefix_len", e.prefix_len},
        {"provenance", to_string(e.provenance)},
        {"messages",
         nlohmann::json::array({nlohmann::json{{"role", "system"}, {"content", system}},
                                nlohmann::json{{"role", "user"},
                                               {"content", render_conversation(t, e.prefix_len)}},
                                nlohmann::json{{"role", "assistant"}, {"content", assistant}}})}};
}

inline void write_chat_dataset_jsonl(const std::string& path, const DatasetManifest& manifest,
                                     const std::map<std::string, const Trajectory*>& by_id,
                                     const TerminationPrompts& prompts, ChatVariant variant,
                                     const std::string& cfg_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    const nlohmann::json header{{"type", "stopgate_chat_dataset"},
                                {"version", kVersion},
                                {"config_hash", cfg_hash},
                                {"n", manifest.examples.size()}};
    out << header.dump() << "\n";
    for (const TerminationExample& e : manifest.examples) {
        const auto it = by_id.find(e.problem_id);
        if (it == by_id.end()) {
            throw StructuralError("chat export: no trajectory for " + e.problem_id);
        }
        out << chat_example_json(e, *it->second, prompts, variant).dump() << "\n";
    }
    if (!out) throw Error("short write to " + path);
}

}  // namespace stopgate
