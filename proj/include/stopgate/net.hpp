#pragma once
// HTTP adapters: chat-completion client with retries, the three-stage
// diagnosis grader, a grader-backed success provider, a remote decision
// endpoint policy, and a text-embedding adapter.

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "stopgate/core.hpp"
#include "stopgate/features.hpp"
#include "stopgate/io.hpp"
#include "stopgate/labeling.hpp"
#include "stopgate/policy.hpp"

namespace stopgate {

// Grader reply violated the three-stage protocol.
struct GradingProtocolError : Error {
    using Error::Error;
};

namespace detail {
// "http://host:port/some/path" -> ("http://host:port", "/some/path").
inline std::pair<std::string, std::string> split_url(const std::string& url) {
    const std::size_t scheme = url.find("://");
    if (scheme == std::string::npos) throw ConfigError("endpoint URL needs a scheme: " + url);
    const std::size_t path = url.find('/', scheme + 3);
    if (path == std::string::npos) return {url, "/"};
    return {url.substr(0, path), url.substr(path)};
}

inline std::string render_template(std::string text,
                                   const std::map<std::string, std::string>& values) {
    for (const auto& [key, value] : values) {
        const std::string placeholder = "{" + key + "}";
        std::size_t at = 0;
        while ((at = text.find(placeholder, at)) != std::string::npos) {
            text.replace(at, placeholder.size(), value);
            at += value.size();
        }
    }
    return text;
}
}  // namespace detail

struct ChatMessage {
    std::string role;
    std::string content;
};

// Chat-completion client: POSTs {model, messages, temperature} and returns
// the first choice's message content. Transport failures and 5xx replies
// retry with exponential backoff, then surface as TransportError. A fresh
// connection per request keeps calls thread-safe; in-flight requests are
// bounded by max_in_flight.
class ChatClient {
public:
    struct Options {
        std::string url;
        std::string api_key;
        std::string model = "external-grader";
        double temperature = 0.0;
        int retries = 3;
        int backoff_ms = 50;
        int timeout_s = 60;
        int max_in_flight = 4;
    };

    explicit ChatClient(Options opts) : opts_(std::move(opts)) {
        if (opts_.url.empty()) {
            throw ConfigError("chat client: endpoint URL not configured "
                              "(set STOPGATE_LLM_URL or config llm_url)");
        }
        if (opts_.max_in_flight < 1) opts_.max_in_flight = 1;
    }

    std::string complete(const std::vector<ChatMessage>& messages) const {
        json request{{"model", opts_.model}, {"temperature", opts_.temperature}};
        json msgs = json::array();
        for (const auto& m : messages) {
            msgs.push_back({{"role", m.role}, {"content", m.content}});
        }
        request["messages"] = std::move(msgs);
        const std::string body = request.dump();

        const auto [base, path] = detail::split_url(opts_.url);
        InFlightGuard guard(*this);
        std::string last_error;
        for (int attempt = 0; attempt < std::max(1, opts_.retries); ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(
                    std::chrono::milliseconds(opts_.backoff_ms << (attempt - 1)));
            }
            httplib::Client client(base);
            client.set_connection_timeout(opts_.timeout_s);
            client.set_read_timeout(opts_.timeout_s);
            httplib::Headers headers;
            if (!opts_.api_key.empty()) {
                headers.emplace("Authorization", "Bearer " + opts_.api_key);
            }
            auto res = client.Post(path, headers, body, "application/json");
            if (!res) {
                last_error = "connection failed: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 500) {
                last_error = "server error " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) {
                throw Error("chat endpoint returned status " + std::to_string(res->status));
            }
            try {
                const json reply = json::parse(res->body);
                return reply.at("choices").at(0).at("message").at("content")
                    .get<std::string>();
            } catch (const json::exception& e) {
                throw Error(std::string("malformed chat reply: ") + e.what());
            }
        }
        throw TransportError("chat endpoint unreachable after " +
                             std::to_string(opts_.retries) + " attempts: " + last_error);
    }

    const Options& options() const { return opts_; }

private:
    class InFlightGuard {
    public:
        explicit InFlightGuard(const ChatClient& c) : client_(c) {
            std::unique_lock<std::mutex> lock(client_.mutex_);
            client_.slot_free_.wait(lock, [&] {
                return client_.in_flight_ < client_.opts_.max_in_flight;
            });
            ++client_.in_flight_;
        }
        ~InFlightGuard() {
            {
                std::lock_guard<std::mutex> lock(client_.mutex_);
                --client_.in_flight_;
            }
            client_.slot_free_.notify_one();
        }

    private:
        const ChatClient& client_;
    };

    Options opts_;
    mutable std::mutex mutex_;
    mutable std::condition_variable slot_free_;
    mutable int in_flight_ = 0;
};

inline ChatClient::Options chat_options_from_env(const RunConfig& cfg) {
    ChatClient::Options opts;
    opts.url = cfg.llm_url;
    opts.api_key = cfg.llm_key;
    opts.model = cfg.llm_model;
    if (opts.url.empty()) {
        if (const char* url = std::getenv("STOPGATE_LLM_URL")) opts.url = url;
    }
    if (opts.api_key.empty()) {
        if (const char* key = std::getenv("STOPGATE_LLM_KEY")) opts.api_key = key;
    }
    return opts;
}

// ---------------------------------------------------------------------------
// Grader prompts and protocol

// The grading prompt set; files override the built-in defaults.
struct GraderPrompts {
    std::string diagnosis;    // {conversation}
    std::string extraction;   // {diagnosis}
    std::string equivalence;  // {ground_truth}, {diagnosis}

    static GraderPrompts defaults();
    static GraderPrompts load(const std::string& dir);
};

// One Bernoulli success draw via the three-stage protocol: elicit a
// diagnosis from the conversation prefix, extract the diagnosis name
// ("None"/"Multiple" replies fail immediately), then judge equivalence
// against the ground truth (yes/no).
inline bool grade_with_llm(const ChatClient& client, const GraderPrompts& prompts,
                           const std::string& conversation_prefix,
                           const std::string& ground_truth) {
    const std::string paragraph = client.complete(
        {{"user", detail::render_template(prompts.diagnosis,
                                          {{"conversation", conversation_prefix}})}});

    std::string extracted = client.complete(
        {{"user", detail::render_template(prompts.extraction, {{"diagnosis", paragraph}})}});
    // Trim and compare case-insensitively against the protocol's sentinels.
    const auto trim = [](std::string s) {
        const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
        while (!s.empty() && is_space(s.front())) s.erase(s.begin());
        while (!s.empty() && is_space(s.back())) s.pop_back();
        return s;
    };
    const auto lower = [](std::string s) {
        for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return s;
    };
    extracted = trim(extracted);
    const std::string extracted_lower = lower(extracted);
    if (extracted_lower == "none" || extracted_lower == "multiple" ||
        extracted_lower == "'none'" || extracted_lower == "'multiple'") {
        return false;
    }

    const std::string verdict = client.complete(
        {{"user", detail::render_template(
                      prompts.equivalence,
                      {{"ground_truth", ground_truth}, {"diagnosis", extracted}})}});
    std::string token;
    for (char c : verdict) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!token.empty()) {
            break;
        }
    }
    if (token == "yes") return true;
    if (token == "no") return false;
    throw GradingProtocolError("equivalence stage replied neither yes nor no: " + verdict);
}

// Success provider backed by the grader endpoint over text trajectories.
class LlmSuccessProvider : public SuccessProvider {
public:
    LlmSuccessProvider(ChatClient::Options client_opts, GraderPrompts prompts)
        : client_(std::move(client_opts)), prompts_(std::move(prompts)) {}
    bool is_exact() const override { return false; }
    bool sample_term(const Trajectory& t, int prefix_len, Rng&) const override {
        std::string conversation;
        for (int i = 0; i < prefix_len; ++i) {
            const Observation& o = t.observations[static_cast<std::size_t>(i)];
            if (!o.text.has_value()) {
                throw StructuralError("grader labeling needs text observations (" +
                                      t.problem_id + ", observation " +
                                      std::to_string(i) + ")");
            }
            if (!conversation.empty()) conversation += "\n\n";
            conversation += *o.text;
        }
        return grade_with_llm(client_, prompts_, conversation, t.ground_truth);
    }

private:
    ChatClient client_;
    GraderPrompts prompts_;
};

// ---------------------------------------------------------------------------
// Remote decision endpoint

// Lets an external model serve as the policy: POST
// {"observations": [...], "prefix_len": n} -> {"p_terminate": x, "rationale"?: s}.
class RemotePolicy : public Policy {
public:
    explicit RemotePolicy(std::string url, int timeout_s = 60)
        : url_(std::move(url)), timeout_s_(timeout_s) {}

    Decision decide(const PrefixView& view) const override {
        json observations = json::array();
        for (const Observation& o : view.observations) observations.push_back(to_json(o));
        const json request{{"observations", std::move(observations)},
                           {"prefix_len", view.prefix_len()}};
        const auto [base, path] = detail::split_url(url_);
        httplib::Client client(base);
        client.set_connection_timeout(timeout_s_);
        client.set_read_timeout(timeout_s_);
        auto res = client.Post(path, request.dump(), "application/json");
        if (!res || res->status != 200) {
            throw TransportError("remote policy " + url_ + ": " +
                                 (res ? "status " + std::to_string(res->status)
                                      : "connection failed"));
        }
        try {
            const json reply = json::parse(res->body);
            Decision d;
            d.p_terminate = reply.at("p_terminate").get<double>();
            if (!(d.p_terminate >= 0.0 && d.p_terminate <= 1.0)) {
                throw Error("remote policy returned p_terminate outside [0, 1]");
            }
            if (reply.contains("rationale")) {
                d.rationale = reply.at("rationale").get<std::string>();
            }
            d.action = d.p_terminate >= 0.5 ? Action::Terminate : Action::Continue;
            return d;
        } catch (const json::exception& e) {
            throw Error(std::string("malformed remote policy reply: ") + e.what());
        }
    }

private:
    std::string url_;
    int timeout_s_;
};

// Text embedding endpoint: POST {"text": s} -> {"embedding": [...]}.
inline Embedder make_http_embedder(const std::string& url, int timeout_s = 60) {
    return [url, timeout_s](const std::string& text) {
        const auto [base, path] = detail::split_url(url);
        httplib::Client client(base);
        client.set_connection_timeout(timeout_s);
        client.set_read_timeout(timeout_s);
        auto res = client.Post(path, json{{"text", text}}.dump(), "application/json");
        if (!res || res->status != 200) {
            throw TransportError("embedding endpoint " + url + " failed");
        }
        try {
            return json::parse(res->body).at("embedding").get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw Error(std::string("malformed embedding reply: ") + e.what());
        }
    };
}

// ---------------------------------------------------------------------------
// Default prompt texts (the template files ship the same content)

inline GraderPrompts GraderPrompts::defaults() {
    GraderPrompts p;
    p.diagnosis =
        "{conversation}\n\n"
        "Stop asking questions now. What is the most likely diagnosis? Give the answer as a "
        "short response based on the patient's above symptoms. Do not explain.";
    p.extraction =
        "Identify and return the diagnosis name from the given **Query Paragraph**. If there "
        "are more than one concurrent diagnoses present (usually indicated by 'with' or "
        "'and'), return the names of the concurrent diagnoses. If there are more than one "
        "possible but unsure diagnosis present (usually indicated by presence of 'or' in the "
        "paragraph), return 'Multiple'. If there are no diagnoses present, then return "
        "'None'. Do not explain.\n\n"
        "**Example 1**: 'The final diagnosis is likely tinea manuum on the right hand and "
        "tinea pedis on both feet.' Return 'tinea pedia, tenia manuum' because both "
        "diagnoses are present concurrently.\n"
        "**Example 2**: 'Impetigo with eczema herpeticum'. Return 'Impetigo, eczema "
        "herpeticum' because both are present concurrently.\n"
        "**Example 3**: 'Possible diagnosis of regressed nevus or halo nevus.' Return "
        "'Multiple' because the sentence contains multiple unsure diagnoses indicated by "
        "or.\n"
        "**Example 4**: 'Genital herpes with concurrent lymphogranuloma venereum (LGV) or "
        "other sexually transmitted infection (STI) involving lymphatic swelling.' Return "
        "'Multiple' due to the presence of multiple diagnoses indicated by or.\n"
        "**Example 5**: '**Final Diagnosis:** Chronic bronchitis due to long-term smoking'. "
        "Return 'Chronic bronchitis'.\n"
        "**Example 6**: 'I need more information to arrive at a diagnosis. Consult your "
        "medical provider.' Return 'None' because there is no diagnosis.\n\n"
        "**Query Paragraph** : {diagnosis}";
    p.equivalence =
        "Identify if **Query Diagnosis 1** and **Query Diagnosis 2** are equivalent or "
        "synonymous names of the disease. Respond with a yes/no. Do not explain. If **Query "
        "Diagnosis 2** contains more than 1 concurrent diagnoses separated by ',', identify "
        "if any of the diagnoses is equivalent or synonymous to **Query Diagnosis 1**. Also, "
        "if **Diagnosis 1** is a subtype of **Diagnosis 2** respond with yes, but if "
        "**Diagnosis 2** is a subtype of **Diagnosis 1** respond with no.\n\n"
        "Example 1: **Diagnosis 1**: eczema ; **Diagnosis 2**: eczema, onychomycosis. "
        "Eczema is same between the two, so respond Yes.\n"
        "Example 2: **Diagnosis 1**: eczema ; **Diagnosis 2**: onychomycosis. They are "
        "different, so respond No.\n"
        "Example 3: **Diagnosis 1**: toe nail fungus ; **Diagnosis 2**: onychomycosis. They "
        "are synonymous, so return Yes.\n"
        "Example 4: **Diagnosis 1**: wart ; **Diagnosis 2**: verruca vulgaris. They are "
        "synonymous, so return Yes.\n"
        "Example 5: **Diagnosis 1**: lymphoma ; **Diagnosis 2**: hodgkin's lymphoma. "
        "Diagnosis 2 is subtype of Diagnosis 1, so return No.\n"
        "Example 6: **Diagnosis 1**: hodgkin's lymphoma ; **Diagnosis 2**: lymphoma. "
        "Diagnosis 1 is subtype of Diagnosis 2, so return Yes.\n"
        "Example 7: **Diagnosis 1**: melanoma ; **Diagnosis 2**: None. They are different, "
        "so respond No.\n"
        "Example 8: **Diagnosis 1**: melanoma ; **Diagnosis 2**: Multiple. They are "
        "different, so respond No.\n\n"
        "**Query Diagnosis 1**: {ground_truth}\n"
        "**Query Diagnosis 2**: {diagnosis}";
    return p;
}

inline GraderPrompts GraderPrompts::load(const std::string& dir) {
    const auto read_file = [&](const std::string& name) {
        const std::string path = dir + "/" + name;
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open prompt template " + path);
        std::ostringstream buffer;
        buffer << in.rdbuf();
        std::string text = buffer.str();
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        return text;
    };
    GraderPrompts p;
    p.diagnosis = read_file("grader_diagnosis.txt");
    p.extraction = read_file("grader_extraction.txt");
    p.equivalence = read_file("grader_equivalence.txt");
    return p;
}

// ---------------------------------------------------------------------------
// Conversation simulation (question regeneration for counterfactuals)

// System prompts for the information seeker and provider agents; the
// patient prompt carries a {case} placeholder for the case vignette.
struct SimPrompts {
    std::string doctor;
    std::string patient;

    static SimPrompts defaults();
    static SimPrompts load(const std::string& dir);
};

inline SimPrompts SimPrompts::defaults() {
    SimPrompts p;
    p.doctor =
        "You are an AI doctor. Arrive at a diagnosis of a patient's medical condition. Ask "
        "only one question at a time, and it should not be more than 1 line. Continue "
        "asking questions until you're 100% confident of the diagnosis. Do not ask the "
        "same question multiple times. Ask different questions to cover more information. "
        "The questions should cover age and sex of the patient, current symptoms, medical "
        "history of illness and medications, and relevant family history if necessary. "
        "Keep your questions short and brief to not confuse the patient. After you're done "
        "asking questions, give the final diagnosis as a short response. Do not explain, "
        "only give the diagnosis name. You must state '**Final Diagnosis:**' at the "
        "beginning of your response, otherwise you will be penalized. You must give only 1 "
        "diagnosis otherwise you will be penalized.";
    p.patient =
        "You are a patient. You do not have any medical knowledge. You have to describe "
        "your symptoms from the given case vignette based on the questions asked. Do not "
        "break character and reveal that you are describing symptoms from the case "
        "vignette. Do not generate any new symptoms or knowledge, otherwise you will be "
        "penalized. Do not reveal more information than what the question asks. Keep your "
        "answer short, to only 1 sentence. Simplify terminology used in the given "
        "paragraph to layman language.\nCase Vignette: {case}";
    return p;
}

inline SimPrompts SimPrompts::load(const std::string& dir) {
    const auto read_file = [&](const std::string& name) {
        const std::string path = dir + "/" + name;
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open prompt template " + path);
        std::ostringstream buffer;
        buffer << in.rdbuf();
        std::string text = buffer.str();
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        return text;
    };
    SimPrompts p;
    p.doctor = read_file("doctor.txt");
    p.patient = read_file("patient.txt");
    return p;
}

// Source of the case vignette the provider agent answers from.
using CaseLookup = std::function<std::string(const Trajectory&)>;

// Replaces the observation at `index` by dropping its question-answer
// pair, asking the seeker agent for a new question given the earlier
// conversation, and answering it with the provider agent. Endpoint
// sampling (temperature in `opts`) supplies the per-attempt diversity.
// Without a lookup the case vignette defaults to the first observation's
// text.
inline Perturber make_llm_perturber(ChatClient::Options opts, SimPrompts prompts,
                                    CaseLookup case_text = nullptr) {
    auto client = std::make_shared<ChatClient>(std::move(opts));
    CaseLookup lookup = case_text ? std::move(case_text) : CaseLookup([](const Trajectory& t) {
        if (t.observations.empty() || !t.observations.front().text.has_value()) {
            throw StructuralError("llm perturber: no case text for " + t.problem_id);
        }
        return *t.observations.front().text;
    });
    return [client, prompts = std::move(prompts),
            lookup = std::move(lookup)](const Trajectory& t, int index, int /*attempt*/) {
        if (index < 0 || index >= static_cast<int>(t.observations.size())) {
            throw RangeError("llm perturber: index " + std::to_string(index) +
                             " out of range for " + t.problem_id);
        }
        std::string conversation;
        for (int i = 0; i < index; ++i) {
            const Observation& o = t.observations[static_cast<std::size_t>(i)];
            if (!o.text.has_value()) {
                throw StructuralError("llm perturber: observation " + std::to_string(i) +
                                      " of " + t.problem_id + " has no text");
            }
            if (!conversation.empty()) conversation += "\n\n";
            conversation += *o.text;
        }
        const std::string question =
            client->complete({{"system", prompts.doctor}, {"user", conversation}});
        const std::string answer = client->complete(
            {{"system", detail::render_template(prompts.patient, {{"case", lookup(t)}})},
             {"user", question}});
        Observation replaced = t.observations[static_cast<std::size_t>(index)];
        replaced.text = "Doctor: " + question + "\nPatient: " + answer;
        replaced.features.reset();
        replaced.is_key.reset();
        return replaced;
    };
}

// Rationale source backed by the chat endpoint: asks for a short
// explanation of the example's decision given its conversation prefix.
class LlmRationaleProvider : public RationaleProvider {
public:
    LlmRationaleProvider(ChatClient::Options opts,
                         const std::map<std::string, const Trajectory*>& by_id)
        : client_(std::move(opts)), by_id_(by_id) {}

    std::string rationale_for(const TerminationExample& e) override {
        const auto it = by_id_.find(e.problem_id);
        if (it == by_id_.end()) {
            throw StructuralError("rationale: no trajectory for " + e.problem_id);
        }
        const Trajectory& t = *it->second;
        std::string conversation;
        for (int i = 0; i < e.prefix_len; ++i) {
            const Observation& o = t.observations[static_cast<std::size_t>(i)];
            if (!o.text.has_value()) {
                throw StructuralError("rationale: observation " + std::to_string(i) + " of " +
                                      t.problem_id + " has no text");
            }
            if (!conversation.empty()) conversation += "\n\n";
            conversation += *o.text;
        }
        const std::string decision = e.decision == Action::Terminate
                                         ? "terminate and give a final diagnosis"
                                         : "continue gathering information";
        return client_.complete(
            {{"user", conversation + "\n\nIn one short paragraph, explain why the correct "
                                     "decision at this point is to " +
                          decision + ". Do not state the decision itself."}});
    }

private:
    ChatClient client_;
    const std::map<std::string, const Trajectory*>& by_id_;
};

}  // namespace stopgate
