// Endpoint adapters: the chat client, the three-stage grader, remote
// policies, embeddings, simulated-agent perturbation, prompt templates,
// and chat-formatted dataset export.
#include <atomic>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <catch2/catch_amalgamated.hpp>
#include <stopgate/stopgate.hpp>

#include "helpers.hpp"

using namespace stopgate;

namespace {

// Local HTTP server running on a background thread for the scenario's
// registered handlers.
struct TestServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;

    void start() {
        port = server.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~TestServer() {
        server.stop();
        if (thread.joinable()) thread.join();
    }
    std::string url(const std::string& path) const {
        return "http://127.0.0.1:" + std::to_string(port) + path;
    }
};

// Chat endpoint whose reply is chosen by the first marker found in the
// last message's content; records every request for assertions.
struct ScriptedChat {
    TestServer server;
    std::map<std::string, std::string> replies;  // marker -> content
    std::vector<json> requests;
    std::vector<std::string> auth_headers;
    std::atomic<int> fail_first{0};  // respond 500 to this many requests
    std::mutex mutex;

    void start() {
        server.server.Post("/v1/chat", [this](const httplib::Request& req,
                                              httplib::Response& res) {
            std::lock_guard<std::mutex> lock(mutex);
            requests.push_back(json::parse(req.body));
            auth_headers.push_back(req.get_header_value("Authorization"));
            if (fail_first > 0) {
                --fail_first;
                res.status = 500;
                res.set_content("overloaded", "text/plain");
                return;
            }
            std::string content = "UNMATCHED";
            const json& messages = requests.back().at("messages");
            const std::string text =
                messages.at(messages.size() - 1).at("content").get<std::string>() +
                messages.at(0).at("content").get<std::string>();
            for (const auto& [marker, reply] : replies) {
                if (text.find(marker) != std::string::npos) {
                    content = reply;
                    break;
                }
            }
            res.set_content(
                json{{"choices",
                      json::array({json{{"message", json{{"role", "assistant"},
                                                         {"content", content}}}}})}}
                    .dump(),
                "application/json");
        });
        server.start();
    }

    ChatClient::Options options() const {
        ChatClient::Options opts;
        opts.url = server.url("/v1/chat");
        opts.retries = 3;
        opts.backoff_ms = 1;
        opts.timeout_s = 5;
        return opts;
    }
};

GraderPrompts marker_prompts() {
    GraderPrompts p;
    p.diagnosis = "STAGE-DIAGNOSE {conversation}";
    p.extraction = "STAGE-EXTRACT {diagnosis}";
    p.equivalence = "STAGE-JUDGE {ground_truth} vs {diagnosis}";
    return p;
}

Trajectory text_trajectory(const std::string& id, int n_obs) {
    Trajectory t;
    t.problem_id = id;
    t.ground_truth = "Influenza";
    t.domain = Domain::Medical;
    for (int i = 0; i < n_obs; ++i) {
        Observation o;
        o.index = i;
        o.kind = ObservationKind::QuestionAnswer;
        o.text = "Doctor: Q" + std::to_string(i) + "?\nPatient: A" + std::to_string(i) + ".";
        t.observations.push_back(std::move(o));
    }
    return t;
}

}  // namespace

TEST_CASE("split_url separates host from path") {
    CHECK(detail::split_url("http://localhost:8080/v1/chat") ==
          std::pair<std::string, std::string>("http://localhost:8080", "/v1/chat"));
    CHECK(detail::split_url("https://api.example.com") ==
          std::pair<std::string, std::string>("https://api.example.com", "/"));
    CHECK_THROWS_AS(detail::split_url("localhost:8080/x"), ConfigError);
}

TEST_CASE("render_template substitutes every occurrence") {
    CHECK(detail::render_template("{a} and {b} and {a}", {{"a", "x"}, {"b", "y"}}) ==
          "x and y and x");
    CHECK(detail::render_template("no placeholders", {{"a", "x"}}) == "no placeholders");
    CHECK(detail::render_template("{unknown}", {{"a", "x"}}) == "{unknown}");
}

TEST_CASE("chat client sends model, temperature, and auth") {
    ScriptedChat chat;
    chat.replies["ping"] = "pong";
    chat.start();

    ChatClient::Options opts = chat.options();
    opts.model = "my-model";
    opts.temperature = 0.7;
    opts.api_key = "secret-key";
    const ChatClient client(opts);
    CHECK(client.complete({{"user", "ping"}}) == "pong");

    REQUIRE(chat.requests.size() == 1);
    const json& req = chat.requests[0];
    CHECK(req.at("model") == "my-model");
    CHECK(req.at("temperature") == 0.7);
    CHECK(req.at("messages")[0].at("role") == "user");
    CHECK(chat.auth_headers[0] == "Bearer secret-key");

    ChatClient::Options anon = chat.options();
    const ChatClient bare(anon);
    bare.complete({{"user", "ping"}});
    CHECK(chat.auth_headers[1].empty());

    ChatClient::Options empty;
    CHECK_THROWS_AS(ChatClient(empty), ConfigError);
}

TEST_CASE("chat client retries server errors, then gives up") {
    ScriptedChat chat;
    chat.replies["hello"] = "world";
    chat.start();

    SECTION("one 500 then success") {
        chat.fail_first = 1;
        const ChatClient client(chat.options());
        CHECK(client.complete({{"user", "hello"}}) == "world");
        CHECK(chat.requests.size() == 2);
    }
    SECTION("exhausted retries surface as TransportError") {
        chat.fail_first = 100;
        const ChatClient client(chat.options());
        CHECK_THROWS_AS(client.complete({{"user", "hello"}}), TransportError);
        CHECK(chat.requests.size() == 3);  // opts.retries
    }
    SECTION("connection refused is a TransportError") {
        ChatClient::Options opts = chat.options();
        opts.url = "http://127.0.0.1:1/v1/chat";
        opts.retries = 2;
        CHECK_THROWS_AS(ChatClient(opts).complete({{"user", "x"}}), TransportError);
    }
    SECTION("a 404 is not retried") {
        ChatClient::Options opts = chat.options();
        opts.url = chat.server.url("/not-registered");
        try {
            ChatClient(opts).complete({{"user", "x"}});
            FAIL("expected Error");
        } catch (const TransportError&) {
            FAIL("a 4xx must not look transient");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("404") != std::string::npos);
        }
    }
}

TEST_CASE("grade_with_llm runs the three-stage protocol") {
    ScriptedChat chat;
    chat.replies["STAGE-DIAGNOSE"] = "The findings suggest influenza.";
    chat.replies["STAGE-EXTRACT"] = "influenza";
    chat.start();
    const GraderPrompts prompts = marker_prompts();

    SECTION("equivalence yes") {
        chat.replies["STAGE-JUDGE"] = "yes";
        const ChatClient client(chat.options());
        CHECK(grade_with_llm(client, prompts, "Doctor: hi", "Influenza"));
        REQUIRE(chat.requests.size() == 3);
        const auto content_of = [&](std::size_t i) {
            return chat.requests[i].at("messages")[0].at("content").get<std::string>();
        };
        CHECK(content_of(0) == "STAGE-DIAGNOSE Doctor: hi");
        CHECK(content_of(1) == "STAGE-EXTRACT The findings suggest influenza.");
        CHECK(content_of(2) == "STAGE-JUDGE Influenza vs influenza");
    }
    SECTION("equivalence no, first-token parsing") {
        chat.replies["STAGE-JUDGE"] = "No, these are different conditions.";
        const ChatClient client(chat.options());
        CHECK_FALSE(grade_with_llm(client, prompts, "conv", "Influenza"));
    }
    SECTION("leading whitespace and punctuation around yes") {
        chat.replies["STAGE-JUDGE"] = "  Yes. The terms match.";
        const ChatClient client(chat.options());
        CHECK(grade_with_llm(client, prompts, "conv", "Influenza"));
    }
    SECTION("extraction sentinels fail without a third call") {
        for (const std::string sentinel : {"None", "none", " Multiple ", "'None'"}) {
            chat.requests.clear();
            chat.replies["STAGE-EXTRACT"] = sentinel;
            const ChatClient client(chat.options());
            CHECK_FALSE(grade_with_llm(client, prompts, "conv", "Influenza"));
            CHECK(chat.requests.size() == 2);
        }
    }
    SECTION("a non-verdict reply is a protocol error") {
        chat.replies["STAGE-JUDGE"] = "maybe?";
        const ChatClient client(chat.options());
        CHECK_THROWS_AS(grade_with_llm(client, prompts, "conv", "Influenza"),
                        GradingProtocolError);
    }
}

TEST_CASE("LlmSuccessProvider grades text prefixes") {
    ScriptedChat chat;
    chat.replies["STAGE-DIAGNOSE"] = "Looks like influenza.";
    chat.replies["STAGE-EXTRACT"] = "influenza";
    chat.replies["STAGE-JUDGE"] = "yes";
    chat.start();

    const LlmSuccessProvider provider(chat.options(), marker_prompts());
    CHECK_FALSE(provider.is_exact());

    const Trajectory t = text_trajectory("med-1", 3);
    Rng rng(1);
    CHECK(provider.sample_term(t, 2, rng));
    // the graded conversation is the two-observation prefix
    const std::string diagnose_msg =
        chat.requests[0].at("messages")[0].at("content").get<std::string>();
    CHECK(diagnose_msg.find("Q0") != std::string::npos);
    CHECK(diagnose_msg.find("Q1") != std::string::npos);
    CHECK(diagnose_msg.find("Q2") == std::string::npos);

    Trajectory no_text = t;
    no_text.observations[0].text.reset();
    no_text.observations[0].features = std::vector<double>{1.0};
    CHECK_THROWS_AS(provider.sample_term(no_text, 1, rng), StructuralError);
}

TEST_CASE("remote policies decode decision replies") {
    TestServer server;
    std::vector<json> seen;
    std::mutex mutex;
    server.server.Post("/decide", [&](const httplib::Request& req, httplib::Response& res) {
        std::lock_guard<std::mutex> lock(mutex);
        seen.push_back(json::parse(req.body));
        const int prefix_len = seen.back().at("prefix_len").get<int>();
        res.set_content(json{{"p_terminate", prefix_len >= 2 ? 0.75 : 0.25},
                             {"rationale", "scored"}}
                            .dump(),
                        "application/json");
    });
    server.server.Post("/bad-range", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(json{{"p_terminate", 1.5}}.dump(), "application/json");
    });
    server.server.Post("/garbled", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("{\"nope\":", "application/json");
    });
    server.start();

    const Trajectory t = text_trajectory("r", 3);
    const RemotePolicy policy(server.url("/decide"), 5);

    const Decision one = policy.decide(make_prefix_view(t, 1, 3));
    CHECK(one.action == Action::Continue);
    CHECK(one.p_terminate == 0.25);
    const Decision two = policy.decide(make_prefix_view(t, 2, 3));
    CHECK(two.action == Action::Terminate);
    CHECK(two.p_terminate == 0.75);
    REQUIRE(two.rationale.has_value());
    CHECK(*two.rationale == "scored");

    REQUIRE(seen.size() == 2);
    CHECK(seen[0].at("observations").size() == 1);
    CHECK(seen[1].at("observations").size() == 2);
    CHECK(seen[1].at("observations")[1].at("text").get<std::string>().find("Q1") !=
          std::string::npos);

    CHECK_THROWS_AS(RemotePolicy(server.url("/bad-range"), 5).decide(make_prefix_view(t, 1, 3)),
                    Error);
    CHECK_THROWS_AS(RemotePolicy(server.url("/garbled"), 5).decide(make_prefix_view(t, 1, 3)),
                    Error);
    CHECK_THROWS_AS(RemotePolicy("http://127.0.0.1:1/decide", 1)
                        .decide(make_prefix_view(t, 1, 3)),
                    TransportError);
}

TEST_CASE("http embedder posts text and reads the vector") {
    TestServer server;
    server.server.Post("/embed", [](const httplib::Request& req, httplib::Response& res) {
        const json j = json::parse(req.body);
        const double len = static_cast<double>(j.at("text").get<std::string>().size());
        res.set_content(json{{"embedding", {len, 1.0}}}.dump(), "application/json");
    });
    server.start();

    const Embedder embed = make_http_embedder(server.url("/embed"), 5);
    CHECK(embed("hello") == std::vector<double>{5.0, 1.0});
    CHECK_THROWS_AS(make_http_embedder("http://127.0.0.1:1/embed", 1)("x"), TransportError);
}

TEST_CASE("prompt templates on disk match the built-in defaults") {
    const std::string dir = STOPGATE_TEMPLATE_DIR;

    const GraderPrompts grader_disk = GraderPrompts::load(dir);
    const GraderPrompts grader_builtin = GraderPrompts::defaults();
    CHECK(grader_disk.diagnosis == grader_builtin.diagnosis);
    CHECK(grader_disk.extraction == grader_builtin.extraction);
    CHECK(grader_disk.equivalence == grader_builtin.equivalence);

    const SimPrompts sim_disk = SimPrompts::load(dir);
    const SimPrompts sim_builtin = SimPrompts::defaults();
    CHECK(sim_disk.doctor == sim_builtin.doctor);
    CHECK(sim_disk.patient == sim_builtin.patient);

    const TerminationPrompts term_disk = TerminationPrompts::load(dir);
    const TerminationPrompts term_builtin = TerminationPrompts::defaults();
    CHECK(term_disk.standard == term_builtin.standard);
    CHECK(term_disk.reasoning == term_builtin.reasoning);
    CHECK(term_disk.confidence == term_builtin.confidence);
    CHECK(term_disk.reasoning_confidence == term_builtin.reasoning_confidence);
    CHECK(term_disk.confidence_threshold == term_builtin.confidence_threshold);

    // the rendered stages carry their placeholders
    CHECK(grader_builtin.diagnosis.find("{conversation}") != std::string::npos);
    CHECK(grader_builtin.extraction.find("{diagnosis}") != std::string::npos);
    CHECK(grader_builtin.equivalence.find("{ground_truth}") != std::string::npos);
    CHECK(sim_builtin.patient.find("{case}") != std::string::npos);

    CHECK_THROWS_AS(GraderPrompts::load("/nonexistent-dir"), Error);
    CHECK_THROWS_AS(SimPrompts::load("/nonexistent-dir"), Error);
    CHECK_THROWS_AS(TerminationPrompts::load("/nonexistent-dir"), Error);
}

TEST_CASE("the llm perturber regenerates one question-answer exchange") {
    ScriptedChat chat;
    chat.replies["DOCSYS"] = "Any recent travel?";
    chat.replies["PATSYS"] = "No, I have not traveled.";
    chat.start();

    SimPrompts prompts;
    prompts.doctor = "DOCSYS";
    prompts.patient = "PATSYS case: {case}";
    const Perturber perturb = make_llm_perturber(chat.options(), prompts);

    const Trajectory t = text_trajectory("med-2", 4);
    const Observation replaced = perturb(t, 2, 1);

    CHECK(replaced.index == 2);
    CHECK(replaced.text ==
          "Doctor: Any recent travel?\nPatient: No, I have not traveled.");
    CHECK_FALSE(replaced.features.has_value());
    CHECK_FALSE(replaced.is_key.has_value());

    REQUIRE(chat.requests.size() == 2);
    // the doctor sees the conversation before the perturbed index
    const std::string doctor_user =
        chat.requests[0].at("messages")[1].at("content").get<std::string>();
    CHECK(doctor_user.find("Q0") != std::string::npos);
    CHECK(doctor_user.find("Q1") != std::string::npos);
    CHECK(doctor_user.find("Q2") == std::string::npos);
    CHECK(chat.requests[0].at("messages")[0].at("content") == "DOCSYS");
    // the patient prompt carries the case text and the regenerated question
    const std::string patient_system =
        chat.requests[1].at("messages")[0].at("content").get<std::string>();
    CHECK(patient_system.find(*t.observations[0].text) != std::string::npos);
    CHECK(chat.requests[1].at("messages")[1].at("content") == "Any recent travel?");

    CHECK_THROWS_AS(perturb(t, 9, 1), RangeError);
    Trajectory no_text = t;
    no_text.observations[1].text.reset();
    no_text.observations[1].features = std::vector<double>{1.0};
    CHECK_THROWS_AS(perturb(no_text, 2, 1), StructuralError);
}

TEST_CASE("the llm rationale provider asks for a decision explanation") {
    ScriptedChat chat;
    chat.replies["why the correct decision"] = "The relevant signs are present.";
    chat.start();

    const Trajectory t = text_trajectory("med-3", 3);
    std::map<std::string, const Trajectory*> by_id{{t.problem_id, &t}};
    LlmRationaleProvider provider(chat.options(), by_id);

    TerminationExample e;
    e.problem_id = t.problem_id;
    e.prefix_len = 2;
    e.decision = Action::Terminate;
    CHECK(provider.rationale_for(e) == "The relevant signs are present.");
    std::string asked = chat.requests[0].at("messages")[0].at("content").get<std::string>();
    CHECK(asked.find("terminate and give a final diagnosis") != std::string::npos);
    CHECK(asked.find("Q1") != std::string::npos);

    e.decision = Action::Continue;
    provider.rationale_for(e);
    asked = chat.requests[1].at("messages")[0].at("content").get<std::string>();
    CHECK(asked.find("continue gathering information") != std::string::npos);

    TerminationExample stranger = e;
    stranger.problem_id = "unknown";
    CHECK_THROWS_AS(provider.rationale_for(stranger), StructuralError);
}

TEST_CASE("chat examples pair the prefix with the decision suffix") {
    const Trajectory t = text_trajectory("chat-1", 3);
    const TerminationPrompts prompts = TerminationPrompts::defaults();

    TerminationExample term;
    term.problem_id = t.problem_id;
    term.prefix_len = 2;
    term.decision = Action::Terminate;
    term.provenance = Provenance::OriginalTerminate;

    const json j = chat_example_json(term, t, prompts, ChatVariant::Standard);
    CHECK(j.at("problem_id") == "chat-1");
    CHECK(j.at("prefix_len") == 2);
    CHECK(j.at("provenance") == "original_terminate");
    REQUIRE(j.at("messages").size() == 3);
    CHECK(j.at("messages")[0].at("role") == "system");
    CHECK(j.at("messages")[0].at("content") == prompts.standard);
    CHECK(j.at("messages")[1].at("role") == "user");
    CHECK(j.at("messages")[1].at("content") ==
          *t.observations[0].text + "\n\n" + *t.observations[1].text);
    CHECK(j.at("messages")[2].at("role") == "assistant");
    CHECK(j.at("messages")[2].at("content") == "Final Diagnosis: Influenza");

    TerminationExample cont = term;
    cont.decision = Action::Continue;
    cont.provenance = Provenance::CounterfactualContinue;
    const json jc = chat_example_json(cont, t, prompts, ChatVariant::Standard);
    CHECK(jc.at("messages")[2].at("content") == "Need More Information");
}

TEST_CASE("chat variants require their augmentations") {
    const Trajectory t = text_trajectory("chat-2", 2);
    const TerminationPrompts prompts = TerminationPrompts::defaults();

    TerminationExample e;
    e.problem_id = t.problem_id;
    e.prefix_len = 1;
    e.decision = Action::Terminate;
    e.provenance = Provenance::OriginalTerminate;

    CHECK_THROWS_AS(chat_example_json(e, t, prompts, ChatVariant::Reasoning), StructuralError);
    CHECK_THROWS_AS(chat_example_json(e, t, prompts, ChatVariant::Confidence),
                    StructuralError);

    e.rationale = "the evidence is in";
    e.confidence_pct = 85;

    const json reasoning = chat_example_json(e, t, prompts, ChatVariant::Reasoning);
    CHECK(reasoning.at("messages")[2].at("content") ==
          "<think>\nthe evidence is in\n</think>\nFinal Diagnosis: Influenza");
    CHECK(reasoning.at("messages")[0].at("content") == prompts.reasoning);

    const json confidence = chat_example_json(e, t, prompts, ChatVariant::Confidence);
    CHECK(confidence.at("messages")[2].at("content") ==
          "Confidence in providing a diagnosis: 85%\nFinal Diagnosis: Influenza");

    const json both = chat_example_json(e, t, prompts, ChatVariant::ReasoningConfidence);
    CHECK(both.at("messages")[2].at("content") ==
          "<think>\nthe evidence is in\n</think>\nConfidence in providing a diagnosis: "
          "85%\nFinal Diagnosis: Influenza");

    CHECK(chat_variant_from_string("reasoning") == ChatVariant::Reasoning);
    CHECK_THROWS_AS(chat_variant_from_string("mystery"), ConfigError);
}

TEST_CASE("chat dataset export writes one record per example") {
    const Trajectory t = text_trajectory("chat-3", 3);
    DatasetManifest manifest;
    for (int prefix = 1; prefix <= 2; ++prefix) {
        TerminationExample e;
        e.problem_id = t.problem_id;
        e.prefix_len = prefix;
        e.decision = prefix == 2 ? Action::Terminate : Action::Continue;
        e.provenance = prefix == 2 ? Provenance::OriginalTerminate
                                   : Provenance::CounterfactualContinue;
        manifest.examples.push_back(e);
        manifest.counts.add(e.provenance);
    }
    std::map<std::string, const Trajectory*> by_id{{t.problem_id, &t}};

    test::TempDir dir;
    const std::string path = dir.file("chat.jsonl");
    write_chat_dataset_jsonl(path, manifest, by_id, TerminationPrompts::defaults(),
                             ChatVariant::Standard, "cfg");

    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(json::parse(line).at("type") == "stopgate_chat_dataset");
    int records = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        CHECK(j.at("messages").size() == 3);
        ++records;
    }
    CHECK(records == 2);

    DatasetManifest orphan = manifest;
    orphan.examples[0].problem_id = "missing";
    CHECK_THROWS_AS(write_chat_dataset_jsonl(path, orphan, by_id,
                                             TerminationPrompts::defaults(),
                                             ChatVariant::Standard, "cfg"),
                    StructuralError);
}
