// Acceptance gate: one PASS/FAIL line per primary criterion, each checked
// against its time budget. Exit status is non-zero if any gating criterion fails.

#include "counsel/cli.hpp"
#include "counsel/dataset.hpp"
#include "counsel/experiment.hpp"
#include "counsel/judge.hpp"
#include "counsel/prompt_library.hpp"
#include "counsel/service.hpp"

#include "support.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

using namespace counsel;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
    bool skipped = false;
};

struct Criterion {
    std::string name;
    double budget_seconds;
    std::function<Outcome()> check;
    bool gating = true;
};

Outcome fail(std::string detail) { return {false, std::move(detail)}; }

Outcome prompt_fidelity() {
    const std::vector<std::pair<std::string, std::string>> golden{
        {"initial.open", "Can you tell me more about what's been on your mind lately?"},
        {"followup.impact", "How have these thoughts affected your daily life?"},
        {"followup.triggers", "Have you noticed any patterns or triggers for these feelings?"},
        {"empathy.coping", "That sounds really challenging, can you share more about how you're coping?"},
        {"empathy.validate", "It's okay to feel this way, let's explore what might help you feel better."},
    };
    const auto catalog = builtin_catalog();
    for (const auto& [id, text] : golden) {
        const auto* t = catalog.find(id);
        if (t == nullptr) return fail("missing template " + id);
        if (t->text != text) return fail(id + " differs: '" + t->text + "'");
    }
    return {true, "5/5 prompt strings byte-identical"};
}

Outcome stage_properties() {
    const auto rules = SignalRules::from_data_dir(testing::data_dir());
    std::mt19937 rng(1234567);
    constexpr int kSequences = 1000;
    for (int i = 0; i < kSequences; ++i) {
        const auto r = testing::check_random_session(rng, rules, std::uniform_int_distribution<int>(1, 15)(rng));
        if (!r.ok) return fail("sequence " + std::to_string(i) + ": " + r.failure);
    }
    return {true, std::to_string(kSequences) + " random sequences"};
}

Outcome verdict_round_trip() {
    const auto rubric = testing::experiment_rubric();
    std::mt19937 rng(777);
    constexpr int kVerdicts = 1000;
    for (int i = 0; i < kVerdicts; ++i) {
        const auto v = testing::random_verdict(rng, rubric);
        if (judge::parse_verdict(judge::format_verdict(v, rubric), rubric) != v) {
            return fail("round-trip mismatch for:\n" + judge::format_verdict(v, rubric));
        }
    }
    using K = judge::VerdictError::Kind;
    const std::vector<std::pair<K, std::string>> malformed{
        {K::MissingDimension, "relevance: 4\nempathy: 5\ncontext: 4\nfeedback: x"},
        {K::DuplicateDimension, "relevance: 4\nrelevance: 3\nempathy: 5\ncontext: 4\nsatisfaction: 5\nfeedback: x"},
        {K::OutOfRange, "relevance: 9\nempathy: 5\ncontext: 4\nsatisfaction: 5\nfeedback: x"},
        {K::NoFeedbackLine, "relevance: 4\nempathy: 5\ncontext: 4\nsatisfaction: 5"},
        {K::Unparseable, "The counselor did well overall."},
    };
    for (const auto& [kind, raw] : malformed) {
        try {
            judge::parse_verdict(raw, rubric);
            return fail("accepted malformed input expected to raise " + std::string(judge::to_string(kind)));
        } catch (const judge::VerdictError& e) {
            if (e.kind() != kind) {
                return fail("expected " + std::string(judge::to_string(kind)) + ", got " + judge::to_string(e.kind()).data());
            }
        }
    }
    return {true, std::to_string(kVerdicts) + " round-trips, 5/5 error classes"};
}

Outcome aggregation_oracle() {
    const auto rubric = testing::experiment_rubric();
    std::mt19937 rng(2024);
    double worst = 0;
    constexpr int kSets = 500;
    for (int s = 0; s < kSets; ++s) {
        std::vector<judge::JudgeVerdict> vs;
        const int n = std::uniform_int_distribution<int>(1, 60)(rng);
        for (int i = 0; i < n; ++i) vs.push_back(testing::random_verdict(rng, rubric));
        const auto agg = judge::aggregate(vs, rubric);
        for (const auto& id : rubric.dimension_ids()) {
            long double sum = 0;
            for (const auto& v : vs) sum += v.scores.at(id);
            worst = std::max(worst, static_cast<double>(std::abs(static_cast<long double>(agg.means.at(id)) - sum / n)));
        }
    }
    std::ostringstream d;
    d << kSets << " random verdict sets, max |error| = " << worst;
    return {worst <= 1e-9, d.str()};
}

Outcome table_reproduction() {
    const auto resources = testing::shipped_resources();
    const auto rubric = testing::experiment_rubric();
    const auto scenarios = experiment::load_scenarios(testing::data_dir() / "scenarios.json");
    MockBackend judge(testing::reference_judge_script(scenarios, resources, rubric));
    testing::TaggingCounselor counselor;
    experiment::RunOptions options;
    options.conversation.clock = frozen_clock(testing::kFrozenTime);
    const auto table = experiment::run_matrix(experiment::all_methods(), scenarios, counselor, judge, rubric, resources, options);
    const auto parsed = testing::parse_text_table(experiment::emit_table(table, experiment::TableFormat::Text));
    int matched = 0;
    for (const auto& row : testing::reference_table()) {
        const auto name = experiment::method_variant(row.kind).name;
        const auto it = parsed.find(name);
        if (it == parsed.end() || it->second.size() != 4) return fail("row missing: " + name);
        for (std::size_t d = 0; d < 4; ++d) {
            if (it->second[d] != row.values[d]) {
                char buf[128];
                std::snprintf(buf, sizeof(buf), "%s %s: got %.1f, want %.1f", name.c_str(),
                              rubric.dimensions[d].name.c_str(), it->second[d], row.values[d]);
                return fail(buf);
            }
            ++matched;
        }
    }
    return {matched == 20, std::to_string(matched) + "/20 values equal"};
}

Outcome anonymization_sweep() {
    const auto rules = dataset::default_pii_rules();
    const auto roles = dataset::RoleMap::shipped();
    const Clock clock = frozen_clock(testing::kFrozenTime);
    const auto corpus = dataset::parse_raw(read_file(testing::data_dir() / "fixtures" / "dialogues.jsonl"), "jsonl");
    if (corpus.dialogues.size() != 25) return fail("fixture corpus has " + std::to_string(corpus.dialogues.size()) + " dialogues");

    int planted = 0;
    int residual = 0;
    std::map<dataset::PiiClass, int> by_class;
    for (const auto& d : corpus.dialogues) {
        for (const auto& e : d.exchanges) planted += dataset::count_pii_matches(e.text, rules);
        const auto [anon, report] = dataset::anonymize(d, rules);
        for (const auto& [cls, n] : report.replacements) by_class[cls] += n;
        const auto cleaned = dataset::clean(anon);
        if (!cleaned) continue;
        const auto record = dataset::standardize(*cleaned, "general", {}, "", roles, clock);
        for (const auto& t : record.turns) residual += dataset::count_pii_matches(t.text, rules);
    }
    const bool all_classes = by_class.size() == 5 &&
                             std::all_of(by_class.begin(), by_class.end(), [](const auto& kv) { return kv.second > 0; });

    const auto control = dataset::parse_raw(read_file(testing::data_dir() / "fixtures" / "clean_control.jsonl"), "jsonl");
    int control_replacements = 0;
    for (const auto& d : control.dialogues) control_replacements += dataset::anonymize(d, rules).second.total;

    std::ostringstream detail;
    detail << planted << " planted across " << by_class.size() << " classes, " << residual
           << " residual matches, control replacements " << control_replacements;
    return {planted >= 20 && all_classes && residual == 0 && control_replacements == 0 && !control.dialogues.empty(),
            detail.str()};
}

Outcome end_to_end_mock_run() {
    const auto out_dir = std::filesystem::temp_directory_path() / "counsel_acceptance_e2e";
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> outputs;
    for (int run = 0; run < 2; ++run) {
        for (const char* format : {"text", "csv", "json"}) {
            const auto path = out_dir / (std::string("run") + std::to_string(run) + "." + format);
            std::ostringstream out, err;
            std::istringstream in;
            const int code = cli_dispatch(
                {"experiment", "--scenarios", (testing::data_dir() / "scenarios.json").string(), "--methods", "all",
                 "--counselor-backend", (testing::data_dir() / "backends" / "mock.json").string(), "--judge-backend",
                 (testing::data_dir() / "backends" / "mock-judge.json").string(), "--out-format", format, "--out",
                 path.string(), "--concurrency", "4", "--frozen-time", testing::kFrozenTime},
                out, err, in);
            if (code != 0) return fail(std::string("experiment exited ") + std::to_string(code) + ": " + err.str());
            outputs.push_back(read_file(path));
        }
    }
    for (std::size_t i = 0; i < 3; ++i) {
        if (outputs[i] != outputs[i + 3]) return fail("run outputs differ in format #" + std::to_string(i));
    }
    const auto table = experiment::table_from_json(nlohmann::json::parse(outputs[2]));
    if (table.rows.size() != 5 || table.scenario_count != 10) return fail("unexpected table shape");
    for (const auto& row : table.rows) {
        if (row.partial || row.scored != 10) return fail(row.method + " incomplete: " + row.error);
    }
    std::filesystem::remove_all(out_dir);
    return {true, "5 methods x 10 scenarios, text/csv/json byte-identical across 2 runs"};
}

Outcome service_contract() {
    service::ServiceOptions options;
    options.clock = frozen_clock(testing::kFrozenTime);
    service::ConsultationService svc(std::make_shared<MockBackend>(), testing::shipped_resources(), options);
    httplib::Server server;
    service::mount_routes(server, svc);
    server.new_task_queue = [] { return new httplib::ThreadPool(16); };
    const int port = server.bind_to_any_port("127.0.0.1");
    if (port < 0) return fail("cannot bind a local port");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    constexpr int kSessions = 10;
    constexpr int kMessages = 50;
    std::vector<std::string> ids;
    {
        httplib::Client client("127.0.0.1", port);
        for (int i = 0; i < kSessions; ++i) {
            const auto r = client.Post("/sessions", "{}", "application/json");
            if (!r || r->status != 201) {
                server.stop();
                listener.join();
                return fail("session creation failed");
            }
            ids.push_back(nlohmann::json::parse(r->body)["session_id"]);
        }
    }

    std::vector<std::atomic<int>> accepted(kSessions);
    std::atomic<int> transport_errors{0};
    std::vector<std::thread> posters;
    // Every poster targets all sessions so same-session posts overlap.
    for (int t = 0; t < kSessions; ++t) {
        posters.emplace_back([&, t] {
            httplib::Client client("127.0.0.1", port);
            for (int k = 0; k < kMessages / kSessions; ++k) {
                const int s = (t + k) % kSessions;
                const auto body = nlohmann::json{{"text", "message " + std::to_string(t) + "-" + std::to_string(k)}}.dump();
                const auto r = client.Post("/sessions/" + ids[static_cast<std::size_t>(s)] + "/messages", body, "application/json");
                if (!r) ++transport_errors;
                else if (r->status == 200) ++accepted[static_cast<std::size_t>(s)];
            }
        });
    }
    for (auto& p : posters) p.join();

    int total = 0;
    std::string problem;
    httplib::Client client("127.0.0.1", port);
    for (int s = 0; s < kSessions && problem.empty(); ++s) {
        const auto r = client.Get("/sessions/" + ids[static_cast<std::size_t>(s)]);
        const auto doc = nlohmann::json::parse(r->body);
        const auto& turns = doc["turns"];
        const int n = accepted[static_cast<std::size_t>(s)];
        total += n;
        if (n != kMessages / kSessions || turns.size() != static_cast<std::size_t>(2 * n + 1)) {
            problem = "session " + std::to_string(s) + " has " + std::to_string(turns.size()) + " turns for " +
                      std::to_string(n) + " accepted messages";
        }
        for (std::size_t i = 0; i < turns.size() && problem.empty(); ++i) {
            if (turns[i]["role"] != (i % 2 ? "User" : "Assistant")) problem = "alternation broken";
        }
    }
    server.stop();
    listener.join();
    if (!problem.empty()) return fail(problem);
    if (transport_errors > 0) return fail(std::to_string(transport_errors.load()) + " transport errors");
    if (total != kMessages) return fail(std::to_string(total) + "/" + std::to_string(kMessages) + " messages accepted");
    return {true, "50 messages across 10 sessions, 11 turns and strict alternation in each"};
}

Outcome live_smoke() {
    const char* key = std::getenv("OPENAI_API_KEY");
    if (key == nullptr || *key == '\0') return {true, "OPENAI_API_KEY not set", true};
    const char* base = std::getenv("OPENAI_BASE_URL");
    BackendConfig config;
    config.kind = BackendKind::Http;
    config.base_url = base != nullptr && *base != '\0' ? base : "https://api.openai.com/v1";
    config.api_key_env = "OPENAI_API_KEY";
    const auto backend = make_backend(config);
    const auto resources = testing::shipped_resources();
    const experiment::Scenario scenario{"live", "work stress", {"I'm overwhelmed by deadlines at work."}};
    const auto transcript =
        experiment::run_conversation(experiment::method_variant(experiment::MethodKind::ProposedGPT4), scenario, *backend, resources);
    if (is_blank(transcript.back().text)) return fail("empty counselor reply");
    const auto verdict = judge::score_transcript(transcript, testing::experiment_rubric(), *backend, 2);
    return {!verdict.scores.empty(), "live reply received and verdict parsed"};
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"prompt fidelity", 1, prompt_fidelity},
        {"stage-machine properties", 10, stage_properties},
        {"verdict round-trip", 5, verdict_round_trip},
        {"aggregation oracle", 5, aggregation_oracle},
        {"comparison table reproduction", 10, table_reproduction},
        {"anonymization sweep", 5, anonymization_sweep},
        {"end-to-end mock run", 60, end_to_end_mock_run},
        {"service contract", 10, service_contract},
        {"live smoke (optional)", 120, live_smoke, false},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = fail(std::string("exception: ") + e.what());
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (seconds > c.budget_seconds) {
            o.pass = false;
            o.detail += " (over time budget)";
        }
        if (!o.pass && c.gating) ++failures;
        char timing[64];
        std::snprintf(timing, sizeof(timing), "%.3fs / %.0fs", seconds, c.budget_seconds);
        std::cout << (o.skipped ? "SKIP" : o.pass ? "PASS" : (c.gating ? "FAIL" : "FAIL (non-gating)")) << "  " << c.name << "  [" << timing
                  << "]  " << o.detail << std::endl;
    }
    std::cout << (failures == 0 ? "all gating criteria passed" : std::to_string(failures) + " gating criteria failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
