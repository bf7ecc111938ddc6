#include "counsel/cli.hpp"

#include "counsel/consultation.hpp"
#include "counsel/dataset.hpp"
#include "counsel/experiment.hpp"
#include "counsel/judge.hpp"
#include "counsel/service.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>

namespace counsel {

namespace {

Clock clock_for(const std::string& frozen_time) {
    return frozen_time.empty() ? system_clock() : frozen_clock(frozen_time);
}

std::filesystem::path data_dir_or_default(const std::string& flag) {
    return flag.empty() ? default_data_dir() : std::filesystem::path(flag);
}

std::shared_ptr<ChatBackend> backend_from_source(const std::string& source) {
    return make_backend(load_backend_config(source));
}

struct ChatArgs {
    std::string backend = "mock";
    std::string topic;
    std::string data_dir;
    std::string model = "gpt-4";
    std::string export_path;
    std::string frozen_time;
};

int run_chat(const ChatArgs& a, std::ostream& out, std::istream& in) {
    const Clock clock = clock_for(a.frozen_time);
    auto resources = ConsultationResources::from_data_dir(data_dir_or_default(a.data_dir));
    auto backend = backend_from_source(a.backend);
    Session session = create_session(resources.session_config,
                                     a.topic.empty() ? std::nullopt : std::optional<std::string>(a.topic));
    session = open_consultation(std::move(session), resources, clock);

    out << service::kSafetyBanner << "\n";
    out << "Commands: /state shows the stage and signals, /close ends the session.\n\n";
    out << "counselor [" << to_string(session.stage) << "]: " << session.turns.back().text << "\n";
    std::string line;
    while (out << "you: " << std::flush, std::getline(in, line)) {
        const auto text = trim(line);
        if (text == "/close") break;
        if (text == "/state") {
            out << "stage: " << to_string(session.stage) << "\n"
                << "signals: " << to_json(session.signals).dump() << "\n";
            continue;
        }
        if (text.empty()) continue;
        Session working = ingest_user_message(session, text, resources.rules, clock);
        const auto request = layered_reply_request(working, resources, a.model, 512);
        const auto reply = backend->complete(request).content;
        if (is_blank(reply)) throw Error("empty_reply", "backend returned an empty reply");
        session = append_assistant_turn(std::move(working), reply, clock);
        out << "counselor [" << to_string(session.stage) << "]: " << reply << "\n";
    }
    session = close_session(std::move(session));
    out << "\nsession " << session.id << " closed after " << session.turns.size() << " turns\n";
    if (!a.export_path.empty()) {
        write_file(a.export_path, service::session_document(session).dump(2) + "\n");
        out << "export written to " << a.export_path << "\n";
    }
    return kExitOk;
}

struct ServeArgs {
    std::string config;
    std::string host;
    int port = -1;
    std::string backend;
    std::string data_dir;
    std::string export_path;
    std::string frozen_time;
};

int run_serve(const ServeArgs& a, std::ostream& out, std::ostream& err) {
    auto cfg = a.config.empty() ? service::ServiceConfig::from_json(nlohmann::json::object())
                                : service::ServiceConfig::from_file(a.config);
    if (!a.host.empty()) cfg.host = a.host;
    if (a.port >= 0) cfg.port = a.port;
    if (!a.backend.empty()) cfg.backend = load_backend_config(a.backend);
    if (!a.data_dir.empty()) cfg.data_dir = a.data_dir;
    if (!a.export_path.empty()) cfg.export_path = a.export_path;

    auto resources = ConsultationResources::from_data_dir(cfg.data_dir);
    if (cfg.session) resources.session_config = *cfg.session;
    service::ServiceOptions options;
    options.model = cfg.model;
    options.max_tokens = cfg.max_tokens;
    options.export_path = cfg.export_path;
    options.clock = clock_for(a.frozen_time);
    service::ConsultationService svc(make_backend(cfg.backend), std::move(resources), options);

    httplib::Server server;
    service::mount_routes(server, svc);
    const int port = cfg.port == 0 ? server.bind_to_any_port(cfg.host) : cfg.port;
    if (cfg.port != 0 && !server.bind_to_port(cfg.host, port)) {
        err << "error: cannot bind " << cfg.host << ":" << port << "\n";
        return kExitRuntime;
    }
    if (port < 0) {
        err << "error: cannot bind " << cfg.host << "\n";
        return kExitRuntime;
    }
    out << "listening on http://" << cfg.host << ":" << port << std::endl;
    return server.listen_after_bind() ? kExitOk : kExitRuntime;
}

struct IngestArgs {
    std::string in;
    std::string format = "jsonl";
    std::string topic;
    std::string context;
    std::string out;
    std::string role_map;
    std::string frozen_time;
};

int run_ingest(const IngestArgs& a, std::ostream& out, std::ostream& err) {
    const auto parsed = dataset::parse_raw(read_file(a.in), a.format);
    for (const auto& issue : parsed.skipped) err << "skipped line " << issue.line << ": " << issue.message << "\n";
    const auto roles = a.role_map.empty() ? dataset::RoleMap::shipped() : dataset::RoleMap::from_file(a.role_map);
    const auto rules = dataset::default_pii_rules();
    const Clock clock = clock_for(a.frozen_time);

    std::vector<dataset::DialogueRecord> records;
    std::map<dataset::PiiClass, int> replaced;
    std::size_t dropped = 0;
    for (const auto& raw : parsed.dialogues) {
        const auto [anonymized, report] = dataset::anonymize(raw, rules);
        for (const auto& [cls, n] : report.replacements) replaced[cls] += n;
        const auto cleaned = dataset::clean(anonymized);
        if (!cleaned) {
            ++dropped;
            continue;
        }
        const auto& meta = cleaned->raw_metadata;
        const auto field = [&](const std::string& key, const std::string& fallback) {
            const auto it = meta.find(key);
            return it == meta.end() || is_blank(it->second) ? fallback : it->second;
        };
        std::map<std::string, std::string> demographics;
        for (const auto& [key, value] : meta) {
            if (key.rfind("demo_", 0) == 0 && key.size() > 5) demographics[key.substr(5)] = value;
        }
        records.push_back(dataset::standardize(*cleaned, field("topic", a.topic), demographics,
                                               field("context", a.context), roles, clock));
    }
    const auto written = dataset::write_records(records, a.out);
    out << "wrote " << written << " records to " << a.out << " (" << dropped << " dialogues dropped, "
        << parsed.skipped.size() << " input lines skipped)\n";
    out << "pii replacements:";
    for (auto cls : {dataset::PiiClass::Email, dataset::PiiClass::Phone, dataset::PiiClass::Url,
                     dataset::PiiClass::Name, dataset::PiiClass::Id}) {
        out << ' ' << dataset::to_string(cls) << '=' << replaced[cls];
    }
    out << "\n";
    return kExitOk;
}

struct EvaluateArgs {
    std::string records;
    std::string rubric;
    std::string backend = "mock";
    std::string out;
    int retries = 2;
    std::string model = "gpt-4";
};

std::vector<Turn> record_transcript(const dataset::DialogueRecord& record) {
    std::vector<Turn> turns;
    for (const auto& t : record.turns) {
        turns.push_back(Turn{t.role == dataset::DialogueRole::Seeker ? Role::User : Role::Assistant, t.text,
                             Stage::Intake, turns.size(), record.provenance.ingested_at});
    }
    return turns;
}

int run_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
    const auto rubric = judge::Rubric::from_file(a.rubric);
    auto read = dataset::read_records(a.records);
    for (const auto& issue : read.errors) err << "unreadable record at line " << issue.line << ": " << issue.message << "\n";
    std::sort(read.records.begin(), read.records.end(),
              [](const auto& x, const auto& y) { return x.record_id < y.record_id; });
    auto backend = backend_from_source(a.backend);
    judge::JudgeOptions options;
    options.model = a.model;

    std::string lines;
    std::vector<judge::JudgeVerdict> verdicts;
    std::size_t failures = 0;
    for (const auto& record : read.records) {
        nlohmann::ordered_json row;
        row["record_id"] = record.record_id;
        try {
            const auto verdict = judge::score_transcript(record_transcript(record), rubric, *backend, a.retries, options);
            row["scores"] = verdict.scores;
            row["feedback"] = verdict.feedback;
            verdicts.push_back(verdict);
        } catch (const Error& e) {
            ++failures;
            row["error_code"] = e.code();
            row["error"] = e.what();
            err << "record " << record.record_id << ": " << e.what() << "\n";
        }
        lines += row.dump() + "\n";
    }
    write_file(a.out, lines);
    out << "scored " << verdicts.size() << "/" << read.records.size() << " records under rubric " << rubric.id
        << "\n";
    if (!verdicts.empty()) {
        const auto agg = judge::aggregate(verdicts, rubric);
        for (const auto& d : rubric.dimensions) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%.1f", agg.rounded.at(d.id));
            out << "  " << d.name << ": " << buf << "\n";
        }
    }
    return failures == 0 && read.errors.empty() ? kExitOk : kExitRuntime;
}

struct ExperimentArgs {
    std::string scenarios;
    std::string methods = "all";
    std::string counselor_backend = "mock";
    std::string judge_backend = "mock";
    std::string rubric;
    std::string out_format = "text";
    std::string out;
    std::size_t concurrency = 1;
    int judge_retries = 2;
    std::string data_dir;
    std::string frozen_time;
    experiment::ModelIds models;
    std::string judge_model = "gpt-4";
};

int run_experiment(const ExperimentArgs& a, std::ostream& out, std::ostream& err) {
    const auto data_dir = data_dir_or_default(a.data_dir);
    const auto methods = experiment::parse_method_list(a.methods, a.models);
    const auto scenarios = experiment::load_scenarios(a.scenarios);
    const auto rubric = judge::Rubric::from_file(a.rubric.empty() ? data_dir / "rubrics" / "experiment.json"
                                                                  : std::filesystem::path(a.rubric));
    const auto resources = ConsultationResources::from_data_dir(data_dir);
    auto counselor = backend_from_source(a.counselor_backend);
    auto judge_backend = backend_from_source(a.judge_backend);

    experiment::RunOptions options;
    options.concurrency = a.concurrency;
    options.judge_retries = a.judge_retries;
    options.judge_options.model = a.judge_model;
    options.conversation.clock = clock_for(a.frozen_time);
    const auto table = experiment::run_matrix(methods, scenarios, *counselor, *judge_backend, rubric, resources, options);
    const auto rendered = experiment::emit_table(table, experiment::table_format_from_string(a.out_format));
    if (a.out.empty()) {
        out << rendered;
    } else {
        write_file(a.out, rendered);
        out << "results written to " << a.out << "\n";
    }
    bool partial = false;
    for (const auto& row : table.rows) {
        if (row.partial) {
            partial = true;
            err << row.method << " aborted after " << row.scored << " scenarios: " << row.error << "\n";
        }
    }
    return partial ? kExitRuntime : kExitOk;
}

struct RefineArgs {
    judge::RefinementEntry entry;
    std::string catalog;
    std::string log;
    std::string frozen_time;
};

int run_refine(RefineArgs a, std::ostream& out) {
    a.entry.timestamp = clock_for(a.frozen_time)();
    judge::log_refinement(a.entry, a.catalog, a.log);
    out << a.entry.target << ": v" << a.entry.old_version << " -> v" << a.entry.new_version << " logged to " << a.log
        << "\n";
    return kExitOk;
}

bool is_usage_code(const std::string& code) {
    return code == "invalid_methods" || code == "invalid_format";
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, std::istream& in) {
    CLI::App app{"Layered-prompting psychological consultation toolkit", "counsel"};
    app.require_subcommand(1);

    ChatArgs chat;
    auto* chat_cmd = app.add_subcommand("chat", "Interactive consultation in the terminal");
    chat_cmd->add_option("--backend", chat.backend, "\"mock\" or a backend config file")->capture_default_str();
    chat_cmd->add_option("--topic", chat.topic, "Scenario topic, e.g. \"work stress\"");
    chat_cmd->add_option("--data-dir", chat.data_dir, "Catalog, lexicon and scenario-case directory");
    chat_cmd->add_option("--model", chat.model, "Counselor model id")->capture_default_str();
    chat_cmd->add_option("--export", chat.export_path, "Write the session export here on close");
    chat_cmd->add_option("--frozen-time", chat.frozen_time, "Fixed ISO-8601 timestamp for every turn");

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP consultation service");
    serve_cmd->add_option("--config", serve.config, "Service config JSON")->check(CLI::ExistingFile);
    serve_cmd->add_option("--host", serve.host, "Bind address (default 127.0.0.1)");
    serve_cmd->add_option("--port", serve.port, "Port; 0 picks a free one (default 8080)")->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--backend", serve.backend, "\"mock\" or a backend config file");
    serve_cmd->add_option("--data-dir", serve.data_dir, "Catalog, lexicon and scenario-case directory");
    serve_cmd->add_option("--export", serve.export_path, "Append closed sessions to this JSONL file");
    serve_cmd->add_option("--frozen-time", serve.frozen_time, "Fixed ISO-8601 timestamp for every turn");

    IngestArgs ingest;
    auto* ingest_cmd = app.add_subcommand("ingest", "Anonymize, clean and standardize raw dialogues");
    ingest_cmd->add_option("--in", ingest.in, "Raw dialogue file")->required()->check(CLI::ExistingFile);
    ingest_cmd->add_option("--format", ingest.format, "Input format")
        ->check(CLI::IsMember({"jsonl", "csv"}))
        ->capture_default_str();
    ingest_cmd->add_option("--topic", ingest.topic, "Topic for dialogues without their own")->required();
    ingest_cmd->add_option("--context", ingest.context, "Context for dialogues without their own");
    ingest_cmd->add_option("--out", ingest.out, "Output JSONL of dialogue records")->required();
    ingest_cmd->add_option("--role-map", ingest.role_map, "Speaker label map")->check(CLI::ExistingFile);
    ingest_cmd->add_option("--frozen-time", ingest.frozen_time, "Fixed ISO-8601 ingestion timestamp");

    EvaluateArgs evaluate;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score dialogue records with the LLM judge");
    evaluate_cmd->add_option("--records", evaluate.records, "Dialogue record JSONL")->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--rubric", evaluate.rubric, "Rubric JSON")->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--backend", evaluate.backend, "Judge backend: \"mock\" or a config file")
        ->capture_default_str();
    evaluate_cmd->add_option("--out", evaluate.out, "Output JSONL of verdicts")->required();
    evaluate_cmd->add_option("--retries", evaluate.retries, "Re-asks after an unparseable verdict")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    evaluate_cmd->add_option("--judge-model", evaluate.model, "Judge model id")->capture_default_str();

    ExperimentArgs exp;
    auto* exp_cmd = app.add_subcommand("experiment", "Run the method comparison and emit the results table");
    exp_cmd->add_option("--scenarios", exp.scenarios, "Scenario JSON")->required()->check(CLI::ExistingFile);
    exp_cmd->add_option("--methods", exp.methods,
                        "Comma-separated: chatgpt-baseline, gpt4-baseline, cot, proposed-chatgpt, proposed-gpt4, or all")
        ->capture_default_str();
    exp_cmd->add_option("--counselor-backend", exp.counselor_backend, "\"mock\" or a backend config file")
        ->capture_default_str();
    exp_cmd->add_option("--judge-backend", exp.judge_backend, "\"mock\" or a backend config file")
        ->capture_default_str();
    exp_cmd->add_option("--rubric", exp.rubric, "Rubric JSON (default: the shipped experiment rubric)")
        ->check(CLI::ExistingFile);
    exp_cmd->add_option("--out-format", exp.out_format, "Table format")
        ->check(CLI::IsMember({"text", "csv", "json"}))
        ->capture_default_str();
    exp_cmd->add_option("--out", exp.out, "Output file (default: stdout)");
    exp_cmd->add_option("--concurrency", exp.concurrency, "Parallel (method, scenario) cells")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    exp_cmd->add_option("--judge-retries", exp.judge_retries, "Re-asks after an unparseable verdict")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    exp_cmd->add_option("--data-dir", exp.data_dir, "Catalog, lexicon and scenario-case directory");
    exp_cmd->add_option("--frozen-time", exp.frozen_time, "Fixed ISO-8601 timestamp for byte-identical output");
    exp_cmd->add_option("--chatgpt-model", exp.models.chatgpt, "Model id for the ChatGPT arms")->capture_default_str();
    exp_cmd->add_option("--gpt4-model", exp.models.gpt4, "Model id for the GPT-4 and CoT arms")->capture_default_str();
    exp_cmd->add_option("--judge-model", exp.judge_model, "Judge model id")->capture_default_str();

    RefineArgs refine;
    auto* refine_cmd = app.add_subcommand("refine", "Record a reviewed prompt or rubric revision");
    refine_cmd->add_option("--target", refine.entry.target, "Template id or rubric id")->required();
    refine_cmd->add_option("--catalog", refine.catalog, "Template catalog or rubric file")
        ->required()
        ->check(CLI::ExistingFile);
    refine_cmd->add_option("--log", refine.log, "Refinement log JSONL")->required();
    refine_cmd->add_option("--old-version", refine.entry.old_version, "Current version")->required();
    refine_cmd->add_option("--new-version", refine.entry.new_version, "Version after the revision")->required();
    refine_cmd->add_option("--feedback", refine.entry.judge_feedback, "Judge feedback that motivated the change");
    refine_cmd->add_option("--note", refine.entry.author_note, "Author note");
    refine_cmd->add_option("--frozen-time", refine.frozen_time, "Fixed ISO-8601 timestamp");

    if (!args.empty() && !args.front().empty() && args.front().front() != '-' &&
        app.get_subcommand_no_throw(args.front()) == nullptr) {
        err << "error: unknown subcommand '" << args.front() << "'\n\n" << app.help();
        return kExitUsage;
    }
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (chat_cmd->parsed()) return run_chat(chat, out, in);
        if (serve_cmd->parsed()) return run_serve(serve, out, err);
        if (ingest_cmd->parsed()) return run_ingest(ingest, out, err);
        if (evaluate_cmd->parsed()) return run_evaluate(evaluate, out, err);
        if (exp_cmd->parsed()) return run_experiment(exp, out, err);
        if (refine_cmd->parsed()) return run_refine(refine, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return is_usage_code(e.code()) ? kExitUsage : kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}

int cli_dispatch(int argc, char** argv, std::ostream& out, std::ostream& err, std::istream& in) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_dispatch(args, out, err, in);
}

}  // namespace counsel
