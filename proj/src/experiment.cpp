#include "counsel/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <optional>
#include <sstream>
#include <thread>

namespace counsel::experiment {

namespace {

constexpr std::array<MethodKind, 5> kAllKinds{MethodKind::ChatGPTBaseline, MethodKind::GPT4Baseline,
                                              MethodKind::CoTPrompting, MethodKind::ProposedChatGPT,
                                              MethodKind::ProposedGPT4};

std::string format_score(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

std::string pad_right(const std::string& s, std::size_t width) {
    const auto len = utf8_length(s);
    return len >= width ? s : s + std::string(width - len, ' ');
}

std::string pad_left(const std::string& s, std::size_t width) {
    const auto len = utf8_length(s);
    return len >= width ? s : std::string(width - len, ' ') + s;
}

std::vector<Turn> run_plain(const MethodVariant& method, const Scenario& scenario, ChatBackend& backend,
                            const ConsultationResources& resources, const ConversationOptions& options) {
    const std::string system = method.mode == PromptingMode::CoT ? cot_wrap(kGenericAssistantPrompt)
                                                                 : std::string(kGenericAssistantPrompt);
    std::vector<Turn> turns;
    for (const auto& line : scenario.seeker_script) {
        turns.push_back(Turn{Role::User, line, Stage::Intake, turns.size(), options.clock()});
        ChatRequest request;
        request.model = method.model;
        request.temperature = resources.session_config.temperature;
        request.max_tokens = options.max_tokens;
        request.messages.push_back({ChatRole::System, system});
        for (auto& m : transcript_messages(turns)) request.messages.push_back(std::move(m));
        const auto reply = backend.complete(request).content;
        if (is_blank(reply)) throw Error("empty_reply", "counselor backend returned an empty reply");
        turns.push_back(Turn{Role::Assistant, reply, Stage::Intake, turns.size(), options.clock()});
    }
    return turns;
}

std::vector<Turn> run_layered(const MethodVariant& method, const Scenario& scenario, ChatBackend& backend,
                              const ConsultationResources& resources, const ConversationOptions& options) {
    Session session = create_session(resources.session_config, scenario.topic);
    session = open_consultation(std::move(session), resources, options.clock);
    for (const auto& line : scenario.seeker_script) {
        session = ingest_user_message(std::move(session), line, resources.rules, options.clock);
        const ChatRequest request = layered_reply_request(session, resources, method.model, options.max_tokens);
        const auto reply = backend.complete(request).content;
        if (is_blank(reply)) throw Error("empty_reply", "counselor backend returned an empty reply");
        session = append_assistant_turn(std::move(session), reply, options.clock);
    }
    return session.turns;
}

}  // namespace

MethodVariant method_variant(MethodKind kind, const ModelIds& models) {
    switch (kind) {
        case MethodKind::ChatGPTBaseline:
            return {kind, "ChatGPT Baseline", models.chatgpt, PromptingMode::Plain};
        case MethodKind::GPT4Baseline:
            return {kind, "GPT-4 Baseline", models.gpt4, PromptingMode::Plain};
        case MethodKind::CoTPrompting:
            return {kind, "CoT Prompting", models.gpt4, PromptingMode::CoT};
        case MethodKind::ProposedChatGPT:
            return {kind, "Proposed Method (ChatGPT)", models.chatgpt, PromptingMode::Layered};
        case MethodKind::ProposedGPT4:
            return {kind, "Proposed Method (GPT-4)", models.gpt4, PromptingMode::Layered};
    }
    throw Error("invalid_methods", "unknown method kind");
}

std::vector<MethodVariant> all_methods(const ModelIds& models) {
    std::vector<MethodVariant> out;
    for (auto kind : kAllKinds) out.push_back(method_variant(kind, models));
    return out;
}

std::string_view slug(MethodKind kind) {
    switch (kind) {
        case MethodKind::ChatGPTBaseline: return "chatgpt-baseline";
        case MethodKind::GPT4Baseline: return "gpt4-baseline";
        case MethodKind::CoTPrompting: return "cot";
        case MethodKind::ProposedChatGPT: return "proposed-chatgpt";
        case MethodKind::ProposedGPT4: return "proposed-gpt4";
    }
    return "unknown";
}

std::vector<MethodVariant> parse_method_list(std::string_view list, const ModelIds& models) {
    if (trim(list) == "all") return all_methods(models);
    std::vector<MethodVariant> out;
    std::string item;
    std::istringstream in{std::string(list)};
    while (std::getline(in, item, ',')) {
        const auto wanted = trim(item);
        if (wanted.empty()) continue;
        const auto it = std::find_if(kAllKinds.begin(), kAllKinds.end(),
                                     [&](MethodKind k) { return slug(k) == wanted; });
        if (it == kAllKinds.end()) throw Error("invalid_methods", "unknown method '" + wanted + "'");
        out.push_back(method_variant(*it, models));
    }
    if (out.empty()) throw Error("invalid_methods", "method list is empty");
    return out;
}

void Scenario::validate() const {
    if (id.empty()) throw Error("invalid_scenario", "scenario with empty id");
    if (seeker_script.empty()) throw Error("invalid_scenario", "scenario " + id + " has an empty seeker script");
    for (const auto& line : seeker_script) {
        if (is_blank(line)) throw Error("invalid_scenario", "scenario " + id + " has a blank seeker message");
    }
}

std::vector<Scenario> scenarios_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw Error("invalid_scenario", "scenario file must be a JSON array");
    std::vector<Scenario> out;
    try {
        for (const auto& item : j) {
            Scenario s{item.at("id").get<std::string>(), item.value("topic", std::string()),
                       item.at("seeker_script").get<std::vector<std::string>>()};
            s.validate();
            out.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid_scenario", std::string("malformed scenario: ") + e.what());
    }
    return out;
}

std::vector<Scenario> load_scenarios(const std::filesystem::path& path) {
    try {
        return scenarios_from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("invalid_scenario", path.string() + ": " + e.what());
    }
}

ConversationError::ConversationError(std::string scenario_id, const std::string& message)
    : Error("conversation_failed", "scenario " + scenario_id + ": " + message), scenario_id_(std::move(scenario_id)) {}

std::vector<Turn> run_conversation(const MethodVariant& method, const Scenario& scenario, ChatBackend& backend,
                                   const ConsultationResources& resources, const ConversationOptions& options) {
    scenario.validate();
    try {
        if (method.mode == PromptingMode::Layered) return run_layered(method, scenario, backend, resources, options);
        return run_plain(method, scenario, backend, resources, options);
    } catch (const BackendError& e) {
        throw ConversationError(scenario.id, e.what());
    } catch (const ConversationError&) {
        throw;
    } catch (const Error& e) {
        throw ConversationError(scenario.id, e.what());
    }
}

void ResultsTable::validate(double lo, double hi) const {
    for (const auto& row : rows) {
        if (row.partial) continue;
        for (const auto& m : metrics) {
            const auto it = row.metrics.find(m.id);
            if (it == row.metrics.end()) throw Error("invalid_table", row.method + " lacks metric " + m.id);
            if (it->second < lo || it->second > hi) {
                throw Error("invalid_table", row.method + " has " + m.id + " outside the rubric scale");
            }
        }
    }
}

ResultsTable run_matrix(const std::vector<MethodVariant>& methods, std::vector<Scenario> scenarios,
                        ChatBackend& counselor, ChatBackend& judge_backend, const judge::Rubric& rubric,
                        const ConsultationResources& resources, const RunOptions& options) {
    if (methods.empty()) throw Error("invalid_experiment", "no methods selected");
    if (scenarios.empty()) throw Error("invalid_experiment", "no scenarios given");
    for (const auto& s : scenarios) s.validate();
    std::sort(scenarios.begin(), scenarios.end(), [](const Scenario& a, const Scenario& b) { return a.id < b.id; });

    ResultsTable table;
    table.rubric_id = rubric.id;
    table.scenario_count = scenarios.size();
    for (const auto& d : rubric.dimensions) table.metrics.push_back({d.id, d.name});
    table.metadata.started_at = options.conversation.clock();
    table.metadata.counselor_backend = std::string(counselor.kind());
    table.metadata.judge_backend = std::string(judge_backend.kind());
    table.metadata.note = options.proxy_note;

    struct Cell {
        std::optional<judge::JudgeVerdict> verdict;
        std::string error;
    };
    const std::size_t per_arm = scenarios.size();
    std::vector<Cell> cells(methods.size() * per_arm);
    // Index of the earliest failed scenario per arm; later cells are skipped.
    std::vector<std::atomic<std::size_t>> first_failure(methods.size());
    for (auto& f : first_failure) f.store(per_arm);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) {
            const std::size_t m = i / per_arm;
            const std::size_t s = i % per_arm;
            if (s > first_failure[m].load()) continue;
            try {
                const auto transcript =
                    run_conversation(methods[m], scenarios[s], counselor, resources, options.conversation);
                cells[i].verdict = judge::score_transcript(transcript, rubric, judge_backend, options.judge_retries,
                                                           options.judge_options);
            } catch (const std::exception& e) {
                cells[i].error = "scenario " + scenarios[s].id + ": " + e.what();
                auto seen = first_failure[m].load();
                while (s < seen && !first_failure[m].compare_exchange_weak(seen, s)) {
                }
            }
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(options.concurrency, 1, cells.size());
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    for (std::size_t m = 0; m < methods.size(); ++m) {
        ResultsRow row;
        row.method = methods[m].name;
        const std::size_t failed_at = first_failure[m].load();
        std::vector<judge::JudgeVerdict> verdicts;
        for (std::size_t s = 0; s < std::min(failed_at, per_arm); ++s) verdicts.push_back(*cells[m * per_arm + s].verdict);
        if (failed_at < per_arm) {
            row.partial = true;
            row.error = cells[m * per_arm + failed_at].error;
        }
        row.scored = verdicts.size();
        if (!verdicts.empty()) row.metrics = judge::aggregate(verdicts, rubric).rounded;
        table.rows.push_back(std::move(row));
    }
    table.metadata.finished_at = options.conversation.clock();
    return table;
}

TableFormat table_format_from_string(std::string_view s) {
    if (s == "text") return TableFormat::Text;
    if (s == "csv") return TableFormat::Csv;
    if (s == "json") return TableFormat::Json;
    throw Error("invalid_format", "unknown table format '" + std::string(s) + "'");
}

namespace {

std::string emit_text(const ResultsTable& table) {
    std::vector<std::string> labels;
    for (const auto& row : table.rows) {
        std::string label = row.method;
        if (row.partial) {
            label += " [partial " + std::to_string(row.scored) + "/" + std::to_string(table.scenario_count) + "]";
        }
        labels.push_back(std::move(label));
    }
    std::vector<std::size_t> widths{utf8_length("Method")};
    for (const auto& l : labels) widths[0] = std::max(widths[0], utf8_length(l));
    for (const auto& m : table.metrics) widths.push_back(std::max<std::size_t>(utf8_length(m.name), 3));

    std::ostringstream out;
    out << kTableTitle << '\n';
    out << "Rubric: " << table.rubric_id << " | Scenarios: " << table.scenario_count << "\n\n";
    out << pad_right("Method", widths[0]);
    for (std::size_t c = 0; c < table.metrics.size(); ++c) out << " | " << pad_left(table.metrics[c].name, widths[c + 1]);
    out << '\n' << std::string(widths[0], '-');
    for (std::size_t c = 1; c < widths.size(); ++c) out << "-+-" << std::string(widths[c], '-');
    out << '\n';
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        out << pad_right(labels[r], widths[0]);
        for (std::size_t c = 0; c < table.metrics.size(); ++c) {
            const auto it = table.rows[r].metrics.find(table.metrics[c].id);
            out << " | " << pad_left(it == table.rows[r].metrics.end() ? "n/a" : format_score(it->second), widths[c + 1]);
        }
        out << '\n';
    }
    for (const auto& row : table.rows) {
        if (row.partial) out << "! " << row.method << " aborted: " << row.error << '\n';
    }
    if (!table.metadata.note.empty()) out << '\n' << table.metadata.note << '\n';
    return out.str();
}

std::string emit_csv(const ResultsTable& table) {
    std::ostringstream out;
    const auto meta = [&](std::string_view key, const std::string& value) {
        out << "#meta," << key << ',' << csv_escape(value) << '\n';
    };
    meta("rubric_id", table.rubric_id);
    meta("scenario_count", std::to_string(table.scenario_count));
    meta("started_at", table.metadata.started_at);
    meta("finished_at", table.metadata.finished_at);
    meta("counselor_backend", table.metadata.counselor_backend);
    meta("judge_backend", table.metadata.judge_backend);
    meta("note", table.metadata.note);
    for (const auto& m : table.metrics) out << "#metric," << csv_escape(m.id) << ',' << csv_escape(m.name) << '\n';
    out << "method";
    for (const auto& m : table.metrics) out << ',' << csv_escape(m.id);
    out << ",scored,partial,error\n";
    for (const auto& row : table.rows) {
        out << csv_escape(row.method);
        for (const auto& m : table.metrics) {
            out << ',';
            if (const auto it = row.metrics.find(m.id); it != row.metrics.end()) out << format_score(it->second);
        }
        out << ',' << row.scored << ',' << (row.partial ? "true" : "false") << ',' << csv_escape(row.error) << '\n';
    }
    return out.str();
}

std::string emit_json(const ResultsTable& table) {
    nlohmann::ordered_json j;
    j["title"] = std::string(kTableTitle);
    j["rubric_id"] = table.rubric_id;
    j["scenario_count"] = table.scenario_count;
    j["metrics"] = nlohmann::ordered_json::array();
    for (const auto& m : table.metrics) j["metrics"].push_back({{"id", m.id}, {"name", m.name}});
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : table.rows) {
        nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
        for (const auto& m : table.metrics) {
            if (const auto it = row.metrics.find(m.id); it != row.metrics.end()) metrics[m.id] = it->second;
        }
        j["rows"].push_back({{"method", row.method},
                             {"metrics", metrics},
                             {"scored", row.scored},
                             {"partial", row.partial},
                             {"error", row.error}});
    }
    j["metadata"] = {{"started_at", table.metadata.started_at},
                     {"finished_at", table.metadata.finished_at},
                     {"counselor_backend", table.metadata.counselor_backend},
                     {"judge_backend", table.metadata.judge_backend},
                     {"note", table.metadata.note}};
    return j.dump(2) + "\n";
}

}  // namespace

std::string emit_table(const ResultsTable& table, TableFormat format) {
    switch (format) {
        case TableFormat::Text: return emit_text(table);
        case TableFormat::Csv: return emit_csv(table);
        case TableFormat::Json: return emit_json(table);
    }
    return {};
}

ResultsTable table_from_json(const nlohmann::json& j) {
    ResultsTable t;
    try {
        t.rubric_id = j.at("rubric_id").get<std::string>();
        t.scenario_count = j.at("scenario_count").get<std::size_t>();
        for (const auto& m : j.at("metrics")) t.metrics.push_back({m.at("id").get<std::string>(), m.at("name").get<std::string>()});
        for (const auto& r : j.at("rows")) {
            ResultsRow row;
            row.method = r.at("method").get<std::string>();
            row.metrics = r.at("metrics").get<std::map<std::string, double>>();
            row.scored = r.at("scored").get<std::size_t>();
            row.partial = r.at("partial").get<bool>();
            row.error = r.at("error").get<std::string>();
            t.rows.push_back(std::move(row));
        }
        const auto& md = j.at("metadata");
        t.metadata = {md.at("started_at").get<std::string>(), md.at("finished_at").get<std::string>(),
                      md.at("counselor_backend").get<std::string>(), md.at("judge_backend").get<std::string>(),
                      md.at("note").get<std::string>()};
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid_table", std::string("malformed results JSON: ") + e.what());
    }
    return t;
}

ResultsTable table_from_csv(std::string_view csv) {
    ResultsTable t;
    std::vector<std::string> header;
    for (const auto& rec : read_csv(csv)) {
        const auto& f = rec.fields;
        if (rec.unterminated) throw Error("invalid_table", "unterminated field at line " + std::to_string(rec.line));
        if (f[0] == "#meta" && f.size() == 3) {
            const auto& key = f[1];
            if (key == "rubric_id") t.rubric_id = f[2];
            else if (key == "scenario_count") t.scenario_count = std::stoul(f[2]);
            else if (key == "started_at") t.metadata.started_at = f[2];
            else if (key == "finished_at") t.metadata.finished_at = f[2];
            else if (key == "counselor_backend") t.metadata.counselor_backend = f[2];
            else if (key == "judge_backend") t.metadata.judge_backend = f[2];
            else if (key == "note") t.metadata.note = f[2];
        } else if (f[0] == "#metric" && f.size() == 3) {
            t.metrics.push_back({f[1], f[2]});
        } else if (header.empty()) {
            header = f;
            if (header.size() != t.metrics.size() + 4 || header[0] != "method") {
                throw Error("invalid_table", "unexpected CSV header");
            }
        } else {
            if (f.size() != header.size()) throw Error("invalid_table", "bad row at line " + std::to_string(rec.line));
            ResultsRow row;
            row.method = f[0];
            for (std::size_t c = 0; c < t.metrics.size(); ++c) {
                if (!f[c + 1].empty()) row.metrics[header[c + 1]] = std::stod(f[c + 1]);
            }
            const std::size_t base = t.metrics.size() + 1;
            row.scored = std::stoul(f[base]);
            row.partial = f[base + 1] == "true";
            row.error = f[base + 2];
            t.rows.push_back(std::move(row));
        }
    }
    return t;
}

}  // namespace counsel::experiment
