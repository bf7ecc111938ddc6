#pragma once

#include "counsel/consultation.hpp"
#include "counsel/judge.hpp"
#include "counsel/llm_gateway.hpp"
#include "counsel/prompt_library.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace counsel::experiment {

enum class MethodKind { ChatGPTBaseline, GPT4Baseline, CoTPrompting, ProposedChatGPT, ProposedGPT4 };

struct ModelIds {
    std::string chatgpt = "gpt-3.5-turbo";
    std::string gpt4 = "gpt-4";
};

/// One arm of the comparison. Model ids are configuration, not code paths.
struct MethodVariant {
    MethodKind kind = MethodKind::ChatGPTBaseline;
    std::string name;  // row label, e.g. "Proposed Method (GPT-4)"
    std::string model;
    PromptingMode mode = PromptingMode::Plain;
};

MethodVariant method_variant(MethodKind kind, const ModelIds& models = {});
std::vector<MethodVariant> all_methods(const ModelIds& models = {});

/// CLI slug: chatgpt-baseline, gpt4-baseline, cot, proposed-chatgpt, proposed-gpt4.
std::string_view slug(MethodKind kind);

/// Comma-separated slugs, or "all". Unknown slugs throw Error("invalid_methods").
std::vector<MethodVariant> parse_method_list(std::string_view list, const ModelIds& models = {});

struct Scenario {
    std::string id;
    std::string topic;
    std::vector<std::string> seeker_script;

    void validate() const;
};

std::vector<Scenario> scenarios_from_json(const nlohmann::json& j);
std::vector<Scenario> load_scenarios(const std::filesystem::path& path);

/// Counselor-side failure while playing a scenario.
class ConversationError : public Error {
public:
    ConversationError(std::string scenario_id, const std::string& message);
    const std::string& scenario_id() const noexcept { return scenario_id_; }

private:
    std::string scenario_id_;
};

struct ConversationOptions {
    int max_tokens = 512;
    Clock clock = system_clock();
};

/// Plays the scripted seeker against the counselor backend. Plain/CoT give
/// 2 turns per script line; Layered adds the opening assistant prompt.
std::vector<Turn> run_conversation(const MethodVariant& method, const Scenario& scenario, ChatBackend& backend,
                                   const ConsultationResources& resources, const ConversationOptions& options = {});

struct MetricColumn {
    std::string id;
    std::string name;
    bool operator==(const MetricColumn&) const = default;
};

struct ResultsRow {
    std::string method;
    std::map<std::string, double> metrics;  // rounded to one decimal
    std::size_t scored = 0;
    bool partial = false;
    std::string error;

    bool operator==(const ResultsRow&) const = default;
};

struct RunMetadata {
    std::string started_at;
    std::string finished_at;
    std::string counselor_backend;
    std::string judge_backend;
    std::string note;

    bool operator==(const RunMetadata&) const = default;
};

struct ResultsTable {
    std::vector<MetricColumn> metrics;
    std::vector<ResultsRow> rows;
    std::size_t scenario_count = 0;
    std::string rubric_id;
    RunMetadata metadata;

    /// Complete rows carry every metric within [lo, hi].
    void validate(double lo = 1.0, double hi = 5.0) const;

    bool operator==(const ResultsTable&) const = default;
};

struct RunOptions {
    int judge_retries = 2;
    std::size_t concurrency = 1;
    judge::JudgeOptions judge_options;
    ConversationOptions conversation;
    // Recorded in the table metadata.
    std::string proxy_note = "All scores are LLM-judge outputs; User Satisfaction is judge-proxied.";
};

/// Every (method, scenario) cell: run_conversation, then score_transcript;
/// rows follow `methods` order, scenarios are visited sorted by id. A failing
/// cell aborts its arm: the row keeps the verdicts of the scenarios before
/// it and is flagged partial.
ResultsTable run_matrix(const std::vector<MethodVariant>& methods, std::vector<Scenario> scenarios,
                        ChatBackend& counselor, ChatBackend& judge_backend, const judge::Rubric& rubric,
                        const ConsultationResources& resources, const RunOptions& options = {});

enum class TableFormat { Text, Csv, Json };

TableFormat table_format_from_string(std::string_view s);

inline constexpr std::string_view kTableTitle = "Comparison of Different Methods on Various Metrics";

std::string emit_table(const ResultsTable& table, TableFormat format);

ResultsTable table_from_json(const nlohmann::json& j);
ResultsTable table_from_csv(std::string_view csv);

}  // namespace counsel::experiment
