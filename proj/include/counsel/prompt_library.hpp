#pragma once

#include "counsel/conversation.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace counsel {

enum class PromptLayer { InitialGathering, ContextFollowUp, EmpathyDriven, ScenarioBased, Guidance };

/// How a counselor model call is framed. Baselines are Plain, the
/// chain-of-thought arm is CoT, the staged method is Layered.
enum class PromptingMode { Plain, CoT, Layered };

std::string_view to_string(PromptLayer layer);
PromptLayer layer_from_string(std::string_view s);
std::string_view to_string(PromptingMode mode);

/// Layer a stage draws its templates from. Closing reuses Guidance.
PromptLayer layer_for_stage(Stage stage);

struct PromptTemplate {
    std::string id;
    PromptLayer layer = PromptLayer::InitialGathering;
    std::string text;
    std::set<std::string> required_slots;
    std::set<std::string> topic_tags;
    int version = 1;
    // Slot this prompt is meant to gather, if any.
    std::optional<std::string> target_slot;

    bool operator==(const PromptTemplate&) const = default;
};

/// `{name}` placeholders in order of appearance.
std::vector<std::string> placeholders(std::string_view text);

struct RenderedPrompt {
    std::string template_id;
    int version = 1;
    std::string text;
    Stage stage = Stage::Intake;
};

struct ScenarioCase {
    std::string topic;
    std::string situation;
    std::vector<std::pair<Role, std::string>> exemplar_exchange;

    void validate() const;
};

class PromptCatalog {
public:
    PromptCatalog() = default;
    explicit PromptCatalog(std::vector<PromptTemplate> templates);

    static PromptCatalog from_json(const nlohmann::json& j);
    static PromptCatalog from_file(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    const std::vector<PromptTemplate>& templates() const { return templates_; }
    /// Highest version of each id, sorted by id.
    std::vector<PromptTemplate> latest() const;
    const PromptTemplate* find(std::string_view id) const;
    bool empty() const { return templates_.empty(); }

private:
    std::vector<PromptTemplate> templates_;
};

/// The shipped catalog: the fixed reference prompt strings plus the
/// artifact-authored Guidance template.
PromptCatalog builtin_catalog();

struct TemplateSelection {
    PromptTemplate chosen;
    bool reused = false;
};

TemplateSelection select_template(Stage stage, const SignalState& signals,
                                  const PromptCatalog& catalog,
                                  const std::set<std::string>& history);

/// Substitutes slot values (and `{topic}` from the scenario topic).
RenderedPrompt render(const PromptTemplate& tmpl, const Session& session);

std::vector<ScenarioCase> load_scenario_cases(const std::filesystem::path& path);
std::vector<ScenarioCase> scenario_cases_from_json(const nlohmann::json& j);
const ScenarioCase* find_scenario_case(const std::vector<ScenarioCase>& cases,
                                       std::string_view topic);

inline constexpr std::string_view kCounselorPreamble =
    "You are a supportive, non-judgmental counselor in an online psychological consultation. "
    "Listen carefully, validate the user's feelings, ask gentle open-ended questions, and offer "
    "practical, evidence-informed guidance once you understand the situation. You are not a "
    "crisis service; if the user may be in danger, encourage them to contact local emergency "
    "services.";

inline constexpr std::string_view kGenericAssistantPrompt = "You are a helpful assistant.";

inline constexpr std::string_view kCotInstruction =
    "Before replying, think through the user's situation step-by-step privately. Do not reveal "
    "that reasoning; respond to the user with only your final reply.";

/// Appends the step-by-step instruction once; a prompt that already carries
/// it is returned unchanged.
std::string cot_wrap(std::string_view base_system_prompt);

std::string compose_system_prompt(Stage stage, const ScenarioCase* scenario, PromptingMode mode);

}  // namespace counsel
