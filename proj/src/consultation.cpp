#include "counsel/consultation.hpp"

namespace counsel {

ConsultationResources ConsultationResources::from_data_dir(const std::filesystem::path& dir) {
    ConsultationResources r;
    r.catalog = PromptCatalog::from_file(dir / "catalog.json");
    r.scenario_cases = load_scenario_cases(dir / "scenario_cases.json");
    r.rules = SignalRules::from_data_dir(dir);
    return r;
}

Session open_consultation(Session session, const ConsultationResources& resources, const Clock& clock) {
    if (!session.turns.empty()) throw Error("alternation_violation", "session already opened");
    const auto selection =
        select_template(Stage::Intake, session.signals, resources.catalog, session.used_templates);
    const auto opening = render(selection.chosen, session);
    session.used_templates.insert(selection.chosen.id);
    return append_assistant_turn(std::move(session), opening.text, clock);
}

std::vector<ChatMessage> transcript_messages(const std::vector<Turn>& turns) {
    std::vector<ChatMessage> out;
    out.reserve(turns.size());
    for (const auto& t : turns) {
        if (t.role == Role::System) continue;
        out.push_back({t.role == Role::User ? ChatRole::User : ChatRole::Assistant, t.text});
    }
    return out;
}

ChatRequest layered_reply_request(Session& session, const ConsultationResources& resources,
                                  const std::string& model, int max_tokens) {
    const ScenarioCase* scenario =
        session.scenario_topic ? find_scenario_case(resources.scenario_cases, *session.scenario_topic) : nullptr;
    std::string system = compose_system_prompt(session.stage, scenario, PromptingMode::Layered);

    try {
        const auto selection =
            select_template(session.stage, session.signals, resources.catalog, session.used_templates);
        const auto rendered = render(selection.chosen, session);
        session.used_templates.insert(selection.chosen.id);
        system.append("\n\nGuidance for your next reply (")
            .append(to_string(layer_for_stage(session.stage)))
            .append(" layer): work this naturally into your response: \"")
            .append(rendered.text)
            .append("\"");
    } catch (const Error& e) {
        // A layer with nothing usable yet (e.g. {concern} unknown) gets no
        // guidance line; the stage preamble still applies.
        if (e.code() != "no_eligible_template" && e.code() != "missing_slot") throw;
    }

    ChatRequest request;
    request.model = model;
    request.temperature = session.config.temperature;
    request.max_tokens = max_tokens;
    request.messages.push_back({ChatRole::System, std::move(system)});
    for (auto& m : transcript_messages(session.turns)) request.messages.push_back(std::move(m));
    return request;
}

}  // namespace counsel
