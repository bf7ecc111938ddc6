#include "counsel/prompt_library.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <tuple>

namespace counsel {

namespace {

constexpr std::array<std::string_view, 5> kLayerNames{"InitialGathering", "ContextFollowUp",
                                                      "EmpathyDriven", "ScenarioBased", "Guidance"};
constexpr std::array<std::string_view, 3> kModeNames{"Plain", "CoT", "Layered"};

bool is_placeholder_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

void validate_template(const PromptTemplate& t) {
    if (t.id.empty()) throw Error("invalid_catalog", "template with empty id");
    if (t.text.empty()) throw Error("invalid_catalog", "template " + t.id + " has empty text");
    if (t.version < 1) throw Error("invalid_catalog", "template " + t.id + " has version < 1");
    for (const auto& name : placeholders(t.text)) {
        if (!t.required_slots.contains(name)) {
            throw Error("invalid_catalog", "template " + t.id + " uses {" + name +
                                               "} without listing it in required_slots");
        }
    }
}

std::optional<std::string> slot_value(const Session& session, const std::string& name) {
    if (name == "topic") return session.scenario_topic;
    const auto it = session.signals.slots.find(name);
    if (it == session.signals.slots.end()) return std::nullopt;
    return it->second;
}

bool satisfiable(const PromptTemplate& t, const SignalState& signals) {
    return std::all_of(t.required_slots.begin(), t.required_slots.end(),
                       [&](const std::string& s) { return signals.slot_filled(s); });
}

// Lower is better: an unfilled target first, then untargeted prompts, then
// prompts whose target is already known.
int preference_tier(const PromptTemplate& t, const SignalState& signals) {
    if (!t.target_slot) return 1;
    return signals.slot_filled(*t.target_slot) ? 2 : 0;
}

std::string role_label(Role role) { return role == Role::User ? "User" : "Counselor"; }

}  // namespace

std::string_view to_string(PromptLayer layer) { return kLayerNames.at(static_cast<std::size_t>(layer)); }

PromptLayer layer_from_string(std::string_view s) {
    for (std::size_t i = 0; i < kLayerNames.size(); ++i) {
        if (kLayerNames[i] == s) return static_cast<PromptLayer>(i);
    }
    throw Error("invalid_catalog", "unknown prompt layer '" + std::string(s) + "'");
}

std::string_view to_string(PromptingMode mode) { return kModeNames.at(static_cast<std::size_t>(mode)); }

PromptLayer layer_for_stage(Stage stage) {
    switch (stage) {
        case Stage::Intake: return PromptLayer::InitialGathering;
        case Stage::Exploration: return PromptLayer::ContextFollowUp;
        case Stage::EmpathyOverlay: return PromptLayer::EmpathyDriven;
        case Stage::Guidance:
        case Stage::Closing: return PromptLayer::Guidance;
    }
    return PromptLayer::Guidance;
}

std::vector<std::string> placeholders(std::string_view text) {
    std::vector<std::string> out;
    for (std::size_t open = text.find('{'); open != std::string_view::npos;
         open = text.find('{', open + 1)) {
        std::size_t end = open + 1;
        while (end < text.size() && is_placeholder_char(text[end])) ++end;
        if (end < text.size() && text[end] == '}' && end > open + 1) {
            out.emplace_back(text.substr(open + 1, end - open - 1));
        }
    }
    return out;
}

void ScenarioCase::validate() const {
    if (topic.empty()) throw Error("invalid_scenario", "scenario case with empty topic");
    if (exemplar_exchange.empty()) {
        throw Error("invalid_scenario", "scenario case '" + topic + "' has no exemplar exchange");
    }
    for (std::size_t i = 1; i < exemplar_exchange.size(); ++i) {
        if (exemplar_exchange[i].first == exemplar_exchange[i - 1].first) {
            throw Error("invalid_scenario", "scenario case '" + topic + "' does not alternate roles");
        }
    }
}

PromptCatalog::PromptCatalog(std::vector<PromptTemplate> templates) : templates_(std::move(templates)) {
    std::set<std::pair<std::string, int>> seen;
    for (const auto& t : templates_) {
        validate_template(t);
        if (!seen.emplace(t.id, t.version).second) {
            throw Error("invalid_catalog", "duplicate template " + t.id + " v" + std::to_string(t.version));
        }
    }
}

PromptCatalog PromptCatalog::from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw Error("invalid_catalog", "catalog must be a JSON array");
    std::vector<PromptTemplate> templates;
    try {
        for (const auto& item : j) {
            PromptTemplate t;
            t.id = item.at("id").get<std::string>();
            t.layer = layer_from_string(item.at("layer").get<std::string>());
            t.text = item.at("text").get<std::string>();
            t.required_slots = item.value("required_slots", std::set<std::string>{});
            t.topic_tags = item.value("topic_tags", std::set<std::string>{});
            t.version = item.value("version", 1);
            if (item.contains("target_slot") && !item["target_slot"].is_null()) {
                t.target_slot = item["target_slot"].get<std::string>();
            }
            templates.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid_catalog", std::string("malformed catalog: ") + e.what());
    }
    return PromptCatalog(std::move(templates));
}

PromptCatalog PromptCatalog::from_file(const std::filesystem::path& path) {
    try {
        return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("invalid_catalog", path.string() + ": " + e.what());
    }
}

nlohmann::json PromptCatalog::to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& t : templates_) {
        nlohmann::json item{{"id", t.id},
                            {"layer", to_string(t.layer)},
                            {"text", t.text},
                            {"required_slots", t.required_slots},
                            {"topic_tags", t.topic_tags},
                            {"version", t.version}};
        if (t.target_slot) item["target_slot"] = *t.target_slot;
        out.push_back(std::move(item));
    }
    return out;
}

std::vector<PromptTemplate> PromptCatalog::latest() const {
    std::map<std::string, const PromptTemplate*> best;
    for (const auto& t : templates_) {
        auto& slot = best[t.id];
        if (slot == nullptr || slot->version < t.version) slot = &t;
    }
    std::vector<PromptTemplate> out;
    out.reserve(best.size());
    for (const auto& [id, t] : best) out.push_back(*t);
    return out;
}

const PromptTemplate* PromptCatalog::find(std::string_view id) const {
    const PromptTemplate* found = nullptr;
    for (const auto& t : templates_) {
        if (t.id == id && (found == nullptr || found->version < t.version)) found = &t;
    }
    return found;
}

PromptCatalog builtin_catalog() {
    std::vector<PromptTemplate> t;
    t.push_back({"initial.open", PromptLayer::InitialGathering,
                 "Can you tell me more about what's been on your mind lately?", {}, {}, 1, "concern"});
    t.push_back({"followup.impact", PromptLayer::ContextFollowUp,
                 "How have these thoughts affected your daily life?", {}, {}, 1, "impact"});
    t.push_back({"followup.triggers", PromptLayer::ContextFollowUp,
                 "Have you noticed any patterns or triggers for these feelings?", {}, {}, 1, "triggers"});
    t.push_back({"empathy.coping", PromptLayer::EmpathyDriven,
                 "That sounds really challenging, can you share more about how you're coping?", {}, {}, 1,
                 "coping"});
    t.push_back({"empathy.validate", PromptLayer::EmpathyDriven,
                 "It's okay to feel this way, let's explore what might help you feel better.", {}, {}, 1,
                 std::nullopt});
    t.push_back({"scenario.work_stress", PromptLayer::ScenarioBased,
                 "Imagine a user comes to you feeling overwhelmed by work stress. How would you guide "
                 "them through this issue?",
                 {}, {"work stress"}, 1, std::nullopt});
    // Artifact-authored: no guidance wording is given in the source material.
    t.push_back({"guidance.steps", PromptLayer::Guidance,
                 "Based on what you've shared, let's look at some steps that might help with {concern}.",
                 {"concern"}, {}, 1, std::nullopt});
    return PromptCatalog(std::move(t));
}

TemplateSelection select_template(Stage stage, const SignalState& signals,
                                  const PromptCatalog& catalog,
                                  const std::set<std::string>& history) {
    const PromptLayer layer = layer_for_stage(stage);
    std::vector<PromptTemplate> in_layer;
    for (auto& t : catalog.latest()) {
        if (t.layer == layer && satisfiable(t, signals)) in_layer.push_back(std::move(t));
    }
    if (in_layer.empty()) {
        throw Error("no_eligible_template",
                    "no satisfiable template for layer " + std::string(to_string(layer)));
    }

    const PromptTemplate* best = nullptr;
    for (const auto& t : in_layer) {
        if (history.contains(t.id)) continue;
        if (best == nullptr || std::make_tuple(preference_tier(t, signals), std::cref(t.id)) <
                                   std::make_tuple(preference_tier(*best, signals), std::cref(best->id))) {
            best = &t;
        }
    }
    if (best != nullptr) return {*best, false};
    // latest() is sorted by id, so the front is the lexicographically first.
    return {in_layer.front(), true};
}

RenderedPrompt render(const PromptTemplate& tmpl, const Session& session) {
    std::string out;
    out.reserve(tmpl.text.size());
    const std::string_view text = tmpl.text;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t open = text.find('{', pos);
        if (open == std::string_view::npos) break;
        std::size_t end = open + 1;
        while (end < text.size() && is_placeholder_char(text[end])) ++end;
        if (end < text.size() && text[end] == '}' && end > open + 1) {
            const std::string name(text.substr(open + 1, end - open - 1));
            const auto value = slot_value(session, name);
            if (!value) {
                throw Error("missing_slot", "template " + tmpl.id + " needs {" + name + "}");
            }
            out.append(text.substr(pos, open - pos));
            out.append(*value);
            pos = end + 1;
        } else {
            out.append(text.substr(pos, open + 1 - pos));
            pos = open + 1;
        }
    }
    out.append(text.substr(pos));
    return RenderedPrompt{tmpl.id, tmpl.version, std::move(out), session.stage};
}

std::vector<ScenarioCase> scenario_cases_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw Error("invalid_scenario", "scenario cases must be a JSON array");
    std::vector<ScenarioCase> cases;
    try {
        for (const auto& item : j) {
            ScenarioCase c;
            c.topic = item.at("topic").get<std::string>();
            c.situation = item.at("situation").get<std::string>();
            for (const auto& ex : item.at("exemplar_exchange")) {
                c.exemplar_exchange.emplace_back(role_from_string(ex.at("role").get<std::string>()),
                                                 ex.at("text").get<std::string>());
            }
            c.validate();
            cases.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("invalid_scenario", std::string("malformed scenario case: ") + e.what());
    }
    return cases;
}

std::vector<ScenarioCase> load_scenario_cases(const std::filesystem::path& path) {
    try {
        return scenario_cases_from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("invalid_scenario", path.string() + ": " + e.what());
    }
}

const ScenarioCase* find_scenario_case(const std::vector<ScenarioCase>& cases, std::string_view topic) {
    const std::string wanted = to_lower_ascii(topic);
    for (const auto& c : cases) {
        if (to_lower_ascii(c.topic) == wanted) return &c;
    }
    return nullptr;
}

std::string cot_wrap(std::string_view base_system_prompt) {
    if (base_system_prompt.find(kCotInstruction) != std::string_view::npos) {
        return std::string(base_system_prompt);
    }
    if (base_system_prompt.empty()) return std::string(kCotInstruction);
    std::string out(base_system_prompt);
    out.append("\n\n");
    out.append(kCotInstruction);
    return out;
}

std::string compose_system_prompt(Stage stage, const ScenarioCase* scenario, PromptingMode mode) {
    std::string out(kCounselorPreamble);
    if (scenario != nullptr) {
        out.append("\n\nCase study (").append(scenario->topic).append("):\n").append(scenario->situation);
        out.append("\n\nExample exchange:");
        for (const auto& [role, text] : scenario->exemplar_exchange) {
            out.append("\n").append(role_label(role)).append(": ").append(text);
        }
        if (stage == Stage::Guidance) {
            out.append("\n\nThe user is ready for guidance: offer step-by-step advice tailored to this case.");
        }
    }
    if (mode == PromptingMode::CoT) return cot_wrap(out);
    return out;
}

}  // namespace counsel
