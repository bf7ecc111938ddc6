#include "counsel/conversation.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <random>
#include <sstream>

namespace counsel {

namespace {

constexpr std::array<std::string_view, 5> kStageNames{"Intake", "Exploration", "EmpathyOverlay",
                                                      "Guidance", "Closing"};
constexpr std::array<std::string_view, 3> kRoleNames{"User", "Assistant", "System"};

bool has_alnum(std::string_view text) {
    return std::any_of(text.begin(), text.end(),
                       [](unsigned char c) { return std::isalnum(c) != 0; });
}

// Rules (2)-(4): forward progress along Intake -> Exploration -> Guidance.
Stage advance(Stage base, const SignalState& signals, const SessionConfig& config) {
    switch (base) {
        case Stage::Intake:
            return signals.user_turn_count >= 1 ? Stage::Exploration : Stage::Intake;
        case Stage::Exploration:
            if (signals.filled_slot_count() >= config.advance_slot_threshold ||
                signals.user_turn_count >= config.advance_turn_threshold) {
                return Stage::Guidance;
            }
            return Stage::Exploration;
        default:
            return base;
    }
}

std::string generate_session_id() {
    static std::atomic<std::uint64_t> counter{0};
    thread_local std::mt19937_64 rng{std::random_device{}()};
    std::ostringstream ss;
    ss << "s-" << std::hex << rng() << '-' << counter.fetch_add(1);
    return ss.str();
}

}  // namespace

std::string_view to_string(Stage stage) { return kStageNames.at(static_cast<std::size_t>(stage)); }

std::string_view to_string(Role role) { return kRoleNames.at(static_cast<std::size_t>(role)); }

Stage stage_from_string(std::string_view s) {
    for (std::size_t i = 0; i < kStageNames.size(); ++i) {
        if (kStageNames[i] == s) return static_cast<Stage>(i);
    }
    throw Error("invalid_stage", "unknown stage '" + std::string(s) + "'");
}

Role role_from_string(std::string_view s) {
    for (std::size_t i = 0; i < kRoleNames.size(); ++i) {
        if (kRoleNames[i] == s) return static_cast<Role>(i);
    }
    throw Error("invalid_role", "unknown role '" + std::string(s) + "'");
}

int progress_rank(Stage stage) {
    switch (stage) {
        case Stage::Intake: return 0;
        case Stage::Exploration: return 1;
        case Stage::Guidance: return 2;
        case Stage::Closing: return 3;
        case Stage::EmpathyOverlay: return -1;
    }
    return -1;
}

std::map<std::string, std::optional<std::string>> SignalState::empty_slots() {
    std::map<std::string, std::optional<std::string>> slots;
    for (auto name : kSlotNames) slots.emplace(std::string(name), std::nullopt);
    return slots;
}

int SignalState::filled_slot_count() const {
    return static_cast<int>(std::count_if(slots.begin(), slots.end(),
                                          [](const auto& kv) { return kv.second.has_value(); }));
}

bool SignalState::slot_filled(std::string_view name) const {
    const auto it = slots.find(std::string(name));
    return it != slots.end() && it->second.has_value();
}

void SessionConfig::validate() const {
    if (advance_slot_threshold < 1) {
        throw Error("invalid_config", "advance_slot_threshold must be >= 1");
    }
    if (advance_turn_threshold < 1) {
        throw Error("invalid_config", "advance_turn_threshold must be >= 1");
    }
    if (!(temperature >= 0.0)) throw Error("invalid_config", "temperature must be >= 0");
}

Lexicon::Lexicon(std::vector<std::string> entries) : entries_(std::move(entries)) {}

Lexicon Lexicon::from_file(const std::filesystem::path& path) {
    return Lexicon(read_entry_lines(path));
}

bool Lexicon::matches(std::string_view text) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const std::string& e) { return contains_phrase(text, e); });
}

SlotPatterns SlotPatterns::from_file(const std::filesystem::path& path) {
    SlotPatterns patterns;
    for (const auto& line : read_entry_lines(path)) {
        const auto colon = line.find(':');
        if (colon == std::string::npos) {
            throw Error("invalid_slot_patterns", "expected 'slot: phrase' in " + path.string() +
                                                     ": " + line);
        }
        patterns.add(trim(line.substr(0, colon)), trim(line.substr(colon + 1)));
    }
    return patterns;
}

void SlotPatterns::add(std::string slot, std::string phrase) {
    if (std::find(kSlotNames.begin(), kSlotNames.end(), slot) == kSlotNames.end()) {
        throw Error("invalid_slot_patterns", "unknown slot '" + slot + "'");
    }
    if (phrase.empty()) throw Error("invalid_slot_patterns", "empty phrase for slot " + slot);
    groups_[std::move(slot)].push_back(std::move(phrase));
}

bool SlotPatterns::matches(std::string_view slot, std::string_view text) const {
    const auto it = groups_.find(std::string(slot));
    if (it == groups_.end()) return false;
    return std::any_of(it->second.begin(), it->second.end(), [&](const std::string& phrase) {
        return phrase == "*" ? has_alnum(text) : contains_phrase(text, phrase);
    });
}

SignalRules SignalRules::from_data_dir(const std::filesystem::path& dir) {
    SignalRules rules;
    rules.lexicons.emplace("default", Lexicon::from_file(dir / "lexicon" / "distress.txt"));
    rules.slot_patterns = SlotPatterns::from_file(dir / "lexicon" / "slot_patterns.txt");
    return rules;
}

const Lexicon& SignalRules::lexicon(const std::string& id) const {
    const auto it = lexicons.find(id);
    if (it == lexicons.end()) throw Error("invalid_config", "unknown distress lexicon '" + id + "'");
    return it->second;
}

Session create_session(const SessionConfig& config, std::optional<std::string> scenario_topic) {
    config.validate();
    Session session;
    session.id = generate_session_id();
    session.config = config;
    session.scenario_topic = std::move(scenario_topic);
    return session;
}

SignalState extract_signals(std::string_view text, const SignalState& prior,
                            const Lexicon& lexicon, const SlotPatterns& patterns) {
    if (is_blank(text)) throw Error("empty_text", "message text is empty");
    SignalState next = prior;
    next.user_turn_count = prior.user_turn_count + 1;
    const bool hit = lexicon.matches(text);
    next.distress = prior.distress || hit;
    next.empathy_pending = prior.empathy_pending || hit;
    for (auto name : kSlotNames) {
        auto& slot = next.slots[std::string(name)];
        if (!slot && patterns.matches(name, text)) slot = trim(text);
    }
    return next;
}

Stage next_stage(const Session& session) {
    if (session.stage == Stage::Closing) return Stage::Closing;
    if (session.signals.distress && session.signals.empathy_pending) return Stage::EmpathyOverlay;
    const Stage base = session.stage == Stage::EmpathyOverlay ? session.resume_stage : session.stage;
    return advance(base, session.signals, session.config);
}

Session ingest_user_message(Session session, std::string_view text, const SignalRules& rules,
                            const Clock& clock) {
    if (session.stage == Stage::Closing) throw Error("session_closed", "session is closed");
    if (is_blank(text)) throw Error("empty_text", "message text is empty");
    if (!session.turns.empty() && session.turns.back().role == Role::User) {
        throw Error("alternation_violation", "a user turn is already awaiting a reply");
    }

    session.signals = extract_signals(text, session.signals,
                                      rules.lexicon(session.config.distress_lexicon_id),
                                      rules.slot_patterns);
    session.turns.push_back(Turn{Role::User, std::string(text), session.stage,
                                 session.turns.size(), clock()});

    const Stage base = session.stage == Stage::EmpathyOverlay ? session.resume_stage : session.stage;
    session.resume_stage = advance(base, session.signals, session.config);
    session.stage = next_stage(session);
    return session;
}

Session append_assistant_turn(Session session, std::string_view text, const Clock& clock) {
    if (is_blank(text)) throw Error("empty_text", "assistant text is empty");
    if (!session.turns.empty() && session.turns.back().role != Role::User) {
        throw Error("alternation_violation", "assistant turn must follow a user turn");
    }
    session.turns.push_back(Turn{Role::Assistant, std::string(text), session.stage,
                                 session.turns.size(), clock()});
    if (session.stage == Stage::EmpathyOverlay) session.signals.empathy_pending = false;
    return session;
}

Session close_session(Session session) {
    session.stage = Stage::Closing;
    session.signals.empathy_pending = false;
    return session;
}

const std::vector<Turn>& transcript(const Session& session) { return session.turns; }

nlohmann::json to_json(const Turn& turn) {
    return {{"role", to_string(turn.role)},
            {"text", turn.text},
            {"stage_tag", to_string(turn.stage_tag)},
            {"index", turn.index},
            {"timestamp", turn.timestamp}};
}

nlohmann::json to_json(const SignalState& signals) {
    nlohmann::json slots = nlohmann::json::object();
    for (const auto& [name, value] : signals.slots) {
        slots[name] = value ? nlohmann::json(*value) : nlohmann::json(nullptr);
    }
    return {{"distress", signals.distress},
            {"empathy_pending", signals.empathy_pending},
            {"slots", slots},
            {"user_turn_count", signals.user_turn_count}};
}

Turn turn_from_json(const nlohmann::json& j) {
    Turn t;
    t.role = role_from_string(j.at("role").get<std::string>());
    t.text = j.at("text").get<std::string>();
    t.stage_tag = stage_from_string(j.value("stage_tag", std::string("Intake")));
    t.index = j.value("index", std::size_t{0});
    t.timestamp = j.value("timestamp", std::string());
    return t;
}

nlohmann::ordered_json export_session(const Session& session) {
    nlohmann::ordered_json out;
    out["id"] = session.id;
    out["stage"] = to_string(session.stage);
    out["scenario_topic"] = session.scenario_topic ? nlohmann::ordered_json(*session.scenario_topic)
                                                   : nlohmann::ordered_json(nullptr);
    out["turns"] = nlohmann::ordered_json::array();
    for (const auto& t : session.turns) out["turns"].push_back(nlohmann::ordered_json(to_json(t)));
    out["signals"] = nlohmann::ordered_json(to_json(session.signals));
    return out;
}

}  // namespace counsel
