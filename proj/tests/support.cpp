#include "support.hpp"

#include <cmath>
#include <sstream>

namespace counsel::testing {

std::filesystem::path data_dir() { return default_data_dir(); }

ConsultationResources shipped_resources() { return ConsultationResources::from_data_dir(data_dir()); }

judge::Rubric experiment_rubric() { return judge::Rubric::from_file(data_dir() / "rubrics" / "experiment.json"); }

ChatResponse TaggingCounselor::complete(const ChatRequest& request) {
    request.validate();
    ++calls_;
    std::string system;
    std::size_t users = 0;
    for (const auto& m : request.messages) {
        if (m.role == ChatRole::System) system = m.content;
        if (m.role == ChatRole::User) ++users;
    }
    ChatResponse r;
    r.content = "[" + request.model + "|" + sha256_hex(system).substr(0, 8) + "|" + std::to_string(users) + "]";
    r.finish_reason = "stop";
    return r;
}

HttpReply ScriptedTransport::post(const std::string& url,
                                  const std::vector<std::pair<std::string, std::string>>& headers,
                                  const std::string& body, std::chrono::milliseconds) {
    last_url_ = url;
    last_body_ = body;
    last_headers_ = headers;
    const auto i = static_cast<std::size_t>(calls_++);
    const HttpReply reply = i < replies_.size() ? replies_[i] : replies_.back();
    if (reply.status == 0) throw TransportFailure("connection refused");
    return reply;
}

std::string completion_body(const std::string& content) {
    return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}},
                                         {"finish_reason", "stop"}}}},
                          {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 5}}}}
        .dump();
}

const std::vector<ReferenceRow>& reference_table() {
    using experiment::MethodKind;
    static const std::vector<ReferenceRow> rows{
        {MethodKind::ChatGPTBaseline, {3.2, 3.0, 3.1, 3.2}},
        {MethodKind::GPT4Baseline, {3.5, 3.4, 3.6, 3.5}},
        {MethodKind::CoTPrompting, {3.8, 3.7, 3.9, 3.8}},
        {MethodKind::ProposedChatGPT, {4.2, 4.4, 4.3, 4.5}},
        {MethodKind::ProposedGPT4, {4.5, 4.7, 4.6, 4.8}},
    };
    return rows;
}

std::map<std::string, std::string> reference_judge_script(const std::vector<experiment::Scenario>& scenarios,
                                                          const ConsultationResources& resources,
                                                          const judge::Rubric& rubric) {
    std::map<std::string, std::string> script;
    const auto n = static_cast<long long>(scenarios.size());
    auto sorted = scenarios;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    TaggingCounselor counselor;
    experiment::ConversationOptions options;
    options.clock = frozen_clock(kFrozenTime);
    for (const auto& row : reference_table()) {
        const auto method = experiment::method_variant(row.kind);
        for (long long k = 0; k < n; ++k) {
            judge::JudgeVerdict verdict;
            for (std::size_t d = 0; d < rubric.dimensions.size(); ++d) {
                const long long total = std::llround(row.values[d] * static_cast<double>(n));
                const long long base = total / n;
                verdict.scores[rubric.dimensions[d].id] = static_cast<int>(base + (k < total % n ? 1 : 0));
            }
            verdict.feedback = "scripted verdict for " + std::string(experiment::slug(row.kind));
            const auto transcript =
                experiment::run_conversation(method, sorted[static_cast<std::size_t>(k)], counselor, resources, options);
            const auto key = judge::build_judge_prompt(transcript, rubric).messages.back().content;
            if (!script.emplace(key, judge::format_verdict(verdict, rubric)).second) {
                throw std::logic_error("two cells produced the same transcript");
            }
        }
    }
    return script;
}

std::map<std::string, std::vector<double>> parse_text_table(const std::string& text) {
    std::map<std::string, std::vector<double>> rows;
    std::istringstream in(text);
    std::string line;
    bool in_body = false;
    while (std::getline(in, line)) {
        if (line.empty()) in_body = false;
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (std::size_t bar = line.find(" | "); bar != std::string::npos; bar = line.find(" | ", start)) {
            cells.push_back(trim(line.substr(start, bar - start)));
            start = bar + 3;
        }
        if (cells.empty()) continue;
        cells.push_back(trim(line.substr(start)));
        if (cells[0] == "Method") {
            in_body = true;
            continue;
        }
        if (!in_body) continue;
        std::vector<double> values;
        for (std::size_t i = 1; i < cells.size(); ++i) values.push_back(cells[i] == "n/a" ? -1.0 : std::stod(cells[i]));
        rows[cells[0]] = values;
    }
    return rows;
}

std::string random_message(std::mt19937& rng, bool& distress) {
    static const std::vector<std::string> neutral{
        "hello", "I am not sure where to start", "it has been a long week", "my weekend was quiet",
        "I have a question", "thanks for listening", "ok", "maybe", "I guess so"};
    static const std::vector<std::string> slot_fillers{
        "it affects my daily life", "I can't sleep well", "whenever my boss calls I freeze",
        "every time I see the news", "I cope by running", "walking helps me manage",
        "it hurts my relationships", "dealing with it is hard"};
    static const std::vector<std::string> distressing{
        "I feel overwhelmed", "I'm hopeless", "I can't cope anymore", "I had a panic attack",
        "everything is falling apart", "I feel worthless", "I’m so exhausted"};
    std::uniform_int_distribution<int> pick(0, 9);
    const int roll = pick(rng);
    if (roll < 2) {
        distress = true;
        return distressing[std::uniform_int_distribution<std::size_t>(0, distressing.size() - 1)(rng)];
    }
    distress = false;
    if (roll < 6) return slot_fillers[std::uniform_int_distribution<std::size_t>(0, slot_fillers.size() - 1)(rng)];
    return neutral[std::uniform_int_distribution<std::size_t>(0, neutral.size() - 1)(rng)];
}

StageRunCheck check_random_session(std::mt19937& rng, const SignalRules& rules, int length) {
    SessionConfig config;
    config.advance_slot_threshold = std::uniform_int_distribution<int>(1, 4)(rng);
    config.advance_turn_threshold = std::uniform_int_distribution<int>(1, 6)(rng);
    const Clock clock = frozen_clock(kFrozenTime);
    Session s = append_assistant_turn(create_session(config), "opening", clock);
    int last_rank = progress_rank(s.stage);
    bool any_hit = false;
    bool any_overlay = false;
    const auto fail = [](std::string why) { return StageRunCheck{false, std::move(why)}; };

    for (int i = 0; i < length; ++i) {
        bool hit = false;
        const auto text = random_message(rng, hit);
        const auto before = s.signals.slots;
        s = ingest_user_message(std::move(s), text, rules, clock);
        any_hit = any_hit || hit;
        const bool overlay = s.stage == Stage::EmpathyOverlay;
        any_overlay = any_overlay || overlay;
        if (overlay != hit) return fail("overlay=" + std::to_string(overlay) + " but hit=" + std::to_string(hit) + " on '" + text + "'");
        for (const auto& [name, value] : before) {
            if (value && s.signals.slots.at(name) != value) return fail("slot " + name + " changed after being filled");
        }
        const Stage forward = overlay ? s.resume_stage : s.stage;
        const int rank = progress_rank(forward);
        if (rank < last_rank) return fail("forward stage regressed at message " + std::to_string(i));
        last_rank = rank;
        s = append_assistant_turn(std::move(s), "reply", clock);
        if (s.signals.empathy_pending) return fail("empathy still pending after the reply");
    }
    if (any_hit != any_overlay) return fail("overlay occurrence differs from lexicon hits");
    return {};
}

judge::JudgeVerdict random_verdict(std::mt19937& rng, const judge::Rubric& rubric) {
    static const std::vector<std::string> words{"clear", "warm", "the", "reply", "missed", "context:", "3",
                                                "empathy", "follow-up", "could", "improve", "- steps", "ok."};
    judge::JudgeVerdict v;
    for (const auto& d : rubric.dimensions) {
        v.scores[d.id] = std::uniform_int_distribution<int>(d.scale_min, d.scale_max)(rng);
    }
    const int n = std::uniform_int_distribution<int>(1, 12)(rng);
    for (int i = 0; i < n; ++i) {
        if (i > 0) v.feedback += std::uniform_int_distribution<int>(0, 7)(rng) == 0 ? "\n" : " ";
        v.feedback += words[std::uniform_int_distribution<std::size_t>(0, words.size() - 1)(rng)];
    }
    return v;
}

}  // namespace counsel::testing
