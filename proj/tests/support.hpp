#pragma once

#include "counsel/consultation.hpp"
#include "counsel/experiment.hpp"
#include "counsel/judge.hpp"
#include "counsel/llm_gateway.hpp"

#include <array>
#include <atomic>
#include <mutex>
#include <random>
#include <string>
#include <vector>

namespace counsel::testing {

inline constexpr const char* kFrozenTime = "2026-01-01T00:00:00Z";

std::filesystem::path data_dir();
ConsultationResources shipped_resources();
judge::Rubric experiment_rubric();

/// Replies `[<model>|<8 hex of the system prompt digest>|<user message count>]`
/// so arms that differ only in model or system prompt yield distinct transcripts.
class TaggingCounselor : public ChatBackend {
public:
    ChatResponse complete(const ChatRequest& request) override;
    std::string_view kind() const override { return "tagging"; }
    std::size_t calls() const { return calls_.load(); }

private:
    std::atomic<std::size_t> calls_{0};
};

/// Replays a fixed list of outcomes; status 0 stands for a transport failure.
class ScriptedTransport : public Transport {
public:
    explicit ScriptedTransport(std::vector<HttpReply> replies) : replies_(std::move(replies)) {}

    HttpReply post(const std::string& url, const std::vector<std::pair<std::string, std::string>>& headers,
                   const std::string& body, std::chrono::milliseconds timeout) override;

    int calls() const { return calls_; }
    const std::string& last_url() const { return last_url_; }
    const std::string& last_body() const { return last_body_; }
    const std::vector<std::pair<std::string, std::string>>& last_headers() const { return last_headers_; }

private:
    std::vector<HttpReply> replies_;
    int calls_ = 0;
    std::string last_url_;
    std::string last_body_;
    std::vector<std::pair<std::string, std::string>> last_headers_;
};

std::string completion_body(const std::string& content);

/// Rows of the reference comparison table, metrics in rubric order
/// (relevance, empathy, context, satisfaction).
struct ReferenceRow {
    experiment::MethodKind kind;
    std::array<double, 4> values;
};
const std::vector<ReferenceRow>& reference_table();

/// Judge script that makes every arm's per-dimension mean over `scenarios`
/// equal the reference value: scenario k of n scores floor(mean) + 1 when
/// k < remainder, else floor(mean). Keys are the judge prompt's final user
/// message for the transcript each arm produces with TaggingCounselor.
std::map<std::string, std::string> reference_judge_script(const std::vector<experiment::Scenario>& scenarios,
                                                          const ConsultationResources& resources,
                                                          const judge::Rubric& rubric);

/// Reads the numeric cells of an emitted text table, keyed by method label.
std::map<std::string, std::vector<double>> parse_text_table(const std::string& text);

/// Random seeker message drawn from neutral, slot-filling and distress
/// phrases. `distress` reports whether a distress phrase was used.
std::string random_message(std::mt19937& rng, bool& distress);

struct StageRunCheck {
    bool ok = true;
    std::string failure;
};

/// Drives one random session of `length` messages through ingest and
/// assistant replies and checks: forward projection non-decreasing, slots
/// monotone, overlay entered iff a distress phrase was sent.
StageRunCheck check_random_session(std::mt19937& rng, const SignalRules& rules, int length);

/// Random valid verdict over `rubric`, feedback drawn from printable text.
judge::JudgeVerdict random_verdict(std::mt19937& rng, const judge::Rubric& rubric);

}  // namespace counsel::testing
