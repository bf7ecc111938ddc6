#pragma once

#include "counsel/conversation.hpp"
#include "counsel/llm_gateway.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace counsel::judge {

struct RubricDimension {
    std::string id;
    std::string name;  // column label; defaults to id
    std::string description;
    int scale_min = 1;
    int scale_max = 5;
};

/// A transcript excerpt paired with the verdict a good judge would give it.
struct FewShotExample {
    std::string transcript_excerpt;
    std::string verdict_block;
};

struct Rubric {
    std::string id;
    int version = 1;
    std::vector<RubricDimension> dimensions;
    std::vector<FewShotExample> exemplars;

    /// Unique dimension ids, at least one dimension, min < max, and every
    /// exemplar's verdict_block parses.
    void validate() const;

    static Rubric from_json(const nlohmann::json& j);
    static Rubric from_file(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    std::vector<std::string> dimension_ids() const;
};

struct JudgeVerdict {
    std::map<std::string, int> scores;
    std::string feedback;

    bool operator==(const JudgeVerdict&) const = default;
};

class VerdictError : public Error {
public:
    enum class Kind { MissingDimension, DuplicateDimension, OutOfRange, NoFeedbackLine, Unparseable };

    VerdictError(Kind kind, const std::string& detail);

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

std::string_view to_string(VerdictError::Kind kind);

/// Raised when every attempt of score_transcript produced an unparseable
/// verdict. Carries the last parse failure.
class ScoringError : public Error {
public:
    ScoringError(VerdictError last, int attempts);

    const VerdictError& last_error() const noexcept { return last_; }
    int attempts() const noexcept { return attempts_; }

private:
    VerdictError last_;
    int attempts_;
};

struct JudgeOptions {
    std::string model = "gpt-4";
    int max_tokens = 512;
};

/// One turn per line, role uppercased: `USER: ...`, `ASSISTANT: ...`.
std::string serialize_transcript(const std::vector<Turn>& transcript);

/// system (criteria + output grammar), then each exemplar as a user/assistant
/// pair, then the serialized transcript. Temperature is 0.
ChatRequest build_judge_prompt(const std::vector<Turn>& transcript, const Rubric& rubric,
                               const JudgeOptions& options = {});

/// Grammar: prose is ignored until the first `<dimension_id>: <integer>`
/// line; then one line per dimension in any order; then `feedback: <text>`
/// running to the end of input.
JudgeVerdict parse_verdict(std::string_view raw, const Rubric& rubric);

/// Inverse of parse_verdict: dimension lines in rubric order, then feedback.
std::string format_verdict(const JudgeVerdict& verdict, const Rubric& rubric);

/// The follow-up user message sent after an unparseable verdict.
std::string reask_message(const VerdictError& error);

/// Asks the backend to judge `transcript`; on a parse failure re-asks with
/// the error appended, at most `retries` times.
JudgeVerdict score_transcript(const std::vector<Turn>& transcript, const Rubric& rubric, ChatBackend& backend,
                              int retries, const JudgeOptions& options = {});

struct Aggregate {
    std::map<std::string, double> means;    // exact arithmetic means
    std::map<std::string, double> rounded;  // half-up to one decimal
    std::size_t count = 0;
};

/// Half-up rounding of sum / n to one decimal, computed in integers.
double round_mean_1dp(long long sum, std::size_t n);

Aggregate aggregate(const std::vector<JudgeVerdict>& verdicts, const Rubric& rubric);

struct RefinementEntry {
    std::string timestamp;
    std::string target;  // rubric id or template id
    int old_version = 1;
    int new_version = 2;
    std::string judge_feedback;
    std::string author_note;

    bool operator==(const RefinementEntry&) const = default;
};

nlohmann::json to_json(const RefinementEntry& entry);
RefinementEntry refinement_from_json(const nlohmann::json& j);

/// Appends `entry` to the JSONL log at `log_path` and bumps the target's
/// version in `catalog_path` (a template catalog array or a rubric object).
/// Throws Error("version_conflict") when old_version is stale or
/// new_version != old_version + 1.
void log_refinement(const RefinementEntry& entry, const std::filesystem::path& catalog_path,
                    const std::filesystem::path& log_path);

std::vector<RefinementEntry> read_refinement_log(const std::filesystem::path& log_path);

}  // namespace counsel::judge
