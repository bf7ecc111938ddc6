#pragma once

#include "counsel/conversation.hpp"
#include "counsel/llm_gateway.hpp"
#include "counsel/prompt_library.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace counsel {

/// Immutable inputs of a layered consultation.
struct ConsultationResources {
    PromptCatalog catalog;
    std::vector<ScenarioCase> scenario_cases;
    SignalRules rules;
    SessionConfig session_config;

    /// catalog.json, scenario_cases.json and the lexicon files under `dir`.
    static ConsultationResources from_data_dir(const std::filesystem::path& dir);
};

/// Selects and renders the InitialGathering prompt and appends it as the
/// session's opening assistant turn.
Session open_consultation(Session session, const ConsultationResources& resources,
                          const Clock& clock = system_clock());

/// The model request for the counselor's next reply: stage-aware system
/// prompt with the selected template injected as reply guidance, followed by
/// the transcript. Records the chosen template in `session.used_templates`.
ChatRequest layered_reply_request(Session& session, const ConsultationResources& resources,
                                  const std::string& model, int max_tokens);

std::vector<ChatMessage> transcript_messages(const std::vector<Turn>& turns);

}  // namespace counsel
