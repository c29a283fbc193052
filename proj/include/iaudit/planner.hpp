#pragma once

// Planner backends. Every call returns raw text and token counts. Backends are
// called from several agent threads at once.
//
// Requests carry the chat messages plus a structured context; the remote
// backend only sends the messages, the mock backend only reads the context.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace iaudit::agent {

struct ChatMessage {
    std::string role;  // "system", "user" or "assistant"
    std::string content;
};

struct PlannerRequest {
    std::vector<ChatMessage> messages;
    nlohmann::json context = nlohmann::json::object();
};

struct PlannerResponse {
    std::string text;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
};

class Planner {
public:
    virtual ~Planner() = default;
    virtual PlannerResponse complete(const PlannerRequest& request) = 0;
    virtual std::string tag() const = 0;
};

// Rough count used when a backend reports none: one token per 4 characters.
std::int64_t estimate_tokens(const std::string& text);
std::int64_t estimate_tokens(const std::vector<ChatMessage>& messages);

// Deterministic rule-based planner: walks the attack workflow from the agent's
// important information and answers choice actions with the guideline rules.
class MockPlanner final : public Planner {
public:
    PlannerResponse complete(const PlannerRequest& request) override;
    std::string tag() const override { return "mock"; }

    // The plan text the mock would emit for a step context.
    static std::string plan_text(const nlohmann::json& context);
    static std::string tool_answer(const nlohmann::json& context);
};

struct RemoteConfig {
    std::string base_url;  // e.g. http://host:port/v1
    std::string api_key;
    std::string model;
    double temperature = 0.0;
    int max_retries = 2;

    // IAUDIT_PLANNER_URL, IAUDIT_PLANNER_KEY, IAUDIT_PLANNER_MODEL.
    static RemoteConfig from_env();
};

// Chat-completions style endpoint: POST <base_url>/chat/completions.
class RemotePlanner final : public Planner {
public:
    explicit RemotePlanner(RemoteConfig config);
    PlannerResponse complete(const PlannerRequest& request) override;
    std::string tag() const override { return "remote"; }

private:
    RemoteConfig config_;
    std::string scheme_host_port_;
    std::string path_prefix_;
};

// One scripted deviation from the mock plan for one agent.
struct FaultRule {
    std::string agent;          // agent id, or "*"
    int step_from = 0;          // step range, used when action is empty
    int step_to = 0;
    std::string match_action;   // replace when the mock wanted this action...
    std::vector<int> occurrences;  // ...on these occurrences (1-based); empty = all
    std::string set_action;     // replacement action name
    nlohmann::json set_input;   // replacement input (null keeps the mock's)
    nlohmann::json merge_input; // deep-merged into the input
    std::vector<std::string> drop_input;  // dotted paths removed from the input
    std::string raw;            // emitted verbatim instead of a plan
    int raw_attempts = 1;       // how many consecutive calls for the step get `raw`

    static FaultRule from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct FaultScript {
    std::string name;
    std::string fault_class;  // analyzer class this script exercises
    std::vector<FaultRule> rules;

    static FaultScript from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

std::vector<std::string> fault_preset_names();
// Throws PreconditionError for an unknown preset.
FaultScript fault_preset(const std::string& name);

class FaultyPlanner final : public Planner {
public:
    explicit FaultyPlanner(FaultScript script);
    PlannerResponse complete(const PlannerRequest& request) override;
    std::string tag() const override { return "faulty:" + script_.name; }

private:
    FaultScript script_;
    std::mutex mu_;
    std::map<std::pair<std::string, std::string>, int> occurrences_;  // (agent, action) -> count
    std::map<std::pair<std::string, int>, std::string> decided_;      // (agent, step) -> text
};

// "mock", "remote" or "faulty:<preset or script.json>".
std::unique_ptr<Planner> make_planner(const std::string& spec);

}  // namespace iaudit::agent
