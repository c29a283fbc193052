#pragma once

// Action spaces of the controller and attack agents, plus the controller's
// attack confirmation.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaudit/attacks.hpp"
#include "iaudit/registry.hpp"
#include "iaudit/service_info.hpp"

namespace iaudit::agent {

enum class Role { controller, attacker };
const char* to_string(Role r);

namespace act {
inline constexpr const char* determine_attacks = "Determine Attacks";
inline constexpr const char* launch_agents = "Launch AttackAgent";
inline constexpr const char* monitor_attacks = "Monitor Attacks";
inline constexpr const char* final_answer = "Final Answer";
inline constexpr const char* list_files = "List Files";
inline constexpr const char* check_parameters = "Check Required Parameters";
inline constexpr const char* choose_dataset = "Choose Shadow Dataset";
inline constexpr const char* choose_attribute = "Choose Attribute";
inline constexpr const char* choose_architecture = "Choose Shadow Model Architecture";
inline constexpr const char* set_parameters = "Set Parameters";
inline constexpr const char* execute_script = "Execute Script";
}  // namespace act

struct ActionField {
    std::string name;
    std::string description;
    bool required = true;
    // Values must be traceable to an observation or the initial instruction.
    bool grounded = true;
};

struct ActionSpec {
    std::string name;
    std::string description;
    std::vector<ActionField> inputs;

    const ActionField* find(const std::string& field) const;
};

const std::vector<ActionSpec>& action_space(Role role);
const ActionSpec* find_action(Role role, const std::string& name);
std::string describe_action_space(Role role);

// Missing required fields and unknown fields, one message each.
std::vector<std::string> check_action_input(const ActionSpec& spec, const nlohmann::json& input);

// Accepts the canonical names, short names and loose forms such as
// "Membership Inference Attack".
std::optional<attacks::AttackKind> parse_attack_name(const std::string& text);

struct Determination {
    std::vector<attacks::AttackKind> confirmed;
    std::vector<std::pair<std::string, std::string>> excluded;  // candidate, reason
};

// Prediction-based attacks need the predict endpoint; attribute inference also
// needs an embedding endpoint, a sensitive attribute and a dataset carrying it.
// Throws PreconditionError on an empty candidate list.
Determination determine_attacks(const std::vector<std::string>& candidates, const TargetServiceInfo& info,
                                const std::vector<registry::DatasetRecord>& datasets);

}  // namespace iaudit::agent
