#include "iaudit/actions.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "iaudit/errors.hpp"

namespace iaudit::agent {

using nlohmann::json;

const char* to_string(Role r) { return r == Role::controller ? "controller" : "attacker"; }

const ActionField* ActionSpec::find(const std::string& field) const {
    for (const auto& f : inputs)
        if (f.name == field) return &f;
    return nullptr;
}

namespace {

std::vector<ActionSpec> make_controller() {
    return {
        {act::determine_attacks,
         "Confirm which candidate attacks the attack agents can perform against the target service.",
         {{"attacks", "list of candidate attack names"}}},
        {act::launch_agents,
         "Create an isolated environment and launch one attack agent per confirmed attack.",
         {{"attacks", "list of confirmed attack names"}}},
        {act::monitor_attacks, "Report the status of every launched attack agent.", {}},
        {act::final_answer,
         "Shut down the agents and the environment once every attack has finished.",
         {{"summary", "short closing note", false, false}}},
    };
}

std::vector<ActionSpec> make_attacker() {
    return {
        {act::list_files, "List all files and folders in a directory of the environment.",
         {{"dir_path", "directory relative to the environment root"}}},
        {act::check_parameters, "Describe every parameter a script needs, with types and purposes.",
         {{"script_name", "script to inspect"}}},
        {act::choose_dataset, "Choose the available dataset most similar to the target's training data.",
         {{"file_name", "dataset registry file"},
          {"task_description", "target task description"},
          {"input_format", "target input format"},
          {"output_format", "target output format"},
          {"target_attribute", "sensitive attribute the dataset must carry, or empty", false}}},
        {act::choose_attribute,
         "Choose the label(s) of the shadow dataset that best match the target label; several names are "
         "comma separated and combined into one label.",
         {{"file_name", "dataset registry file"},
          {"task_description", "target task description"},
          {"shadow_dataset", "name of the chosen shadow dataset"},
          {"output_format", "target output format"}}},
        {act::choose_architecture, "Choose the shadow or surrogate model architecture.",
         {{"file_name", "model registry file"},
          {"access", "target service access type"},
          {"attack_name", "attack being prepared"}}},
        {act::set_parameters,
         "Set learning rate, batch size, number of epochs and dataset size for a script, with reasons.",
         {{"script_name", "script the values are for"},
          {"dataset_name", "chosen dataset"},
          {"model_name", "chosen architecture, empty when the script takes none", false},
          {"attack_name", "attack being prepared"},
          {"purpose", "what the script trains", true, false}}},
        {act::execute_script, "Execute a script with explicitly passed parameters.",
         {{"script_name", "script to run"}, {"parameters", "mapping of parameter names to values"}}},
        {act::final_answer,
         "Report the attack: metric values copied from observations and a short summary. Use "
         "{\"status\": \"failed\", \"reason\": ...} when the attack cannot be completed.",
         {{"metrics", "metric name to value, as observed", false, false},
          {"summary", "plain-language summary", false, false},
          {"status", "\"failed\" to give up", false, false},
          {"reason", "why the attack failed", false, false}}},
    };
}

std::string normalise(std::string s) {
    for (auto& c : s) c = (c == ' ' || c == '-') ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    const auto b = s.find_first_not_of('_');
    const auto e = s.find_last_not_of('_');
    s = b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    if (s.size() > 7 && s.compare(s.size() - 7, 7, "_attack") == 0) s.resize(s.size() - 7);
    return s;
}

}  // namespace

const std::vector<ActionSpec>& action_space(Role role) {
    static const auto controller = make_controller();
    static const auto attacker = make_attacker();
    return role == Role::controller ? controller : attacker;
}

const ActionSpec* find_action(Role role, const std::string& name) {
    for (const auto& a : action_space(role))
        if (a.name == name) return &a;
    return nullptr;
}

std::string describe_action_space(Role role) {
    std::string out;
    for (const auto& a : action_space(role)) {
        out += "- " + a.name + ": " + a.description + "\n";
        for (const auto& f : a.inputs)
            out += "    " + f.name + (f.required ? "" : " (optional)") + ": " + f.description + "\n";
    }
    return out;
}

std::vector<std::string> check_action_input(const ActionSpec& spec, const json& input) {
    std::vector<std::string> problems;
    if (!input.is_object()) return {"action input must be a JSON object"};
    for (const auto& f : spec.inputs)
        if (f.required && !input.contains(f.name)) problems.push_back("missing field '" + f.name + "'");
    for (auto it = input.begin(); it != input.end(); ++it)
        if (!spec.find(it.key())) problems.push_back("unknown field '" + it.key() + "'");
    return problems;
}

std::optional<attacks::AttackKind> parse_attack_name(const std::string& text) {
    const auto n = normalise(text);
    static const std::pair<const char*, attacks::AttackKind> aliases[] = {
        {"membership_inference", attacks::AttackKind::membership_inference},
        {"mia", attacks::AttackKind::membership_inference},
        {"model_stealing", attacks::AttackKind::model_stealing},
        {"stealing", attacks::AttackKind::model_stealing},
        {"model_extraction", attacks::AttackKind::model_stealing},
        {"data_reconstruction", attacks::AttackKind::data_reconstruction},
        {"reconstruction", attacks::AttackKind::data_reconstruction},
        {"model_inversion", attacks::AttackKind::data_reconstruction},
        {"attribute_inference", attacks::AttackKind::attribute_inference},
        {"attribute", attacks::AttackKind::attribute_inference},
    };
    for (const auto& [name, kind] : aliases)
        if (n == name) return kind;
    return std::nullopt;
}

Determination determine_attacks(const std::vector<std::string>& candidates, const TargetServiceInfo& info,
                                const std::vector<registry::DatasetRecord>& datasets) {
    if (candidates.empty()) throw PreconditionError("no candidate attacks given");
    Determination d;
    std::set<attacks::AttackKind> seen;
    for (const auto& c : candidates) {
        const auto kind = parse_attack_name(c);
        if (!kind) {
            d.excluded.emplace_back(c, "no attack pipeline is registered for it");
            continue;
        }
        if (!seen.insert(*kind).second) {
            d.excluded.emplace_back(c, "duplicate of " + std::string(attacks::to_string(*kind)));
            continue;
        }
        if (info.predict_url.empty()) {
            d.excluded.emplace_back(c, "the service exposes no prediction endpoint");
            continue;
        }
        if (*kind == attacks::AttackKind::attribute_inference) {
            if (!info.has_embedding()) {
                d.excluded.emplace_back(c, "the service exposes no embedding endpoint");
                continue;
            }
            if (info.sensitive_attribute.empty()) {
                d.excluded.emplace_back(c, "no sensitive attribute was provided");
                continue;
            }
            const bool carried = std::any_of(datasets.begin(), datasets.end(), [&](const auto& r) {
                return r.find_label(info.sensitive_attribute) != nullptr;
            });
            if (!carried) {
                d.excluded.emplace_back(c, "no available dataset carries the attribute '" + info.sensitive_attribute + "'");
                continue;
            }
        }
        d.confirmed.push_back(*kind);
    }
    std::sort(d.confirmed.begin(), d.confirmed.end());
    return d;
}

}  // namespace iaudit::agent
