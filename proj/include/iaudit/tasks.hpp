#pragma once

// Attack tasks as named scripts with declared parameter manifests, and the
// dispatcher that runs them against an assessment environment.
//
// Environment layout (all paths in parameters are relative to its root):
//   available_datasets.json  available_models.json  available_tasks.json
//   datasets/*.bin           eval/{members,nonmembers,eval,probe}.bin

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaudit/attacks.hpp"
#include "iaudit/errors.hpp"

namespace iaudit::tasks {

// A task invocation that does not satisfy the manifest.
class ParameterError : public PreconditionError {
public:
    using PreconditionError::PreconditionError;
};

enum class ParamType { path, model, label, real, integer, text };
const char* to_string(ParamType t);
ParamType param_type_from_string(const std::string& name);

struct ParameterSpec {
    std::string name;
    ParamType type = ParamType::text;
    std::string purpose;
    bool required = true;
    nlohmann::json default_value;          // null for required parameters
    std::vector<nlohmann::json> candidates; // enumerable values, empty if open

    std::uint64_t k() const { return candidates.size(); }
};

struct TaskManifest {
    std::string task;
    std::string script;  // file name shown to agents
    std::string purpose;
    std::vector<ParameterSpec> parameters;

    const ParameterSpec* find(const std::string& name) const;
    void validate() const;
    nlohmann::json to_json() const;
    static TaskManifest from_json(const nlohmann::json& j);
    // Human readable listing used as the Check Required Parameters observation.
    std::string describe() const;
};

std::vector<TaskManifest> builtin_manifests();
// Throws PreconditionError for an unknown task (matched on task or script name).
const TaskManifest& task_manifest(const std::string& name);

void save_task_registry(const std::filesystem::path& path, const std::vector<TaskManifest>& manifests);
std::vector<TaskManifest> load_task_registry(const std::filesystem::path& path);

// k_j of the enumerable parameters other than dataset, model and label choices.
std::vector<std::uint64_t> candidate_counts(const TaskManifest& manifest);

// Checks names, presence and types; fills defaults. Throws ParameterError naming
// the first offending parameter.
nlohmann::json normalize_parameters(const TaskManifest& manifest, const nlohmann::json& params);

struct EvalSets {
    data::Dataset members;
    data::Dataset nonmembers;
    data::Dataset eval;
    data::Dataset probe;

    attacks::MemberSets member_sets() const;
};
EvalSets load_eval_sets(const std::filesystem::path& env_root);
void save_eval_sets(const std::filesystem::path& env_root, const EvalSets& sets);

struct TaskContext {
    std::filesystem::path env_root;
    std::filesystem::path workspace;  // artifacts go to workspace/artifacts
    service::PredictionApi* api = nullptr;
    std::uint64_t seed = 0;
    std::optional<std::int64_t> query_allowance;
};

// Resolves a parameter path inside the environment. Evaluation data is refused
// as shadow data.
std::filesystem::path resolve_shadow_path(const std::filesystem::path& env_root, const std::string& relative);

// Runs a task. Artifact paths in the result are relative to the workspace.
attacks::AttackResult run_task(const std::string& task, const nlohmann::json& params, const TaskContext& ctx);

}  // namespace iaudit::tasks
