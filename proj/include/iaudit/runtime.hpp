#pragma once

// Controller and attack agents: the step loop, tool dispatch, workspaces and
// the run directory.
//
// Run directory layout (<workspace>/<run id>/):
//   trace.jsonl          merged trace, controller first, then agents in launch order
//   traces/<agent>.jsonl per-agent streams written while running
//   observations/        full observation texts by digest
//   agents/<agent>/      private workspace (artifacts/, result.json)
//   report.md  results.json

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaudit/actions.hpp"
#include "iaudit/planner.hpp"
#include "iaudit/report.hpp"
#include "iaudit/service_info.hpp"

namespace iaudit::agent {

enum class AgentState { pending, running, completed, failed };
const char* to_string(AgentState s);

struct AgentStatus {
    std::string agent;
    attacks::AttackKind kind = attacks::AttackKind::membership_inference;
    AgentState state = AgentState::pending;
    int steps = 0;
    std::string reason;
};

struct RunConfig {
    std::string planner = "mock";
    std::uint64_t seed = 0;
    int max_steps = 50;
    double runtime_limit_s = 5 * 3600.0;
    // Controller logical time advanced per Launch or unfinished Monitor.
    int poll_interval_steps = 10;
    std::size_t observation_limit = 1500;
    std::filesystem::path workspace = "workspace";
    std::string run_id;  // derived from the service and seed when empty
    // Step indices as timestamps; wall-clock seconds otherwise.
    bool logical_clock = true;
    report::PriceTable prices;

    void validate() const;
    nlohmann::json to_json() const;
    // Missing keys keep their defaults.
    static RunConfig from_json(const nlohmann::json& j);
};

RunConfig load_run_config(const std::filesystem::path& path);

struct AssessmentOutcome {
    std::string run_id;
    std::filesystem::path run_dir;
    std::filesystem::path trace_path;
    std::filesystem::path report_path;
    std::filesystem::path results_path;
    bool complete = false;
    std::string failure;
    std::vector<attacks::AttackKind> confirmed;
    std::vector<std::pair<std::string, std::string>> excluded;
    std::vector<AgentStatus> agents;
    std::vector<report::AttackSection> sections;
    int controller_steps = 0;
    int total_steps = 0;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
};

// Runs one assessment against the service described by `info`, with the
// environment (registries, datasets, evaluation sets) at `env_root`.
AssessmentOutcome run_assessment(const TargetServiceInfo& info, const std::filesystem::path& env_root,
                                 const RunConfig& config, Planner& planner);

// Convenience overload building the planner from config.planner.
AssessmentOutcome run_assessment(const TargetServiceInfo& info, const std::filesystem::path& env_root,
                                 const RunConfig& config);

std::string default_run_id(const TargetServiceInfo& info, std::uint64_t seed);

// Adds `entry` to the list `section` of <workspace>/manifest.json, replacing an
// entry with the same value under `key`. Paths in entries are workspace-relative.
void index_output(const std::filesystem::path& workspace, const std::string& section, const nlohmann::json& entry,
                  const std::string& key = "id");

}  // namespace iaudit::agent
