#pragma once

// Assessment report, token cost, completion statistics and the trace analyzer.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaudit/attacks.hpp"
#include "iaudit/service_info.hpp"
#include "iaudit/trace.hpp"

namespace iaudit::report {

// ---- cost -------------------------------------------------------------------

struct PriceTable {
    double input_per_million = 2.50;
    double output_per_million = 10.00;
    std::string currency = "USD";

    void validate() const;
    nlohmann::json to_json() const;
    static PriceTable from_json(const nlohmann::json& j);
};

PriceTable load_price_table(const std::filesystem::path& path);

// Exact amount in 1e-12 currency units (price per million tokens times tokens).
struct Cost {
    std::int64_t pico = 0;

    double amount() const { return static_cast<double>(pico) * 1e-12; }
    std::string rounded(int decimals = 3) const;
    Cost operator+(const Cost& o) const { return {pico + o.pico}; }
    bool operator==(const Cost&) const = default;
};

Cost cost_of_tokens(std::int64_t input_tokens, std::int64_t output_tokens, const PriceTable& prices);
Cost cost_of(const std::vector<trace::TraceRecord>& trace, const PriceTable& prices);

// ---- report -----------------------------------------------------------------

enum class RiskLevel { low, elevated, high, unknown };
const char* to_string(RiskLevel r);

struct RiskAssessment {
    RiskLevel level = RiskLevel::unknown;
    std::string rationale;
};

// MIA: best accuracy > 0.6 elevated, > 0.75 high. Stealing: agreement (or
// surrogate accuracy when agreement was not measured) > 0.6 elevated, > 0.8 high.
// Attribute inference: accuracy above the majority baseline by > 0.1 elevated,
// > 0.25 high. Reconstruction: MSE below the mean-input baseline elevated,
// below half of it high.
RiskAssessment assess_risk(const attacks::AttackResult& result);
const std::string& risk_rubric();
const std::vector<std::string>& defenses(attacks::AttackKind kind);

struct AttackSection {
    attacks::AttackKind kind = attacks::AttackKind::membership_inference;
    std::string agent;
    std::string status;  // "completed" or "failed"
    std::string reason;
    int steps = 0;
    std::optional<attacks::AttackResult> result;
    nlohmann::json process = nlohmann::json::object();  // shadow dataset, model, parameters
    std::string summary;                                // the agent's own words

    nlohmann::json to_json() const;
    static AttackSection from_json(const nlohmann::json& j);
};

struct ReportInput {
    agent::TargetServiceInfo service;
    std::vector<AttackSection> sections;
    std::vector<std::pair<std::string, std::string>> excluded;  // attack, reason
    std::string run_id;
    bool complete = false;
    std::string failure;
    int total_steps = 0;
    std::optional<Cost> cost;
    std::string currency = "USD";
};

std::string render_report(const ReportInput& in);
nlohmann::json results_json(const ReportInput& in);

// ---- runs -------------------------------------------------------------------

// Controller final answer accepted and every confirmed attack completed.
bool run_complete(const std::vector<trace::TraceRecord>& trace);

struct CompletionStats {
    std::map<std::string, double> per_target;
    std::map<std::string, int> runs;
    double overall = 0.0;
};

// Throws PreconditionError when there are no traces.
CompletionStats completion_rate(const std::map<std::string, std::vector<std::vector<trace::TraceRecord>>>& by_target);

struct StepStats {
    int runs = 0;  // completed agents counted in the mean
    double mean = 0.0;
    int min = 0;
    int max = 0;
    int incomplete = 0;
};

// Agent step counts per attack kind from the agents' end records.
std::map<std::string, StepStats> summarize_steps(const std::vector<std::vector<trace::TraceRecord>>& traces);

// ---- analyzer ---------------------------------------------------------------

struct ErrorFindings {
    std::string run;
    int bad_plan = 0;
    int instruction_violation = 0;
    int context_loss = 0;
    int hallucination_type1 = 0;
    int hallucination_type2 = 0;
    int hallucination_type3 = 0;
    double dominant_action_fraction = 0.0;  // over agents with at least 5 steps
    std::string dominant_agent;
    std::string dominant_action;
    std::vector<std::string> notes;

    static constexpr double kDominantThreshold = 0.7;
    bool dominant_flag() const { return dominant_action_fraction > kDominantThreshold; }
    // Number of categories with a finding.
    int categories() const;
    nlohmann::json to_json() const;
    trace::TraceRecord to_record() const;
};

// Recomputes every check from the records and the archived observation texts.
ErrorFindings analyze_trace(const std::vector<trace::TraceRecord>& trace, const trace::ObservationArchive& archive);

}  // namespace iaudit::report
