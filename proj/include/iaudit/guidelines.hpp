#pragma once

// Decision guidelines for the choice actions. Each action sends the guideline
// text and candidate summaries to the planner; the mock planner answers with
// the deterministic rules below.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaudit/attacks.hpp"
#include "iaudit/registry.hpp"
#include "iaudit/tasks.hpp"

namespace iaudit::agent {

struct LabelSummary {
    std::string name;
    int classes = 0;
};

struct DatasetSummary {
    std::string name;
    std::string path;
    std::int64_t rows = 0;
    int input_size = 0;
    int num_classes = 0;
    std::string common_tasks;
    std::vector<LabelSummary> labels;  // task label first

    static DatasetSummary from_record(const registry::DatasetRecord& r);
    nlohmann::json to_json() const;
    static DatasetSummary from_json(const nlohmann::json& j);
    std::string describe() const;
};

struct ModelSummary {
    std::string name;
    std::vector<int> hidden_layers;
    int capacity_rank = 0;
    bool overfit_prone = false;
    std::string note;

    static ModelSummary from_record(const registry::ModelRecord& r);
    nlohmann::json to_json() const;
    static ModelSummary from_json(const nlohmann::json& j);
    std::string describe() const;
};

struct ShadowQuery {
    std::optional<int> classes;
    std::optional<int> input_size;
    std::string task_description;
    std::string attribute;

    nlohmann::json to_json() const;
    static ShadowQuery from_json(const nlohmann::json& j);
};

struct ScoredDataset {
    std::string name;
    bool eligible = true;  // input size compatible
    bool has_attribute = false;
    bool class_match = false;
    int overlap = 0;
    double score = 0.0;
};

// attribute presence (100) >> class-count match (10) >> task-text overlap (0..9);
// a dataset whose input size differs from the target's is ineligible.
std::vector<ScoredDataset> score_shadow_datasets(const std::vector<DatasetSummary>& candidates, const ShadowQuery& q);
// Highest score, earliest on ties. Throws PreconditionError for an empty
// registry or no eligible dataset, InfeasibleAttack when no dataset carries
// the requested attribute.
std::string choose_shadow_dataset_rule(const std::vector<DatasetSummary>& candidates, const ShadowQuery& q);

// Product of class counts of a set of labels.
int class_product(const DatasetSummary& d, const std::vector<std::string>& names);

struct AttributeChoice {
    std::vector<std::string> names;
    int classes = 0;
    bool exact = false;

    std::string text() const;  // comma separated
};

// A single label with the target's class count, else the smallest combination of
// non-task labels whose product matches, else the closest product.
AttributeChoice choose_attribute_rule(const DatasetSummary& d, int target_classes);

// Stealing: highest capacity that is not flagged overfit-prone. Other attacks:
// the middle capacity tier.
std::string choose_architecture_rule(const std::vector<ModelSummary>& models, attacks::AttackKind kind);

struct ParameterValue {
    std::string name;
    nlohmann::json value;
    std::string reason;
};

std::vector<ParameterValue> set_parameters_rule(const tasks::TaskManifest& manifest, attacks::AttackKind kind,
                                                std::int64_t dataset_rows, std::optional<std::int64_t> query_budget);

// Prompt text for a choice action: "choose_shadow_dataset", "choose_attribute",
// "choose_architecture" or "set_parameters".
const std::string& guideline(const std::string& tool);

}  // namespace iaudit::agent
