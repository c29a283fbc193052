#pragma once

// Desk-scale assessment environments: a generated dataset split into a target
// half and an attacker half, a trained target model, registries with
// distractors, and the evaluation sets the auditor is given.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "iaudit/data.hpp"
#include "iaudit/nn.hpp"
#include "iaudit/registry.hpp"
#include "iaudit/service_info.hpp"
#include "iaudit/tasks.hpp"

namespace iaudit::fixtures {

struct FixtureSpec {
    std::string name;
    std::string task_description;
    std::string modality = "vector";
    data::DatasetSpec data;
    std::string target_label;  // empty = task label; comma separated attributes are combined
    int target_train_rows = 300;
    registry::ModelRecord target_architecture{"target", {128, 64}, 2, false, "", {}};
    nn::TrainConfig target_train;
    bool expose_embedding = false;
    std::string sensitive_attribute;
    int member_rows = 150;
    int eval_rows = 2000;
    int probe_rows = 100;
    // The attacker's public data over-represents one class: all of its rows are
    // kept, other rows with probability pool_keep.
    int pool_dominant_class = 0;
    double pool_keep = 0.12;
    std::optional<std::int64_t> query_budget;

    void validate() const;
    nlohmann::json to_json() const;
    // Missing keys keep their defaults.
    static FixtureSpec from_json(const nlohmann::json& j);
};

// In-memory partitions of a fixture, before anything is trained.
struct FixtureData {
    data::Dataset target_train;
    data::Dataset target_holdout;  // rest of the target half, minus the sets below
    data::Dataset pool;            // attacker's public dataset
    tasks::EvalSets eval;
};

FixtureData make_fixture_data(const FixtureSpec& spec);

struct Fixture {
    FixtureSpec spec;
    std::filesystem::path root;
    std::filesystem::path env_root;    // what agents see
    std::filesystem::path model_path;  // service artifact, outside env_root
    int num_classes = 0;
    double train_accuracy = 0.0;
    double holdout_accuracy = 0.0;

    agent::TargetServiceInfo service_info(const std::string& predict_url, const std::string& embedding_url = {}) const;
};

// Writes <root>/env/..., <root>/service/model.bin and <root>/fixture.json.
Fixture build_fixture(const FixtureSpec& spec, const std::filesystem::path& root);
Fixture load_fixture(const std::filesystem::path& root);

// small < medium < large; large is flagged overfit-prone.
std::vector<registry::ModelRecord> standard_models();

// Two services with embeddings and a sensitive attribute (planted with
// correlation 0.9 and 0.0), two predict-only services.
std::vector<FixtureSpec> standard_fixtures(std::uint64_t seed = 0);

// One fixture family used for the membership, stealing and calibration checks.
FixtureSpec sensor_fixture(std::uint64_t seed);

}  // namespace iaudit::fixtures
