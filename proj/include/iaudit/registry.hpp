#pragma once

// available_datasets / available_models registry files. Records are plain JSON
// with human-readable keys so they can be pasted into planner prompts verbatim.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaudit/data.hpp"

namespace iaudit::registry {

inline constexpr int kRegistryFormatVersion = 1;

struct LabelInfo {
    std::string name;
    int num_classes = 2;
};

struct DatasetRecord {
    std::string name;
    int num_classes = 0;
    int input_size = 0;
    std::vector<std::string> class_names;
    std::string path;  // as written in the file
    std::filesystem::path resolved_path;
    std::string common_tasks;
    std::vector<LabelInfo> attributes;  // every annotated label, task label first
    nlohmann::json extra = nlohmann::json::object();

    const LabelInfo* find_label(const std::string& label) const;
    std::size_t label_count() const { return attributes.size(); }
    nlohmann::json to_json() const;
};

struct ModelRecord {
    std::string name;
    std::vector<int> hidden_layers;
    int capacity_rank = 0;  // larger = more capacity
    bool overfit_prone = false;
    std::string note;
    nlohmann::json extra = nlohmann::json::object();

    std::vector<int> layer_sizes(int input_width, int output_width) const;
    nlohmann::json to_json() const;
};

struct Registry {
    std::vector<DatasetRecord> datasets;
    std::vector<ModelRecord> models;

    const DatasetRecord* find_dataset(const std::string& name) const;
    const ModelRecord* find_model(const std::string& name) const;
};

// Loads either kind of registry file ({"format_version", "datasets"|"models"} or a
// bare JSON array). Validates every record; unknown keys land in `extra`.
// Throws FormatError naming the offending field or path.
Registry load_registry(const std::filesystem::path& path);

void save_dataset_registry(const std::filesystem::path& path, const std::vector<DatasetRecord>& records);
void save_model_registry(const std::filesystem::path& path, const std::vector<ModelRecord>& records);

// Registry row describing a dataset file written at `relative_path` (relative to the registry).
DatasetRecord describe_dataset(const data::Dataset& d, const std::string& relative_path,
                               const std::string& common_tasks);

// sum_i L_{D_i} * |M| * prod_j k_j, where L is the annotated-label count of each dataset.
// Throws PreconditionError on overflow or a zero candidate count.
std::uint64_t search_space_size(const std::vector<DatasetRecord>& datasets, const std::vector<ModelRecord>& models,
                                const std::vector<std::uint64_t>& parameter_choices);

}  // namespace iaudit::registry
