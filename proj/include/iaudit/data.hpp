#pragma once

// Synthetic labelled datasets with planted sensitive attributes, splits with
// lineage, and attribute combination into composite labels.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaudit/nn.hpp"

namespace iaudit::data {

struct AttributeSpec {
    std::string name;
    int num_classes = 2;
    double correlation = 0.0;  // in [0,1]; how often the planted signal matches the label
};

struct DatasetSpec {
    std::string name;
    int n_samples = 1000;
    int n_features = 16;
    int n_classes = 4;
    std::string task_label = "class";
    std::vector<std::string> class_names;  // optional, defaults to "<task_label> <i>"
    std::vector<AttributeSpec> attributes;
    double noise_scale = 1.0;
    double class_separation = 1.0;   // std of class-mean coordinates
    double attribute_strength = 1.0; // length of the planted attribute offset
    int clusters_per_class = 1;       // >1 gives each class several Gaussian modes
    std::string common_tasks;
    std::string modality = "vector";
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static DatasetSpec from_json(const nlohmann::json& j);
};

struct Attribute {
    std::string name;
    int num_classes = 2;
    std::vector<int> values;
    std::vector<int> planted;  // generator ground truth, not persisted
};

struct Dataset {
    std::string name;
    nn::Matrix inputs;
    std::vector<int> labels;
    int num_classes = 0;
    std::string task_label = "class";
    std::vector<std::string> class_names;
    std::vector<Attribute> attributes;
    std::vector<std::size_t> source_index;  // row ids in the originally generated dataset
    nlohmann::json provenance = nlohmann::json::object();

    std::size_t size() const { return labels.size(); }
    int n_features() const { return static_cast<int>(inputs.cols()); }
    const Attribute* find_attribute(const std::string& attr) const;
    bool has_label(const std::string& label) const;
    // Task label or attribute column, by name.
    std::vector<int> label_column(const std::string& label) const;
    int label_classes(const std::string& label) const;
    void validate() const;
};

Dataset generate_synthetic_dataset(const DatasetSpec& spec);

Dataset take_rows(const Dataset& d, std::span<const std::size_t> rows, const std::string& part_name);

// Disjoint random partitions with sizes round(cumulative fraction * n).
std::vector<Dataset> split_dataset(const Dataset& d, std::span<const double> fractions, std::uint64_t seed,
                                   std::span<const std::string> part_names = {});

struct CompositeLabel {
    std::vector<std::string> members;
    std::vector<int> radices;
    std::vector<int> labels;
    int num_classes = 1;

    // Mixed-radix: first listed attribute is the most significant digit.
    int encode(std::span<const int> digits) const;
    std::vector<int> decode(int code) const;
};

CompositeLabel combine_attributes(const Dataset& d, std::span<const std::string> names);

// Comma separated names, whitespace trimmed.
std::vector<std::string> parse_label_list(const std::string& text);

struct LabelColumn {
    std::vector<int> values;
    int num_classes = 0;
};
// A single label name, or a comma separated list combined into one label.
// Empty selects the task label.
LabelColumn resolve_label(const Dataset& d, const std::string& label);

void save_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace iaudit::data
