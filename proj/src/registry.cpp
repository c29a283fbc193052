#include "iaudit/registry.hpp"

#include <fstream>
#include <limits>
#include <set>

#include "iaudit/errors.hpp"

namespace iaudit::registry {
namespace {

const std::set<std::string> kDatasetKeys{"name",        "number of classes", "input data size", "class names",
                                         "dataset path", "common tasks",      "attributes"};
const std::set<std::string> kModelKeys{"name", "hidden layers", "capacity rank", "overfit prone", "note"};

template <typename T>
T required(const nlohmann::json& row, const std::string& key, const std::string& where) {
    if (!row.contains(key)) throw FormatError(where + ": missing required field \"" + key + "\"");
    try {
        return row.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw FormatError(where + ": field \"" + key + "\" has the wrong type");
    }
}

nlohmann::json collect_extra(const nlohmann::json& row, const std::set<std::string>& known) {
    nlohmann::json extra = nlohmann::json::object();
    for (auto it = row.begin(); it != row.end(); ++it)
        if (!known.count(it.key())) extra[it.key()] = it.value();
    return extra;
}

DatasetRecord parse_dataset(const nlohmann::json& row, const std::filesystem::path& base, std::size_t index) {
    const std::string where = "dataset record " + std::to_string(index);
    DatasetRecord r;
    r.name = required<std::string>(row, "name", where);
    const std::string named = where + " (" + r.name + ")";
    r.num_classes = required<int>(row, "number of classes", named);
    r.input_size = required<int>(row, "input data size", named);
    r.class_names = required<std::vector<std::string>>(row, "class names", named);
    r.path = required<std::string>(row, "dataset path", named);
    r.common_tasks = required<std::string>(row, "common tasks", named);
    if (!row.contains("attributes")) throw FormatError(named + ": missing required field \"attributes\"");
    for (const auto& a : row.at("attributes")) {
        LabelInfo li;
        li.name = required<std::string>(a, "name", named + " attribute");
        li.num_classes = required<int>(a, "number of classes", named + " attribute " + li.name);
        if (li.num_classes < 2) throw FormatError(named + ": attribute " + li.name + " needs >= 2 classes");
        r.attributes.push_back(li);
    }
    if (r.num_classes < 2) throw FormatError(named + ": \"number of classes\" must be >= 2");
    if (r.input_size < 1) throw FormatError(named + ": \"input data size\" must be >= 1");
    r.extra = collect_extra(row, kDatasetKeys);
    r.resolved_path = base / r.path;
    if (!std::filesystem::exists(r.resolved_path))
        throw FormatError(named + ": dataset path '" + r.path + "' does not resolve");
    return r;
}

ModelRecord parse_model(const nlohmann::json& row, std::size_t index) {
    const std::string where = "model record " + std::to_string(index);
    ModelRecord m;
    m.name = required<std::string>(row, "name", where);
    const std::string named = where + " (" + m.name + ")";
    m.hidden_layers = required<std::vector<int>>(row, "hidden layers", named);
    m.capacity_rank = required<int>(row, "capacity rank", named);
    m.overfit_prone = row.value("overfit prone", false);
    m.note = row.value("note", std::string());
    for (int h : m.hidden_layers)
        if (h < 1) throw FormatError(named + ": hidden layer widths must be positive");
    m.extra = collect_extra(row, kModelKeys);
    return m;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError("cannot write '" + path.string() + "'");
    f << j.dump(2) << '\n';
}

}  // namespace

const LabelInfo* DatasetRecord::find_label(const std::string& label) const {
    for (const auto& a : attributes)
        if (a.name == label) return &a;
    return nullptr;
}

nlohmann::json DatasetRecord::to_json() const {
    nlohmann::json attrs = nlohmann::json::array();
    for (const auto& a : attributes) attrs.push_back({{"name", a.name}, {"number of classes", a.num_classes}});
    nlohmann::json j = extra;
    j["name"] = name;
    j["number of classes"] = num_classes;
    j["input data size"] = input_size;
    j["class names"] = class_names;
    j["dataset path"] = path;
    j["common tasks"] = common_tasks;
    j["attributes"] = attrs;
    return j;
}

std::vector<int> ModelRecord::layer_sizes(int input_width, int output_width) const {
    std::vector<int> sizes{input_width};
    sizes.insert(sizes.end(), hidden_layers.begin(), hidden_layers.end());
    sizes.push_back(output_width);
    return sizes;
}

nlohmann::json ModelRecord::to_json() const {
    nlohmann::json j = extra;
    j["name"] = name;
    j["hidden layers"] = hidden_layers;
    j["capacity rank"] = capacity_rank;
    j["overfit prone"] = overfit_prone;
    j["note"] = note;
    return j;
}

const DatasetRecord* Registry::find_dataset(const std::string& name) const {
    for (const auto& d : datasets)
        if (d.name == name) return &d;
    return nullptr;
}

const ModelRecord* Registry::find_model(const std::string& name) const {
    for (const auto& m : models)
        if (m.name == name) return &m;
    return nullptr;
}

Registry load_registry(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("registry file '" + path.string() + "' does not exist");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("registry '" + path.string() + "' does not parse: " + e.what());
    }

    nlohmann::json rows;
    bool models = false;
    if (j.is_array()) {
        rows = j;
        models = !rows.empty() && rows.front().contains("hidden layers");
    } else if (j.is_object()) {
        const int version = j.value("format_version", kRegistryFormatVersion);
        if (version != kRegistryFormatVersion)
            throw FormatError("registry '" + path.string() + "' has unsupported format_version " +
                              std::to_string(version));
        if (j.contains("datasets")) rows = j.at("datasets");
        else if (j.contains("models")) {
            rows = j.at("models");
            models = true;
        } else
            throw FormatError("registry '" + path.string() + "' has neither \"datasets\" nor \"models\"");
    } else {
        throw FormatError("registry '" + path.string() + "' must be a JSON object or array");
    }
    if (!rows.is_array()) throw FormatError("registry '" + path.string() + "' records must be an array");

    Registry reg;
    const auto base = path.parent_path();
    std::set<std::string> names;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].is_object()) throw FormatError("registry record " + std::to_string(i) + " is not an object");
        std::string name;
        if (models) {
            reg.models.push_back(parse_model(rows[i], i));
            name = reg.models.back().name;
        } else {
            reg.datasets.push_back(parse_dataset(rows[i], base, i));
            name = reg.datasets.back().name;
        }
        if (!names.insert(name).second) throw FormatError("registry has duplicate record name '" + name + "'");
    }
    return reg;
}

void save_dataset_registry(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : records) rows.push_back(r.to_json());
    write_json(path, {{"format_version", kRegistryFormatVersion}, {"datasets", rows}});
}

void save_model_registry(const std::filesystem::path& path, const std::vector<ModelRecord>& records) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : records) rows.push_back(r.to_json());
    write_json(path, {{"format_version", kRegistryFormatVersion}, {"models", rows}});
}

DatasetRecord describe_dataset(const data::Dataset& d, const std::string& relative_path,
                               const std::string& common_tasks) {
    DatasetRecord r;
    r.name = d.name;
    r.num_classes = d.num_classes;
    r.input_size = d.n_features();
    r.class_names = d.class_names;
    r.path = relative_path;
    r.common_tasks = common_tasks;
    r.attributes.push_back({d.task_label, d.num_classes});
    for (const auto& a : d.attributes) r.attributes.push_back({a.name, a.num_classes});
    r.extra["synthetic"] = true;
    r.extra["rows"] = d.size();
    return r;
}

std::uint64_t search_space_size(const std::vector<DatasetRecord>& datasets, const std::vector<ModelRecord>& models,
                                const std::vector<std::uint64_t>& parameter_choices) {
    constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
    std::uint64_t labels = 0;
    for (const auto& d : datasets) {
        if (labels > kMax - d.label_count()) throw PreconditionError("search space size overflows 64 bits");
        labels += d.label_count();
    }
    std::uint64_t params = 1;
    for (auto k : parameter_choices) {
        if (k == 0) throw PreconditionError("every parameter needs at least one candidate value");
        if (params > kMax / k) throw PreconditionError("search space size overflows 64 bits");
        params *= k;
    }
    const std::uint64_t m = models.size();
    if (m != 0 && labels > kMax / m) throw PreconditionError("search space size overflows 64 bits");
    const std::uint64_t lm = labels * m;
    if (params != 0 && lm > kMax / params) throw PreconditionError("search space size overflows 64 bits");
    return lm * params;
}

}  // namespace iaudit::registry
