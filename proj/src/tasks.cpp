#include "iaudit/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "iaudit/random.hpp"
#include "iaudit/registry.hpp"

namespace iaudit::tasks {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ParameterSpec param(std::string name, ParamType type, std::string purpose, std::vector<json> candidates = {}) {
    return ParameterSpec{std::move(name), type, std::move(purpose), true, nullptr, std::move(candidates)};
}

ParameterSpec optional_param(std::string name, ParamType type, std::string purpose, json default_value,
                             std::vector<json> candidates = {}) {
    return ParameterSpec{std::move(name), type, std::move(purpose), false, std::move(default_value),
                         std::move(candidates)};
}

std::vector<ParameterSpec> training_params(const std::string& what) {
    return {param("learning_rate", ParamType::real, "learning rate for training the " + what, {0.01, 0.001, 0.0001}),
            param("batch_size", ParamType::integer, "mini-batch size for training the " + what, {32, 64, 128}),
            param("epochs", ParamType::integer, "number of training epochs for the " + what, {50, 100, 300}),
            param("dataset_size", ParamType::integer,
                  "number of rows drawn from the shadow dataset (at most its size)", {500, 1000, 2000})};
}

std::vector<TaskManifest> make_manifests() {
    std::vector<TaskManifest> out;
    {
        TaskManifest m{"membership_inference", "membership_inference",
                       "Infer whether given samples were part of the target model's training data, using a shadow "
                       "model plus neural and metric based attacks.",
                       {}};
        m.parameters = {param("shadow_dataset_path", ParamType::path,
                              "dataset file for training the shadow model; same task and class count as the target"),
                        param("model", ParamType::model, "shadow model architecture from available_models.json"),
                        optional_param("label", ParamType::label,
                                       "label the shadow model predicts; comma separated attributes are combined into "
                                       "one label; empty means the dataset's task label",
                                       "")};
        for (auto& p : training_params("shadow model")) m.parameters.push_back(std::move(p));
        out.push_back(std::move(m));
    }
    {
        TaskManifest m{"model_stealing", "model_stealing",
                       "Train a surrogate model that replicates the target service from its posteriors on shadow "
                       "inputs.",
                       {}};
        m.parameters = {param("shadow_dataset_path", ParamType::path, "dataset file whose inputs are sent to the service"),
                        param("model", ParamType::model, "surrogate architecture from available_models.json")};
        for (auto& p : training_params("surrogate model")) m.parameters.push_back(std::move(p));
        m.parameters.push_back(optional_param("selection_strategy", ParamType::text,
                                              "how queried rows are chosen when the query budget is smaller than "
                                              "dataset_size",
                                              "none", {"none", "random", "importance"}));
        out.push_back(std::move(m));
    }
    {
        TaskManifest m{"data_reconstruction", "data_reconstruction",
                       "Learn an inversion model from service posteriors back to inputs and measure how well "
                       "training inputs are reconstructed.",
                       {}};
        m.parameters = {param("shadow_dataset_path", ParamType::path, "auxiliary dataset file for training the inversion model"),
                        param("model", ParamType::model, "inversion model architecture from available_models.json")};
        for (auto& p : training_params("inversion model")) m.parameters.push_back(std::move(p));
        out.push_back(std::move(m));
    }
    {
        TaskManifest m{"attribute_inference", "attribute_inference",
                       "Predict a sensitive attribute from the service's embeddings with a two-layer network.",
                       {}};
        m.parameters = {param("shadow_dataset_path", ParamType::path, "dataset file annotated with the sensitive attribute"),
                        param("attribute", ParamType::label, "name of the sensitive attribute to infer")};
        for (auto& p : training_params("attack model")) m.parameters.push_back(std::move(p));
        out.push_back(std::move(m));
    }
    return out;
}

std::string json_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

double as_real(const std::string& name, const json& v) {
    double x = 0;
    if (v.is_number()) {
        x = v.get<double>();
    } else if (v.is_string()) {
        try {
            std::size_t used = 0;
            x = std::stod(v.get<std::string>(), &used);
            if (used != v.get<std::string>().size()) throw std::invalid_argument("trailing text");
        } catch (const std::exception&) {
            throw ParameterError("invalid parameter " + name + ": expected a number, got " + v.dump());
        }
    } else {
        throw ParameterError("invalid parameter " + name + ": expected a number, got " + v.dump());
    }
    if (!std::isfinite(x) || x <= 0) throw ParameterError("invalid parameter " + name + ": must be positive");
    return x;
}

std::int64_t as_integer(const std::string& name, const json& v) {
    const double x = as_real(name, v);
    if (x != std::floor(x) || x > 1e12) throw ParameterError("invalid parameter " + name + ": expected a whole number");
    return static_cast<std::int64_t>(x);
}

bool same_origin(const data::Dataset& a, const data::Dataset& b) {
    return a.provenance.contains("spec") && b.provenance.contains("spec") && a.provenance["spec"] == b.provenance["spec"];
}

void require_disjoint(const data::Dataset& shadow, const data::Dataset& protected_rows, const std::string& what) {
    if (!same_origin(shadow, protected_rows)) return;
    const std::set<std::size_t> rows(protected_rows.source_index.begin(), protected_rows.source_index.end());
    for (auto r : shadow.source_index)
        if (rows.count(r)) throw PreconditionError("shadow dataset '" + shadow.name + "' overlaps the " + what);
}

data::Dataset subsample(const data::Dataset& d, std::int64_t n, std::uint64_t seed) {
    if (static_cast<std::size_t>(n) > d.size())
        throw ParameterError("invalid parameter dataset_size: " + std::to_string(n) + " exceeds the " +
                             std::to_string(d.size()) + " rows of '" + d.name + "'");
    if (static_cast<std::size_t>(n) == d.size()) return d;
    Rng rng(mix_seed(seed, 0x55));
    auto order = rng.permutation(d.size());
    order.resize(static_cast<std::size_t>(n));
    std::sort(order.begin(), order.end());
    return data::take_rows(d, order, d.name);
}

const registry::ModelRecord& find_model(const registry::Registry& reg, const std::string& name) {
    if (const auto* m = reg.find_model(name)) return *m;
    std::string names;
    for (const auto& m : reg.models) names += (names.empty() ? "" : ", ") + m.name;
    throw ParameterError("invalid parameter model: unknown architecture '" + name + "' (available: " + names + ")");
}

}  // namespace

const char* to_string(ParamType t) {
    switch (t) {
        case ParamType::path: return "path";
        case ParamType::model: return "model";
        case ParamType::label: return "label";
        case ParamType::real: return "real";
        case ParamType::integer: return "integer";
        case ParamType::text: return "text";
    }
    return "?";
}

ParamType param_type_from_string(const std::string& name) {
    for (auto t : {ParamType::path, ParamType::model, ParamType::label, ParamType::real, ParamType::integer, ParamType::text})
        if (name == to_string(t)) return t;
    throw FormatError("unknown parameter type '" + name + "'");
}

const ParameterSpec* TaskManifest::find(const std::string& name) const {
    for (const auto& p : parameters)
        if (p.name == name) return &p;
    return nullptr;
}

void TaskManifest::validate() const {
    if (task.empty()) throw FormatError("task manifest without a task name");
    std::set<std::string> seen;
    for (const auto& p : parameters) {
        if (!seen.insert(p.name).second) throw FormatError("task " + task + ": duplicate parameter '" + p.name + "'");
        if (p.required && !p.default_value.is_null())
            throw FormatError("task " + task + ": required parameter '" + p.name + "' has a default");
    }
}

json TaskManifest::to_json() const {
    json params = json::array();
    for (const auto& p : parameters) {
        json j{{"name", p.name}, {"type", to_string(p.type)}, {"purpose", p.purpose}, {"required", p.required}};
        if (!p.required) j["default"] = p.default_value;
        if (!p.candidates.empty()) j["candidates"] = p.candidates;
        params.push_back(std::move(j));
    }
    return {{"task", task}, {"script", script}, {"purpose", purpose}, {"parameters", params}};
}

TaskManifest TaskManifest::from_json(const json& j) {
    TaskManifest m;
    try {
        m.task = j.at("task").get<std::string>();
        m.script = j.value("script", m.task);
        m.purpose = j.value("purpose", std::string());
        for (const auto& pj : j.at("parameters")) {
            ParameterSpec p;
            p.name = pj.at("name").get<std::string>();
            p.type = param_type_from_string(pj.at("type").get<std::string>());
            p.purpose = pj.value("purpose", std::string());
            p.required = pj.value("required", true);
            if (pj.contains("default")) p.default_value = pj["default"];
            if (pj.contains("candidates")) p.candidates = pj["candidates"].get<std::vector<json>>();
            m.parameters.push_back(std::move(p));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed task manifest: ") + e.what());
    }
    m.validate();
    return m;
}

std::string TaskManifest::describe() const {
    std::ostringstream os;
    os << "Task " << task << ": " << purpose << "\n";
    for (const auto& p : parameters) {
        os << "- " << p.name << " (" << to_string(p.type) << (p.required ? ", required" : ", optional") << "): "
           << p.purpose;
        if (!p.required) os << "; default " << json_text(p.default_value);
        if (!p.candidates.empty()) {
            os << "; typical values";
            for (std::size_t i = 0; i < p.candidates.size(); ++i) os << (i ? ", " : " ") << json_text(p.candidates[i]);
        }
        os << "\n";
    }
    return os.str();
}

std::vector<TaskManifest> builtin_manifests() {
    static const auto manifests = make_manifests();
    return manifests;
}

const TaskManifest& task_manifest(const std::string& name) {
    static const auto manifests = make_manifests();
    for (const auto& m : manifests)
        if (m.task == name || m.script == name) return m;
    throw PreconditionError("unknown task '" + name + "'");
}

void save_task_registry(const fs::path& path, const std::vector<TaskManifest>& manifests) {
    json arr = json::array();
    for (const auto& m : manifests) arr.push_back(m.to_json());
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write task registry " + path.string());
    out << json{{"format_version", 1}, {"tasks", arr}}.dump(2) << "\n";
}

std::vector<TaskManifest> load_task_registry(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot read task registry " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("task registry " + path.string() + " is not valid JSON: " + e.what());
    }
    const json& arr = j.is_array() ? j : j.at("tasks");
    std::vector<TaskManifest> out;
    std::set<std::string> names;
    for (const auto& t : arr) {
        out.push_back(TaskManifest::from_json(t));
        if (!names.insert(out.back().task).second) throw FormatError("duplicate task '" + out.back().task + "'");
    }
    return out;
}

std::vector<std::uint64_t> candidate_counts(const TaskManifest& manifest) {
    std::vector<std::uint64_t> k;
    for (const auto& p : manifest.parameters)
        if (p.type != ParamType::path && p.type != ParamType::model && p.type != ParamType::label && p.k() > 0)
            k.push_back(p.k());
    return k;
}

json normalize_parameters(const TaskManifest& manifest, const json& params) {
    if (!params.is_object()) throw ParameterError("parameters must be a mapping of name to value");
    for (const auto& [key, value] : params.items()) {
        if (!manifest.find(key)) {
            std::string names;
            for (const auto& p : manifest.parameters) names += (names.empty() ? "" : ", ") + p.name;
            throw ParameterError("unknown parameter: " + key + " (" + manifest.task + " accepts " + names + ")");
        }
    }
    json out = json::object();
    for (const auto& p : manifest.parameters) {
        if (!params.contains(p.name) || params[p.name].is_null()) {
            if (p.required) throw ParameterError("missing required parameter: " + p.name);
            out[p.name] = p.default_value;
            continue;
        }
        const json& v = params[p.name];
        switch (p.type) {
            case ParamType::real: out[p.name] = as_real(p.name, v); break;
            case ParamType::integer: out[p.name] = as_integer(p.name, v); break;
            default:
                if (!v.is_string()) throw ParameterError("invalid parameter " + p.name + ": expected text, got " + v.dump());
                if (p.type == ParamType::text && !p.candidates.empty() &&
                    std::find(p.candidates.begin(), p.candidates.end(), v) == p.candidates.end())
                    throw ParameterError("invalid parameter " + p.name + ": '" + v.get<std::string>() + "' is not one of " +
                                         json(p.candidates).dump());
                if ((p.type == ParamType::path || p.type == ParamType::model) && v.get<std::string>().empty())
                    throw ParameterError("invalid parameter " + p.name + ": empty");
                out[p.name] = v;
        }
    }
    return out;
}

attacks::MemberSets EvalSets::member_sets() const {
    return {members.inputs, members.labels, nonmembers.inputs, nonmembers.labels};
}

EvalSets load_eval_sets(const fs::path& env_root) {
    const auto dir = env_root / "eval";
    return {data::load_dataset(dir / "members.bin"), data::load_dataset(dir / "nonmembers.bin"),
            data::load_dataset(dir / "eval.bin"), data::load_dataset(dir / "probe.bin")};
}

void save_eval_sets(const fs::path& env_root, const EvalSets& sets) {
    const auto dir = env_root / "eval";
    fs::create_directories(dir);
    data::save_dataset(dir / "members.bin", sets.members);
    data::save_dataset(dir / "nonmembers.bin", sets.nonmembers);
    data::save_dataset(dir / "eval.bin", sets.eval);
    data::save_dataset(dir / "probe.bin", sets.probe);
}

fs::path resolve_shadow_path(const fs::path& env_root, const std::string& relative) {
    const auto root = fs::weakly_canonical(env_root);
    const auto path = fs::weakly_canonical(root / relative);
    const auto rel = path.lexically_relative(root);
    if (rel.empty() || *rel.begin() == "..")
        throw ParameterError("invalid parameter shadow_dataset_path: '" + relative + "' is outside the environment");
    if (*rel.begin() == "eval")
        throw PreconditionError("evaluation data under eval/ cannot be used as shadow data: " + relative);
    if (!fs::is_regular_file(path)) throw ParameterError("invalid parameter shadow_dataset_path: file not found: " + relative);
    return path;
}

attacks::AttackResult run_task(const std::string& task, const json& params, const TaskContext& ctx) {
    const auto& manifest = task_manifest(task);
    const json p = normalize_parameters(manifest, params);
    if (!ctx.api) throw PreconditionError("no service connection for task " + manifest.task);
    if (ctx.query_allowance && *ctx.query_allowance < 1) throw PreconditionError("query allowance must be positive");

    const auto kind = attacks::attack_kind_from_string(manifest.task);
    const std::uint64_t seed = mix_seed(ctx.seed, static_cast<std::uint64_t>(kind) + 1);
    const auto shadow_path = resolve_shadow_path(ctx.env_root, p["shadow_dataset_path"].get<std::string>());
    const auto dataset = subsample(data::load_dataset(shadow_path), p["dataset_size"].get<std::int64_t>(), seed);
    const auto eval = load_eval_sets(ctx.env_root);
    require_disjoint(dataset, eval.members, "target's training data");
    require_disjoint(dataset, eval.probe, "target's training data");

    nn::TrainConfig cfg;
    cfg.learning_rate = p["learning_rate"].get<double>();
    cfg.batch_size = static_cast<int>(p["batch_size"].get<std::int64_t>());
    cfg.epochs = static_cast<int>(p["epochs"].get<std::int64_t>());
    cfg.seed = seed;

    const auto artifacts = ctx.workspace / "artifacts";
    fs::create_directories(artifacts);
    auto models = [&] { return registry::load_registry(ctx.env_root / "available_models.json"); };

    attacks::AttackResult result;
    switch (kind) {
        case attacks::AttackKind::membership_inference: {
            const auto reg = models();
            attacks::ShadowSpec spec{dataset, p["label"].get<std::string>(), find_model(reg, p["model"]), cfg};
            if (!spec.label.empty()) {
                for (const auto& name : data::parse_label_list(spec.label))
                    if (!dataset.has_label(name))
                        throw ParameterError("invalid parameter label: '" + name + "' is not a label of '" + dataset.name + "'");
            }
            result = attacks::run_membership_inference(spec, *ctx.api, eval.member_sets(), artifacts);
            break;
        }
        case attacks::AttackKind::model_stealing: {
            const auto reg = models();
            attacks::StealingSpec spec{dataset.inputs, find_model(reg, p["model"]), cfg,
                                       attacks::selection_from_string(p["selection_strategy"]), ctx.query_allowance};
            result = attacks::run_model_stealing(spec, *ctx.api, eval.eval, artifacts / "surrogate_model.bin");
            break;
        }
        case attacks::AttackKind::data_reconstruction: {
            const auto reg = models();
            attacks::ReconstructionSpec spec{dataset.inputs, find_model(reg, p["model"]), cfg};
            result = attacks::run_data_reconstruction(spec, *ctx.api, eval.probe.inputs, artifacts / "inversion_model.bin");
            break;
        }
        case attacks::AttackKind::attribute_inference: {
            attacks::AttributeSpec spec{dataset, p["attribute"].get<std::string>(), cfg};
            result = attacks::run_attribute_inference(spec, *ctx.api, eval.eval, artifacts / "attack_model.bin");
            break;
        }
    }
    for (auto& [name, path] : result.artifacts) path = fs::path(path).lexically_relative(ctx.workspace).generic_string();
    return result;
}

}  // namespace iaudit::tasks
