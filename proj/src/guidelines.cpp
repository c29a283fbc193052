#include "iaudit/guidelines.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <map>
#include <set>

#include "iaudit/errors.hpp"

namespace iaudit::agent {

using nlohmann::json;

namespace {

std::set<std::string> content_words(const std::string& text) {
    static const std::set<std::string> stop = {"the", "and", "for", "from", "with", "into", "over", "that",
                                               "this", "are", "its", "per", "via", "has", "have", "task"};
    std::set<std::string> out;
    std::string w;
    auto flush = [&] {
        if (w.size() >= 3 && !stop.count(w)) out.insert(w);
        w.clear();
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            w += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        else
            flush();
    }
    flush();
    return out;
}

const LabelSummary* find_label(const DatasetSummary& d, const std::string& name) {
    for (const auto& l : d.labels)
        if (l.name == name) return &l;
    return nullptr;
}

// Subsets of the non-task labels, by size then index order.
template <class F>
void for_each_combination(const DatasetSummary& d, std::size_t max_size, F&& f) {
    const std::size_t n = d.labels.size() > 0 ? d.labels.size() - 1 : 0;
    for (std::size_t k = 2; k <= std::min(n, max_size); ++k) {
        std::vector<std::size_t> idx(k);
        for (std::size_t i = 0; i < k; ++i) idx[i] = i;
        while (true) {
            std::vector<std::string> names;
            for (auto i : idx) names.push_back(d.labels[i + 1].name);
            if (f(names)) return;
            std::size_t pos = k;
            while (pos > 0 && idx[pos - 1] == n - k + pos - 1) --pos;
            if (pos == 0) break;
            ++idx[pos - 1];
            for (std::size_t i = pos; i < k; ++i) idx[i] = idx[i - 1] + 1;
        }
    }
}

}  // namespace

DatasetSummary DatasetSummary::from_record(const registry::DatasetRecord& r) {
    DatasetSummary s;
    s.name = r.name;
    s.path = r.path;
    s.rows = r.extra.value("rows", std::int64_t{0});
    s.input_size = r.input_size;
    s.num_classes = r.num_classes;
    s.common_tasks = r.common_tasks;
    for (const auto& a : r.attributes) s.labels.push_back({a.name, a.num_classes});
    return s;
}

json DatasetSummary::to_json() const {
    json labels_j = json::array();
    for (const auto& l : labels) labels_j.push_back({{"name", l.name}, {"classes", l.classes}});
    return {{"name", name},         {"path", path},         {"rows", rows},
            {"input_size", input_size}, {"num_classes", num_classes}, {"common_tasks", common_tasks},
            {"labels", labels_j}};
}

DatasetSummary DatasetSummary::from_json(const json& j) {
    DatasetSummary s;
    s.name = j.at("name").get<std::string>();
    s.path = j.value("path", "");
    s.rows = j.value("rows", std::int64_t{0});
    s.input_size = j.value("input_size", 0);
    s.num_classes = j.value("num_classes", 0);
    s.common_tasks = j.value("common_tasks", "");
    for (const auto& l : j.value("labels", json::array()))
        s.labels.push_back({l.at("name").get<std::string>(), l.at("classes").get<int>()});
    return s;
}

std::string DatasetSummary::describe() const {
    std::string out = name + ": path " + path + ", " + std::to_string(rows) + " rows, " + std::to_string(input_size) +
                      " input features, " + std::to_string(num_classes) + " classes; labels";
    for (std::size_t i = 0; i < labels.size(); ++i)
        out += (i ? ", " : " ") + labels[i].name + " (" + std::to_string(labels[i].classes) + ")";
    return out + "; common tasks: " + common_tasks;
}

ModelSummary ModelSummary::from_record(const registry::ModelRecord& r) {
    return {r.name, r.hidden_layers, r.capacity_rank, r.overfit_prone, r.note};
}

json ModelSummary::to_json() const {
    return {{"name", name},
            {"hidden_layers", hidden_layers},
            {"capacity_rank", capacity_rank},
            {"overfit_prone", overfit_prone},
            {"note", note}};
}

ModelSummary ModelSummary::from_json(const json& j) {
    return {j.at("name").get<std::string>(), j.value("hidden_layers", std::vector<int>{}), j.value("capacity_rank", 0),
            j.value("overfit_prone", false), j.value("note", "")};
}

std::string ModelSummary::describe() const {
    std::string layers;
    for (std::size_t i = 0; i < hidden_layers.size(); ++i) layers += (i ? "x" : "") + std::to_string(hidden_layers[i]);
    return name + ": hidden layers " + (layers.empty() ? "none" : layers) + ", capacity rank " +
           std::to_string(capacity_rank) + (overfit_prone ? ", prone to overfitting" : "") +
           (note.empty() ? "" : "; " + note);
}

json ShadowQuery::to_json() const {
    json j{{"task_description", task_description}, {"attribute", attribute}};
    j["classes"] = classes ? json(*classes) : json(nullptr);
    j["input_size"] = input_size ? json(*input_size) : json(nullptr);
    return j;
}

ShadowQuery ShadowQuery::from_json(const json& j) {
    ShadowQuery q;
    q.task_description = j.value("task_description", "");
    q.attribute = j.value("attribute", "");
    if (j.contains("classes") && !j["classes"].is_null()) q.classes = j["classes"].get<int>();
    if (j.contains("input_size") && !j["input_size"].is_null()) q.input_size = j["input_size"].get<int>();
    return q;
}

int class_product(const DatasetSummary& d, const std::vector<std::string>& names) {
    long long p = 1;
    for (const auto& n : names) {
        const auto* l = find_label(d, n);
        if (!l) throw PreconditionError("dataset '" + d.name + "' has no label '" + n + "'");
        p *= l->classes;
        if (p > 1'000'000) return 1'000'000;
    }
    return static_cast<int>(p);
}

std::vector<ScoredDataset> score_shadow_datasets(const std::vector<DatasetSummary>& candidates, const ShadowQuery& q) {
    const auto task_words = content_words(q.task_description);
    std::vector<ScoredDataset> out;
    for (const auto& d : candidates) {
        ScoredDataset s;
        s.name = d.name;
        s.eligible = !q.input_size || d.input_size == *q.input_size;
        s.has_attribute = !q.attribute.empty() && find_label(d, q.attribute) != nullptr;
        if (q.classes) {
            for (const auto& l : d.labels) s.class_match = s.class_match || l.classes == *q.classes;
            if (!s.class_match)
                for_each_combination(d, 4, [&](const std::vector<std::string>& names) {
                    s.class_match = class_product(d, names) == *q.classes;
                    return s.class_match;
                });
        }
        std::string text = d.name + " " + d.common_tasks;
        for (const auto& l : d.labels) text += " " + l.name;
        const auto words = content_words(text);
        for (const auto& w : task_words) s.overlap += static_cast<int>(words.count(w));
        s.overlap = std::min(s.overlap, 9);
        s.score = (s.has_attribute ? 100.0 : 0.0) + (s.class_match ? 10.0 : 0.0) + s.overlap;
        out.push_back(s);
    }
    return out;
}

std::string choose_shadow_dataset_rule(const std::vector<DatasetSummary>& candidates, const ShadowQuery& q) {
    if (candidates.empty()) throw PreconditionError("the dataset registry is empty");
    const auto scored = score_shadow_datasets(candidates, q);
    if (!q.attribute.empty() &&
        std::none_of(scored.begin(), scored.end(), [](const auto& s) { return s.eligible && s.has_attribute; }))
        throw InfeasibleAttack("no compatible dataset carries the attribute '" + q.attribute + "'");
    const ScoredDataset* best = nullptr;
    for (const auto& s : scored)
        if (s.eligible && (!best || s.score > best->score)) best = &s;
    if (!best) throw PreconditionError("no dataset matches the target input size");
    return best->name;
}

std::string AttributeChoice::text() const {
    std::string out;
    for (std::size_t i = 0; i < names.size(); ++i) out += (i ? ", " : "") + names[i];
    return out;
}

AttributeChoice choose_attribute_rule(const DatasetSummary& d, int target_classes) {
    if (d.labels.empty()) throw PreconditionError("dataset '" + d.name + "' has no labels");
    if (target_classes < 2) throw PreconditionError("target class count must be at least 2");
    for (const auto& l : d.labels)
        if (l.classes == target_classes) return {{l.name}, l.classes, true};

    AttributeChoice combo;
    for_each_combination(d, 4, [&](const std::vector<std::string>& names) {
        if (class_product(d, names) != target_classes) return false;
        combo = {names, target_classes, true};
        return true;
    });
    if (combo.exact) return combo;

    AttributeChoice closest{{d.labels.front().name}, d.labels.front().classes, false};
    auto consider = [&](const std::vector<std::string>& names) {
        const int p = class_product(d, names);
        if (std::abs(p - target_classes) < std::abs(closest.classes - target_classes)) closest = {names, p, false};
        return false;
    };
    for (const auto& l : d.labels) consider({l.name});
    for_each_combination(d, 4, consider);
    return closest;
}

std::string choose_architecture_rule(const std::vector<ModelSummary>& models, attacks::AttackKind kind) {
    if (models.empty()) throw PreconditionError("the model registry is empty");
    std::vector<const ModelSummary*> sorted;
    for (const auto& m : models) sorted.push_back(&m);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto* a, const auto* b) { return a->capacity_rank < b->capacity_rank; });
    if (kind == attacks::AttackKind::model_stealing) {
        for (auto it = sorted.rbegin(); it != sorted.rend(); ++it)
            if (!(*it)->overfit_prone) return (*it)->name;
        return sorted.front()->name;
    }
    return sorted[(sorted.size() - 1) / 2]->name;
}

std::vector<ParameterValue> set_parameters_rule(const tasks::TaskManifest& manifest, attacks::AttackKind kind,
                                                std::int64_t dataset_rows, std::optional<std::int64_t> query_budget) {
    if (dataset_rows < 1) throw PreconditionError("dataset row count must be positive");
    using attacks::AttackKind;
    std::vector<ParameterValue> out;
    auto smallest_tier = [&]() -> std::int64_t {
        const auto* p = manifest.find("dataset_size");
        std::int64_t best = dataset_rows;
        if (p)
            for (const auto& c : p->candidates) best = std::min(best, c.get<std::int64_t>());
        return best;
    };
    for (const auto& p : manifest.parameters) {
        if (p.name == "learning_rate") {
            out.push_back({p.name, 0.001, "moderate Adam step size that converges within the epoch budget"});
        } else if (p.name == "batch_size") {
            out.push_back({p.name, 64, "small batches give enough updates on a few thousand rows"});
        } else if (p.name == "epochs") {
            if (kind == AttackKind::membership_inference)
                out.push_back({p.name, 300, "train the shadow model as long as a deployed model so it overfits like the target"});
            else
                out.push_back({p.name, 100, "long enough to fit the training signal without wasting time"});
        } else if (p.name == "dataset_size") {
            if (kind == AttackKind::membership_inference) {
                out.push_back({p.name, smallest_tier(),
                               "start with the smallest dataset tier: a small training set overfits and shows a "
                               "clear member/non-member gap"});
            } else if (kind == AttackKind::model_stealing && query_budget && *query_budget < dataset_rows) {
                out.push_back({p.name, dataset_rows,
                               "use every available row as a candidate pool; the query budget caps how many are sent"});
            } else {
                out.push_back({p.name, dataset_rows, "use every available row; more data improves the attack model"});
            }
        } else if (p.name == "selection_strategy") {
            const bool limited = query_budget && *query_budget < dataset_rows;
            out.push_back({p.name, limited ? "importance" : "none",
                           limited ? "the query budget is smaller than the dataset; query the most informative rows"
                                   : "the whole dataset fits the query budget"});
        }
    }
    return out;
}

const std::string& guideline(const std::string& tool) {
    static const std::map<std::string, std::string> text = {
        {"choose_shadow_dataset",
         "Choose exactly one dataset as shadow data. Prefer, in order: a dataset carrying the requested sensitive "
         "attribute; a dataset whose labels can reproduce the target's class count; a dataset for the same task or "
         "a closely related concept. The input format must match the target. Answer with 'Dataset: <name>'."},
        {"choose_attribute",
         "Choose the label of the shadow dataset used as the shadow model's target. Prefer a label with the same "
         "number of classes as the target output. If none exists, combine several attribute labels whose class "
         "counts multiply to the target class count; list them comma separated. Answer with 'Attribute: <names>'."},
        {"choose_architecture",
         "Choose one architecture. For model stealing a more powerful architecture helps, but avoid one flagged as "
         "prone to overfitting. For shadow models choose a mid-sized architecture that can mimic the target. Answer "
         "with 'Architecture: <name>'."},
        {"set_parameters",
         "Set learning_rate, batch_size, epochs and dataset_size, plus any other listed parameter. For membership "
         "inference shadow training start from a small dataset size, since a small training set overfits and makes "
         "members easier to distinguish, and train for many epochs. For model stealing use many epochs and as much "
         "data as the query budget allows; when the budget is smaller than the dataset, select rows by importance. "
         "Answer one parameter per line as 'name = value | reason'."},
    };
    const auto it = text.find(tool);
    if (it == text.end()) throw PreconditionError("no guideline for '" + tool + "'");
    return it->second;
}

}  // namespace iaudit::agent
