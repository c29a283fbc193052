#include "iaudit/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "iaudit/container.hpp"
#include "iaudit/errors.hpp"
#include "iaudit/random.hpp"

namespace iaudit::data {
namespace {

// Gram-Schmidt v against the given orthonormal basis; returns false if v collapses.
bool orthonormalize(Eigen::VectorXd& v, const std::vector<Eigen::VectorXd>& basis) {
    for (const auto& b : basis) v -= v.dot(b) * b;
    const double n = v.norm();
    if (n < 1e-8) return false;
    v /= n;
    return true;
}

Eigen::VectorXd random_unit(Rng& rng, int d) {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v(i) = rng.normal();
    return v / v.norm();
}

}  // namespace

void DatasetSpec::validate() const {
    if (name.empty()) throw PreconditionError("dataset spec needs a name");
    if (n_samples < 1) throw PreconditionError("n_samples must be >= 1");
    if (n_features < 1) throw PreconditionError("n_features must be >= 1");
    if (n_classes < 2) throw PreconditionError("n_classes must be >= 2");
    if (!class_names.empty() && class_names.size() != static_cast<std::size_t>(n_classes))
        throw PreconditionError("class_names must list exactly n_classes names");
    if (!(noise_scale > 0.0)) throw PreconditionError("noise_scale must be > 0");
    if (clusters_per_class < 1) throw PreconditionError("clusters_per_class must be >= 1");
    if (class_separation < 0.0 || attribute_strength < 0.0)
        throw PreconditionError("class_separation and attribute_strength must be >= 0");
    std::set<std::string> seen{task_label};
    for (const auto& a : attributes) {
        if (a.name.empty()) throw PreconditionError("attribute needs a name");
        if (!seen.insert(a.name).second) throw PreconditionError("duplicate label name '" + a.name + "'");
        if (a.num_classes < 2) throw PreconditionError("attribute '" + a.name + "' needs >= 2 classes");
        if (a.correlation < 0.0 || a.correlation > 1.0)
            throw PreconditionError("attribute '" + a.name + "' correlation must lie in [0,1]");
    }
}

nlohmann::json DatasetSpec::to_json() const {
    nlohmann::json attrs = nlohmann::json::array();
    for (const auto& a : attributes)
        attrs.push_back({{"name", a.name}, {"num_classes", a.num_classes}, {"correlation", a.correlation}});
    return {{"name", name},
            {"n_samples", n_samples},
            {"n_features", n_features},
            {"n_classes", n_classes},
            {"task_label", task_label},
            {"class_names", class_names},
            {"attributes", attrs},
            {"noise_scale", noise_scale},
            {"class_separation", class_separation},
            {"attribute_strength", attribute_strength},
            {"clusters_per_class", clusters_per_class},
            {"common_tasks", common_tasks},
            {"modality", modality},
            {"seed", seed}};
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
    DatasetSpec s;
    try {
        s.name = j.at("name").get<std::string>();
        s.n_samples = j.value("n_samples", s.n_samples);
        s.n_features = j.value("n_features", s.n_features);
        s.n_classes = j.value("n_classes", s.n_classes);
        s.task_label = j.value("task_label", s.task_label);
        s.class_names = j.value("class_names", s.class_names);
        for (const auto& a : j.value("attributes", nlohmann::json::array()))
            s.attributes.push_back(
                {a.at("name").get<std::string>(), a.value("num_classes", 2), a.value("correlation", 0.0)});
        s.noise_scale = j.value("noise_scale", s.noise_scale);
        s.class_separation = j.value("class_separation", s.class_separation);
        s.attribute_strength = j.value("attribute_strength", s.attribute_strength);
        s.clusters_per_class = j.value("clusters_per_class", s.clusters_per_class);
        s.common_tasks = j.value("common_tasks", s.common_tasks);
        s.modality = j.value("modality", s.modality);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad dataset spec: ") + e.what());
    }
    return s;
}

const Attribute* Dataset::find_attribute(const std::string& attr) const {
    for (const auto& a : attributes)
        if (a.name == attr) return &a;
    return nullptr;
}

bool Dataset::has_label(const std::string& label) const { return label == task_label || find_attribute(label); }

std::vector<int> Dataset::label_column(const std::string& label) const {
    if (label == task_label) return labels;
    if (const auto* a = find_attribute(label)) return a->values;
    throw PreconditionError("dataset '" + name + "' has no label named '" + label + "'");
}

int Dataset::label_classes(const std::string& label) const {
    if (label == task_label) return num_classes;
    if (const auto* a = find_attribute(label)) return a->num_classes;
    throw PreconditionError("dataset '" + name + "' has no label named '" + label + "'");
}

void Dataset::validate() const {
    const auto n = labels.size();
    if (static_cast<std::size_t>(inputs.rows()) != n) throw FormatError("dataset inputs/labels row mismatch");
    if (source_index.size() != n) throw FormatError("dataset lineage index size mismatch");
    for (int y : labels)
        if (y < 0 || y >= num_classes) throw FormatError("task label out of declared range");
    for (const auto& a : attributes) {
        if (a.values.size() != n) throw FormatError("attribute '" + a.name + "' size mismatch");
        for (int v : a.values)
            if (v < 0 || v >= a.num_classes) throw FormatError("attribute '" + a.name + "' value out of range");
    }
}

Dataset generate_synthetic_dataset(const DatasetSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const int d = spec.n_features;

    // means[c * clusters + k] is the centre of cluster k of class c.
    const int clusters = spec.clusters_per_class;
    std::vector<Eigen::VectorXd> means;
    for (int c = 0; c < spec.n_classes * clusters; ++c) {
        Eigen::VectorXd m(d);
        for (int i = 0; i < d; ++i) m(i) = spec.class_separation * rng.normal();
        means.push_back(m);
    }

    // Attribute directions, orthogonal to the class-mean span when there is room.
    std::vector<Eigen::VectorXd> basis;
    for (const auto& m : means) {
        Eigen::VectorXd v = m;
        if (orthonormalize(v, basis)) basis.push_back(v);
    }
    std::vector<std::vector<Eigen::VectorXd>> directions;
    for (const auto& a : spec.attributes) {
        std::vector<Eigen::VectorXd> dirs;
        const int needed = a.num_classes == 2 ? 1 : a.num_classes;
        for (int k = 0; k < needed; ++k) {
            Eigen::VectorXd v = random_unit(rng, d);
            if (orthonormalize(v, basis)) basis.push_back(v);
            else v = random_unit(rng, d);
            dirs.push_back(v);
        }
        if (a.num_classes == 2) dirs = {-dirs[0], dirs[0]};
        directions.push_back(std::move(dirs));
    }

    Dataset out;
    out.name = spec.name;
    out.num_classes = spec.n_classes;
    out.task_label = spec.task_label;
    out.class_names = spec.class_names;
    if (out.class_names.empty())
        for (int c = 0; c < spec.n_classes; ++c) out.class_names.push_back(spec.task_label + " " + std::to_string(c));
    out.inputs.resize(spec.n_samples, d);
    for (const auto& a : spec.attributes) out.attributes.push_back({a.name, a.num_classes, {}, {}});

    for (int i = 0; i < spec.n_samples; ++i) {
        const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_classes)));
        const int cluster = clusters > 1 ? static_cast<int>(rng.below(static_cast<std::uint64_t>(clusters))) : 0;
        Eigen::VectorXd x = means[static_cast<std::size_t>(y * clusters + cluster)];
        for (int k = 0; k < d; ++k) x(k) += spec.noise_scale * rng.normal();
        for (std::size_t a = 0; a < spec.attributes.size(); ++a) {
            const auto& as = spec.attributes[a];
            const int value = static_cast<int>(rng.below(static_cast<std::uint64_t>(as.num_classes)));
            // Planted class equals the label w.p. c, else uniform over all classes,
            // which gives agreement (1+c)/2 for binary attributes.
            const bool follow = rng.uniform() < as.correlation;
            const int random_class = static_cast<int>(rng.below(static_cast<std::uint64_t>(as.num_classes)));
            const int planted = follow ? value : random_class;
            x += spec.attribute_strength * directions[a][static_cast<std::size_t>(planted)];
            out.attributes[a].values.push_back(value);
            out.attributes[a].planted.push_back(planted);
        }
        out.inputs.row(i) = x.transpose();
        out.labels.push_back(y);
        out.source_index.push_back(static_cast<std::size_t>(i));
    }
    out.provenance = {{"spec", spec.to_json()}, {"splits", nlohmann::json::array()}};
    return out;
}

Dataset take_rows(const Dataset& d, std::span<const std::size_t> rows, const std::string& part_name) {
    Dataset out;
    out.name = part_name.empty() ? d.name : part_name;
    out.inputs = nn::select_rows(d.inputs, rows);
    out.num_classes = d.num_classes;
    out.task_label = d.task_label;
    out.class_names = d.class_names;
    out.provenance = d.provenance;
    for (auto r : rows) {
        out.labels.push_back(d.labels[r]);
        out.source_index.push_back(d.source_index[r]);
    }
    for (const auto& a : d.attributes) {
        Attribute na{a.name, a.num_classes, {}, {}};
        for (auto r : rows) {
            na.values.push_back(a.values[r]);
            if (!a.planted.empty()) na.planted.push_back(a.planted[r]);
        }
        out.attributes.push_back(std::move(na));
    }
    return out;
}

std::vector<Dataset> split_dataset(const Dataset& d, std::span<const double> fractions, std::uint64_t seed,
                                   std::span<const std::string> part_names) {
    if (fractions.empty()) throw PreconditionError("split needs at least one fraction");
    double total = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw PreconditionError("split fractions must be non-negative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw PreconditionError("split fractions must sum to 1");
    if (!part_names.empty() && part_names.size() != fractions.size())
        throw PreconditionError("one part name per fraction required");

    Rng rng(seed);
    const auto order = rng.permutation(d.size());
    std::vector<Dataset> parts;
    double cumulative = 0.0;
    std::size_t start = 0;
    for (std::size_t p = 0; p < fractions.size(); ++p) {
        cumulative += fractions[p];
        const std::size_t stop = p + 1 == fractions.size()
                                     ? d.size()
                                     : static_cast<std::size_t>(std::llround(cumulative * static_cast<double>(d.size())));
        const std::string name = part_names.empty() ? d.name + ".part" + std::to_string(p) : part_names[p];
        auto part = take_rows(d, std::span(order).subspan(start, stop - start), name);
        part.provenance["splits"].push_back({{"from", d.name},
                                             {"fractions", std::vector<double>(fractions.begin(), fractions.end())},
                                             {"seed", seed},
                                             {"part", p},
                                             {"name", name},
                                             {"rows", stop - start}});
        parts.push_back(std::move(part));
        start = stop;
    }
    return parts;
}

int CompositeLabel::encode(std::span<const int> digits) const {
    int code = 0;
    for (std::size_t i = 0; i < radices.size(); ++i) code = code * radices[i] + digits[i];
    return code;
}

std::vector<int> CompositeLabel::decode(int code) const {
    std::vector<int> digits(radices.size());
    for (std::size_t i = radices.size(); i-- > 0;) {
        digits[i] = code % radices[i];
        code /= radices[i];
    }
    return digits;
}

CompositeLabel combine_attributes(const Dataset& d, std::span<const std::string> names) {
    if (names.empty()) throw PreconditionError("combine_attributes needs at least one name");
    CompositeLabel out;
    std::vector<std::vector<int>> columns;
    for (const auto& n : names) {
        if (!d.has_label(n)) throw PreconditionError("dataset '" + d.name + "' has no attribute '" + n + "'");
        out.members.push_back(n);
        out.radices.push_back(d.label_classes(n));
        out.num_classes *= out.radices.back();
        columns.push_back(d.label_column(n));
    }
    out.labels.resize(d.size());
    std::vector<int> digits(names.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        for (std::size_t k = 0; k < names.size(); ++k) digits[k] = columns[k][i];
        out.labels[i] = out.encode(digits);
    }
    return out;
}

std::vector<std::string> parse_label_list(const std::string& text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto stop = text.find(',', start);
        if (stop == std::string::npos) stop = text.size();
        auto item = text.substr(start, stop - start);
        const auto b = item.find_first_not_of(" \t\n");
        const auto e = item.find_last_not_of(" \t\n");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
        start = stop + 1;
    }
    return out;
}

LabelColumn resolve_label(const Dataset& d, const std::string& label) {
    if (label.empty() || label == d.task_label) return {d.labels, d.num_classes};
    const auto names = parse_label_list(label);
    if (names.size() == 1) return {d.label_column(names[0]), d.label_classes(names[0])};
    auto combo = combine_attributes(d, names);
    return {std::move(combo.labels), combo.num_classes};
}

void save_dataset(const std::filesystem::path& path, const Dataset& d) {
    d.validate();
    Container c;
    c.kind = "dataset";
    nlohmann::json attrs = nlohmann::json::array();
    for (const auto& a : d.attributes) attrs.push_back({{"name", a.name}, {"num_classes", a.num_classes}});
    c.meta = {{"name", d.name},
              {"num_classes", d.num_classes},
              {"task_label", d.task_label},
              {"class_names", d.class_names},
              {"attributes", attrs},
              {"provenance", d.provenance}};
    c.add("inputs", d.inputs);
    c.add("labels", d.labels);
    std::vector<std::int64_t> src(d.source_index.begin(), d.source_index.end());
    c.add("source_index", src);
    for (const auto& a : d.attributes) c.add("attr." + a.name, a.values);
    write_container(path, c);
}

Dataset load_dataset(const std::filesystem::path& path) {
    const Container c = read_container(path);
    if (c.kind != "dataset") throw FormatError("'" + path.string() + "' holds a " + c.kind + ", not a dataset");
    Dataset d;
    try {
        d.name = c.meta.at("name").get<std::string>();
        d.num_classes = c.meta.at("num_classes").get<int>();
        d.task_label = c.meta.value("task_label", std::string("class"));
        d.class_names = c.meta.value("class_names", std::vector<std::string>{});
        d.provenance = c.meta.value("provenance", nlohmann::json::object());
        d.inputs = c.matrix("inputs");
        d.labels = c.ints("labels");
        for (auto v : c.ints("source_index")) d.source_index.push_back(static_cast<std::size_t>(v));
        for (const auto& a : c.meta.at("attributes")) {
            Attribute attr;
            attr.name = a.at("name").get<std::string>();
            attr.num_classes = a.at("num_classes").get<int>();
            attr.values = c.ints("attr." + attr.name);
            d.attributes.push_back(std::move(attr));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("dataset metadata incomplete in '" + path.string() + "': " + e.what());
    }
    d.validate();
    return d;
}

}  // namespace iaudit::data
