#include "iaudit/fixtures.hpp"

#include <fstream>

#include "iaudit/errors.hpp"
#include "iaudit/random.hpp"
#include "iaudit/service.hpp"

namespace iaudit::fixtures {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::size_t> range(const std::vector<std::size_t>& order, std::size_t from, std::size_t count) {
    return {order.begin() + static_cast<std::ptrdiff_t>(from), order.begin() + static_cast<std::ptrdiff_t>(from + count)};
}

// Replaces the task label by the combination of the named attributes.
void relabel(data::Dataset& d, const std::string& label) {
    const auto names = data::parse_label_list(label);
    const auto combo = data::combine_attributes(d, names);
    d.labels = combo.labels;
    d.num_classes = combo.num_classes;
    std::string joined;
    for (const auto& n : names) joined += (joined.empty() ? "" : ", ") + n;
    d.task_label = joined;
    d.class_names.clear();
    for (int c = 0; c < combo.num_classes; ++c) {
        const auto digits = combo.decode(c);
        std::string name;
        for (std::size_t i = 0; i < names.size(); ++i)
            name += (i ? " " : "") + names[i] + "=" + std::to_string(digits[i]);
        d.class_names.push_back(name);
    }
}

data::Dataset distractor(const std::string& name, int features, int classes, std::vector<data::AttributeSpec> attrs,
                         std::uint64_t seed) {
    data::DatasetSpec s;
    s.name = name;
    s.n_samples = 800;
    s.n_features = features;
    s.n_classes = classes;
    s.attributes = std::move(attrs);
    s.seed = seed;
    return data::generate_synthetic_dataset(s);
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

}  // namespace

void FixtureSpec::validate() const {
    if (name.empty()) throw PreconditionError("fixture needs a name");
    data.validate();
    const int half = data.n_samples / 2;
    if (target_train_rows < 2 || member_rows < 1 || eval_rows < 1 || probe_rows < 1)
        throw PreconditionError("fixture partition sizes must be positive");
    if (member_rows > target_train_rows || probe_rows > target_train_rows)
        throw PreconditionError("members and probe rows are drawn from the target training rows");
    if (target_train_rows + member_rows + eval_rows > half)
        throw PreconditionError("fixture '" + name + "' needs more samples for its partitions");
    if (pool_keep < 0.0 || pool_keep > 1.0) throw PreconditionError("pool_keep must lie in [0,1]");
    if (pool_dominant_class < 0 || pool_dominant_class >= data.n_classes)
        throw PreconditionError("pool_dominant_class out of range");
    if (expose_embedding && target_architecture.hidden_layers.empty())
        throw PreconditionError("an embedding endpoint needs a hidden layer");
    if (!sensitive_attribute.empty()) {
        bool found = false;
        for (const auto& a : data.attributes) found = found || a.name == sensitive_attribute;
        if (!found) throw PreconditionError("sensitive attribute '" + sensitive_attribute + "' is not generated");
    }
}

json FixtureSpec::to_json() const {
    json j{{"name", name},
           {"task_description", task_description},
           {"modality", modality},
           {"data", data.to_json()},
           {"target_label", target_label},
           {"target_train_rows", target_train_rows},
           {"target_architecture", target_architecture.to_json()},
           {"target_train", target_train.to_json()},
           {"expose_embedding", expose_embedding},
           {"sensitive_attribute", sensitive_attribute},
           {"member_rows", member_rows},
           {"eval_rows", eval_rows},
           {"probe_rows", probe_rows},
           {"pool_dominant_class", pool_dominant_class},
           {"pool_keep", pool_keep}};
    if (query_budget) j["query_budget"] = *query_budget;
    return j;
}

FixtureSpec FixtureSpec::from_json(const json& j) {
    FixtureSpec f;
    try {
        f.name = j.at("name").get<std::string>();
        f.task_description = j.value("task_description", f.task_description);
        f.modality = j.value("modality", f.modality);
        f.data = data::DatasetSpec::from_json(j.at("data"));
        f.target_label = j.value("target_label", f.target_label);
        f.target_train_rows = j.value("target_train_rows", f.target_train_rows);
        if (j.contains("target_architecture")) {
            const auto& a = j["target_architecture"];
            f.target_architecture.name = a.value("name", f.target_architecture.name);
            f.target_architecture.hidden_layers = a.value("hidden_layers", f.target_architecture.hidden_layers);
            f.target_architecture.capacity_rank = a.value("capacity_rank", f.target_architecture.capacity_rank);
            f.target_architecture.overfit_prone = a.value("overfit_prone", f.target_architecture.overfit_prone);
        }
        if (j.contains("target_train")) {
            const auto& t = j["target_train"];
            f.target_train.learning_rate = t.value("learning_rate", f.target_train.learning_rate);
            f.target_train.batch_size = t.value("batch_size", f.target_train.batch_size);
            f.target_train.epochs = t.value("epochs", f.target_train.epochs);
            if (t.contains("loss")) f.target_train.loss_kind = nn::loss_kind_from_string(t["loss"].get<std::string>());
        }
        f.expose_embedding = j.value("expose_embedding", f.expose_embedding);
        f.sensitive_attribute = j.value("sensitive_attribute", f.sensitive_attribute);
        f.member_rows = j.value("member_rows", f.member_rows);
        f.eval_rows = j.value("eval_rows", f.eval_rows);
        f.probe_rows = j.value("probe_rows", f.probe_rows);
        f.pool_dominant_class = j.value("pool_dominant_class", f.pool_dominant_class);
        f.pool_keep = j.value("pool_keep", f.pool_keep);
        if (j.contains("query_budget") && !j["query_budget"].is_null()) f.query_budget = j["query_budget"].get<std::int64_t>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed fixture spec: ") + e.what());
    }
    f.validate();
    return f;
}

FixtureData make_fixture_data(const FixtureSpec& spec) {
    spec.validate();
    const auto full = data::generate_synthetic_dataset(spec.data);
    const std::vector<double> halves{0.5, 0.5};
    const std::vector<std::string> names{"target_half", "public_half"};
    auto parts = data::split_dataset(full, halves, mix_seed(spec.data.seed, 0x48), names);
    auto& target_half = parts[0];
    if (!spec.target_label.empty() && spec.target_label != target_half.task_label) relabel(target_half, spec.target_label);

    Rng rng(mix_seed(spec.data.seed, 0x50));
    const auto order = rng.permutation(target_half.size());
    const auto n_train = static_cast<std::size_t>(spec.target_train_rows);
    const auto n_members = static_cast<std::size_t>(spec.member_rows);
    const auto n_eval = static_cast<std::size_t>(spec.eval_rows);
    const auto train_rows = range(order, 0, n_train);

    FixtureData out;
    out.target_train = data::take_rows(target_half, train_rows, "target_train");
    out.eval.members = data::take_rows(target_half, range(order, 0, n_members), "members");
    out.eval.probe = data::take_rows(target_half, range(order, n_train - static_cast<std::size_t>(spec.probe_rows),
                                                        static_cast<std::size_t>(spec.probe_rows)),
                                     "probe");
    out.eval.nonmembers = data::take_rows(target_half, range(order, n_train, n_members), "nonmembers");
    out.eval.eval = data::take_rows(target_half, range(order, n_train + n_members, n_eval), "eval");
    const std::size_t used = n_train + n_members + n_eval;
    out.target_holdout = data::take_rows(target_half, range(order, used, target_half.size() - used), "target_holdout");

    const auto& pub = parts[1];
    Rng keep(mix_seed(spec.data.seed, 0x4b));
    std::vector<std::size_t> pool_rows;
    for (std::size_t i = 0; i < pub.size(); ++i)
        if (pub.labels[i] == spec.pool_dominant_class || keep.uniform() < spec.pool_keep) pool_rows.push_back(i);
    out.pool = data::take_rows(pub, pool_rows, spec.name + "-public");
    return out;
}

std::vector<registry::ModelRecord> standard_models() {
    return {{"small-mlp", {32}, 1, false, "one hidden layer of 32 units", {}},
            {"medium-mlp", {128, 64}, 2, false, "two hidden layers, 128 and 64 units", {}},
            {"large-mlp", {256, 256, 128}, 3, true, "three wide hidden layers; prone to overfitting small data", {}}};
}

agent::TargetServiceInfo Fixture::service_info(const std::string& predict_url, const std::string& embedding_url) const {
    agent::TargetServiceInfo info;
    info.task_description = spec.task_description;
    info.predict_url = predict_url;
    if (spec.expose_embedding) info.embedding_url = embedding_url;
    info.input_format = std::to_string(spec.data.n_features) + "-dim real-valued " + spec.modality +
                        " features, sent as {\"inputs\": [[...], ...]}";
    info.output_format = "posterior probabilities over " + std::to_string(num_classes) + " classes, returned as "
                         "{\"posteriors\": [[...], ...]}";
    info.sensitive_attribute = spec.sensitive_attribute;
    info.query_budget = spec.query_budget;
    return info;
}

Fixture build_fixture(const FixtureSpec& spec, const fs::path& root) {
    const auto data = make_fixture_data(spec);
    Fixture fx;
    fx.spec = spec;
    fx.root = root;
    fx.env_root = root / "env";
    fx.model_path = root / "service" / "model.bin";
    fs::create_directories(fx.env_root / "datasets");
    fs::create_directories(root / "service");

    auto cfg = spec.target_train;
    cfg.seed = mix_seed(spec.data.seed, 0x54);
    const auto trained = service::train_target(data.target_train, spec.target_architecture, cfg, fx.model_path);
    fx.num_classes = data.target_train.num_classes;
    fx.train_accuracy = trained.train_accuracy;
    fx.holdout_accuracy = nn::evaluate(trained.model, data.target_holdout.inputs, data.target_holdout.labels);

    const std::string common = spec.task_description;
    std::vector<registry::DatasetRecord> records;
    const std::string pool_file = "datasets/" + data.pool.name + ".bin";
    data::save_dataset(fx.env_root / pool_file, data.pool);
    records.push_back(registry::describe_dataset(data.pool, pool_file, common));

    const int d = spec.data.n_features;
    std::vector<data::AttributeSpec> sensitive;
    if (!spec.sensitive_attribute.empty()) sensitive.push_back({spec.sensitive_attribute, 2, 0.5});
    const auto wide = distractor(spec.name + "-wide", d + 8, spec.data.n_classes, sensitive, mix_seed(spec.data.seed, 0x57));
    const auto coarse = distractor(spec.name + "-coarse", d, 3, {{"region", 3, 0.5}}, mix_seed(spec.data.seed, 0x43));
    for (const auto* x : {&wide, &coarse}) {
        const std::string file = "datasets/" + x->name + ".bin";
        data::save_dataset(fx.env_root / file, *x);
        records.push_back(registry::describe_dataset(*x, file, "generic " + spec.modality + " classification"));
    }
    registry::save_dataset_registry(fx.env_root / "available_datasets.json", records);
    registry::save_model_registry(fx.env_root / "available_models.json", standard_models());
    tasks::save_task_registry(fx.env_root / "available_tasks.json", tasks::builtin_manifests());
    tasks::save_eval_sets(fx.env_root, data.eval);

    json meta{{"name", spec.name},
              {"task_description", spec.task_description},
              {"modality", spec.modality},
              {"data", spec.data.to_json()},
              {"target_label", spec.target_label},
              {"expose_embedding", spec.expose_embedding},
              {"sensitive_attribute", spec.sensitive_attribute},
              {"num_classes", fx.num_classes},
              {"train_accuracy", fx.train_accuracy},
              {"holdout_accuracy", fx.holdout_accuracy},
              {"spec", spec.to_json()}};
    if (spec.query_budget) meta["query_budget"] = *spec.query_budget;
    write_json(root / "fixture.json", meta);
    return fx;
}

Fixture load_fixture(const fs::path& root) {
    std::ifstream in(root / "fixture.json");
    if (!in) throw FormatError("no fixture at " + root.string());
    json j;
    try {
        in >> j;
        Fixture fx;
        fx.root = root;
        fx.env_root = root / "env";
        fx.model_path = root / "service" / "model.bin";
        if (j.contains("spec")) fx.spec = FixtureSpec::from_json(j["spec"]);
        fx.spec.name = j.at("name").get<std::string>();
        fx.spec.task_description = j.at("task_description").get<std::string>();
        fx.spec.modality = j.at("modality").get<std::string>();
        fx.spec.data = data::DatasetSpec::from_json(j.at("data"));
        fx.spec.target_label = j.value("target_label", std::string());
        fx.spec.expose_embedding = j.at("expose_embedding").get<bool>();
        fx.spec.sensitive_attribute = j.value("sensitive_attribute", std::string());
        if (j.contains("query_budget")) fx.spec.query_budget = j["query_budget"].get<std::int64_t>();
        fx.num_classes = j.at("num_classes").get<int>();
        fx.train_accuracy = j.at("train_accuracy").get<double>();
        fx.holdout_accuracy = j.at("holdout_accuracy").get<double>();
        return fx;
    } catch (const json::exception& e) {
        throw FormatError("malformed fixture.json in " + root.string() + ": " + e.what());
    }
}

FixtureSpec sensor_fixture(std::uint64_t seed) {
    FixtureSpec f;
    f.name = "sensors";
    f.task_description = "Machine-state monitoring: classifies industrial sensor readings into 6 operating states.";
    f.modality = "sensor";
    f.data.name = "sensors";
    f.data.n_samples = 10000;
    f.data.n_features = 16;
    f.data.n_classes = 6;
    f.data.clusters_per_class = 2;
    f.data.noise_scale = 1.2;
    f.data.task_label = "state";
    f.data.attributes = {{"site", 2, 0.5}};
    f.data.attribute_strength = 1.5;
    f.data.seed = seed;
    return f;
}

std::vector<FixtureSpec> standard_fixtures(std::uint64_t seed) {
    std::vector<FixtureSpec> out;

    FixtureSpec faces;
    faces.name = "faces";
    faces.task_description =
        "Portrait attribute recognition: predicts the joint smiling, young and eyeglasses status of a face descriptor.";
    faces.modality = "image-embedding";
    faces.data.name = "faces";
    faces.data.n_samples = 10000;
    faces.data.n_features = 16;
    faces.data.n_classes = 4;
    faces.data.clusters_per_class = 2;
    faces.data.noise_scale = 1.2;
    faces.data.task_label = "identity_group";
    faces.data.attributes = {{"smiling", 2, 1.0}, {"young", 2, 1.0}, {"eyeglasses", 2, 1.0}, {"male", 2, 0.9}};
    faces.data.attribute_strength = 1.5;
    faces.data.seed = mix_seed(seed, 1);
    faces.target_label = "smiling, young, eyeglasses";
    faces.expose_embedding = true;
    faces.sensitive_attribute = "male";
    out.push_back(faces);

    FixtureSpec vehicles;
    vehicles.name = "vehicles";
    vehicles.task_description = "Vehicle type recognition from roadside camera descriptors, 6 vehicle types.";
    vehicles.modality = "image-embedding";
    vehicles.data.name = "vehicles";
    vehicles.data.n_samples = 10000;
    vehicles.data.n_features = 16;
    vehicles.data.n_classes = 6;
    vehicles.data.clusters_per_class = 2;
    vehicles.data.noise_scale = 1.2;
    vehicles.data.task_label = "vehicle_type";
    vehicles.data.attributes = {{"weather", 2, 0.0}};
    vehicles.data.attribute_strength = 1.5;
    vehicles.data.seed = mix_seed(seed, 2);
    vehicles.expose_embedding = true;
    vehicles.sensitive_attribute = "weather";
    out.push_back(vehicles);

    FixtureSpec digits;
    digits.name = "digits";
    digits.task_description = "Handwritten digit recognition over 10 digit classes from stroke descriptors.";
    digits.modality = "image-embedding";
    digits.data.name = "digits";
    digits.data.n_samples = 10000;
    digits.data.n_features = 20;
    digits.data.n_classes = 10;
    digits.data.noise_scale = 1.5;
    digits.data.task_label = "digit";
    digits.data.attributes = {{"writer_group", 2, 0.5}};
    digits.data.seed = mix_seed(seed, 3);
    out.push_back(digits);

    out.push_back(sensor_fixture(mix_seed(seed, 4)));
    return out;
}

}  // namespace iaudit::fixtures
