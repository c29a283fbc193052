#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "iaudit/data.hpp"
#include "iaudit/errors.hpp"
#include "iaudit/registry.hpp"

using namespace iaudit;
using namespace iaudit::data;

namespace {

DatasetSpec base_spec() {
    DatasetSpec s;
    s.name = "toy";
    s.n_samples = 1000;
    s.n_features = 12;
    s.n_classes = 3;
    s.attributes = {{"gender", 2, 0.9}, {"smiling", 2, 0.5}, {"glasses", 2, 0.0}};
    s.seed = 5;
    return s;
}

// Plug-in mutual information (nats) between two discrete columns.
double mutual_information(const std::vector<int>& a, const std::vector<int>& b) {
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> pa, pb;
    const double n = static_cast<double>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1.0 / n;
        pa[a[i]] += 1.0 / n;
        pb[b[i]] += 1.0 / n;
    }
    double mi = 0.0;
    for (const auto& [k, p] : joint) mi += p * std::log(p / (pa[k.first] * pb[k.second]));
    return mi;
}

double majority_rate(const std::vector<int>& labels, int classes) {
    std::vector<int> counts(static_cast<std::size_t>(classes), 0);
    for (int v : labels) ++counts[static_cast<std::size_t>(v)];
    return static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(labels.size());
}

double linear_probe_accuracy(const Dataset& train, const Dataset& test, const std::string& attr) {
    const std::vector<int> sizes{train.n_features(), train.label_classes(attr)};
    nn::Batch b{train.inputs, nn::ClassTargets{train.label_column(attr)}};
    nn::TrainConfig cfg;
    cfg.epochs = 60;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 64;
    cfg.seed = 1;
    const auto trained = nn::train(nn::init_model(sizes, 2), b, cfg);
    const auto labels = test.label_column(attr);
    return nn::evaluate(trained.model, test.inputs, labels);
}

}  // namespace

TEST_CASE("generator is deterministic and validates its spec") {
    const auto a = generate_synthetic_dataset(base_spec());
    const auto b = generate_synthetic_dataset(base_spec());
    CHECK(a.inputs == b.inputs);
    CHECK(a.labels == b.labels);
    CHECK(a.attributes[0].values == b.attributes[0].values);
    CHECK(a.size() == 1000);
    a.validate();

    auto bad = base_spec();
    bad.n_classes = 1;
    CHECK_THROWS_AS(generate_synthetic_dataset(bad), PreconditionError);
    bad = base_spec();
    bad.attributes[0].correlation = 1.5;
    CHECK_THROWS_AS(generate_synthetic_dataset(bad), PreconditionError);
    bad = base_spec();
    bad.attributes[1].num_classes = 1;
    CHECK_THROWS_AS(generate_synthetic_dataset(bad), PreconditionError);
    bad = base_spec();
    bad.noise_scale = 0.0;
    CHECK_THROWS_AS(generate_synthetic_dataset(bad), PreconditionError);
}

TEST_CASE("planted attribute strength follows correlation") {
    auto spec = base_spec();
    spec.n_samples = 2000;
    spec.attributes = {{"strong", 2, 1.0}, {"none", 2, 0.0}};
    spec.noise_scale = 1e-3;
    const auto d = generate_synthetic_dataset(spec);
    const std::vector<double> halves{0.5, 0.5};
    const auto parts = split_dataset(d, halves, 1);
    CHECK(linear_probe_accuracy(parts[0], parts[1], "strong") >= 0.99);

    spec.noise_scale = 1.0;
    const auto noisy = generate_synthetic_dataset(spec);
    const auto np = split_dataset(noisy, halves, 1);
    const double acc = linear_probe_accuracy(np[0], np[1], "none");
    CHECK(std::abs(acc - majority_rate(np[1].label_column("none"), 2)) <= 0.05);
}

TEST_CASE("mutual information between planted signal and label is monotone in correlation") {
    const std::vector<double> levels{0.0, 0.25, 0.5, 0.75, 1.0};
    std::vector<double> mean_mi;
    for (double c : levels) {
        double total = 0.0;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            auto spec = base_spec();
            spec.n_samples = 2000;
            spec.attributes = {{"a", 2, c}, {"b", 3, c}};
            spec.seed = 100 + seed;
            const auto d = generate_synthetic_dataset(spec);
            for (const auto& attr : d.attributes) total += mutual_information(attr.planted, attr.values);
        }
        mean_mi.push_back(total / 5.0);
    }
    for (std::size_t i = 1; i < mean_mi.size(); ++i) CHECK(mean_mi[i] >= mean_mi[i - 1]);
    CHECK(mean_mi.front() < 0.01);
}

TEST_CASE("split_dataset produces disjoint covering partitions") {
    const auto d = generate_synthetic_dataset(base_spec());
    const std::vector<double> halves{0.5, 0.5};
    const auto parts = split_dataset(d, halves, 42);
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].size() == 500);
    CHECK(parts[1].size() == 500);
    std::set<std::size_t> seen;
    for (const auto& p : parts)
        for (auto idx : p.source_index) CHECK(seen.insert(idx).second);
    CHECK(seen.size() == d.size());
    // Union re-indexes to the original rows exactly.
    for (const auto& p : parts)
        for (std::size_t i = 0; i < p.size(); ++i) {
            CHECK(p.inputs.row(static_cast<Eigen::Index>(i)) ==
                  d.inputs.row(static_cast<Eigen::Index>(p.source_index[i])));
            CHECK(p.labels[i] == d.labels[p.source_index[i]]);
        }
    CHECK(parts[0].provenance["splits"].size() == 1);

    const std::vector<double> three{0.2, 0.3, 0.5};
    const auto p3 = split_dataset(d, three, 1);
    CHECK(p3[0].size() + p3[1].size() + p3[2].size() == 1000);

    const std::vector<double> bad{0.7, 0.7};
    CHECK_THROWS_AS(split_dataset(d, bad, 1), PreconditionError);
}

TEST_CASE("combine_attributes uses mixed radix with the first attribute most significant") {
    const auto d = generate_synthetic_dataset(base_spec());
    const std::vector<std::string> three{"gender", "smiling", "glasses"};
    const auto combo = combine_attributes(d, three);
    CHECK(combo.num_classes == 8);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const int g = d.attributes[0].values[i], s = d.attributes[1].values[i], gl = d.attributes[2].values[i];
        CHECK(combo.labels[i] == g * 4 + s * 2 + gl);
    }
    // Brute-force decode over every code.
    for (int code = 0; code < 8; ++code) {
        const auto digits = combo.decode(code);
        CHECK(digits == std::vector<int>{code / 4, (code / 2) % 2, code % 2});
        CHECK(combo.encode(digits) == code);
    }
    const std::vector<std::string> one{"smiling"};
    CHECK(combine_attributes(d, one).labels == d.attributes[1].values);
    const std::vector<std::string> missing{"age"};
    CHECK_THROWS_AS(combine_attributes(d, missing), PreconditionError);
    CHECK(parse_label_list(" a, b ,c") == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("dataset files round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "iaudit_test_data";
    std::filesystem::create_directories(dir);
    const auto d = generate_synthetic_dataset(base_spec());
    save_dataset(dir / "d.bin", d);
    const auto back = load_dataset(dir / "d.bin");
    CHECK(back.inputs == d.inputs);
    CHECK(back.labels == d.labels);
    CHECK(back.source_index == d.source_index);
    CHECK(back.attributes[2].values == d.attributes[2].values);
    CHECK(back.task_label == d.task_label);
    std::filesystem::remove_all(dir);
}

TEST_CASE("registries load, validate and round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "iaudit_test_registry";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir / "datasets");
    std::vector<registry::DatasetRecord> records;
    for (int i = 0; i < 4; ++i) {
        auto spec = base_spec();
        spec.name = "set" + std::to_string(i);
        spec.n_samples = 50;
        spec.n_classes = 2 + i;
        spec.seed = static_cast<std::uint64_t>(i);
        const auto d = generate_synthetic_dataset(spec);
        save_dataset(dir / "datasets" / (spec.name + ".bin"), d);
        records.push_back(registry::describe_dataset(d, "datasets/" + spec.name + ".bin", "classification"));
    }
    records[0].extra["curator"] = "unit-test";
    registry::save_dataset_registry(dir / "available_datasets.json", records);
    const auto reg = registry::load_registry(dir / "available_datasets.json");
    REQUIRE(reg.datasets.size() == 4);
    CHECK(reg.datasets[0].extra["curator"] == "unit-test");
    for (std::size_t i = 0; i < 4; ++i) CHECK(reg.datasets[i].to_json() == records[i].to_json());
    CHECK(reg.datasets[1].num_classes == 3);
    CHECK(reg.datasets[1].label_count() == 4);

    {
        std::ofstream f(dir / "empty.json");
        f << "[]";
    }
    const auto empty = registry::load_registry(dir / "empty.json");
    CHECK(empty.datasets.empty());
    CHECK(empty.models.empty());

    auto broken = records[0].to_json();
    broken.erase("number of classes");
    {
        std::ofstream f(dir / "broken.json");
        f << nlohmann::json{{"format_version", 1}, {"datasets", {broken}}}.dump();
    }
    try {
        registry::load_registry(dir / "broken.json");
        FAIL("expected a validation error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("number of classes") != std::string::npos);
    }

    auto dangling = records[0].to_json();
    dangling["dataset path"] = "datasets/missing.bin";
    {
        std::ofstream f(dir / "dangling.json");
        f << nlohmann::json{{"datasets", {dangling}}}.dump();
    }
    CHECK_THROWS_AS(registry::load_registry(dir / "dangling.json"), FormatError);
    {
        std::ofstream f(dir / "garbage.json");
        f << "{not json";
    }
    CHECK_THROWS_AS(registry::load_registry(dir / "garbage.json"), FormatError);

    std::vector<registry::ModelRecord> models{{"small", {32}, 1, false, "", {}},
                                              {"large", {256, 256}, 3, true, "", {{"gpu", false}}}};
    registry::save_model_registry(dir / "available_models.json", models);
    const auto mreg = registry::load_registry(dir / "available_models.json");
    REQUIRE(mreg.models.size() == 2);
    CHECK(mreg.models[1].to_json() == models[1].to_json());
    CHECK(mreg.models[1].layer_sizes(12, 4) == std::vector<int>{12, 256, 256, 4});
    std::filesystem::remove_all(dir);
}

TEST_CASE("search space size") {
    auto ds = [](std::size_t labels) {
        registry::DatasetRecord r;
        for (std::size_t i = 0; i < labels; ++i) r.attributes.push_back({"l" + std::to_string(i), 2});
        return r;
    };
    std::vector<registry::ModelRecord> four(4);
    CHECK(registry::search_space_size({ds(3), ds(5)}, four, {3, 2}) == 192);
    std::vector<registry::ModelRecord> one(1);
    CHECK(registry::search_space_size({ds(1)}, one, {}) == 1);
    CHECK(registry::search_space_size({ds(3), ds(5)}, {}, {3, 2}) == 0);
    CHECK_THROWS_AS(registry::search_space_size({ds(1)}, one, {0}), PreconditionError);
}
