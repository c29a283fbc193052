#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "iaudit/errors.hpp"
#include "iaudit/fixtures.hpp"
#include "iaudit/registry.hpp"
#include "iaudit/service.hpp"
#include "iaudit/tasks.hpp"

using namespace iaudit;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("iaudit_test_tasks_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fixtures::FixtureSpec quick_spec(std::uint64_t seed) {
    auto spec = fixtures::sensor_fixture(seed);
    spec.data.n_samples = 4000;
    spec.target_train_rows = 200;
    spec.member_rows = 100;
    spec.eval_rows = 400;
    spec.probe_rows = 50;
    spec.target_train.epochs = 60;
    spec.expose_embedding = true;
    return spec;
}

json training(int epochs, std::int64_t rows) {
    return {{"learning_rate", 0.001}, {"batch_size", 64}, {"epochs", epochs}, {"dataset_size", rows}};
}

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("built-in manifests declare their parameters") {
    const auto manifests = tasks::builtin_manifests();
    REQUIRE(manifests.size() == 4);
    std::set<std::string> names;
    for (const auto& m : manifests) {
        names.insert(m.task);
        CHECK_NOTHROW(m.validate());
        for (const char* p : {"shadow_dataset_path", "learning_rate", "batch_size", "epochs", "dataset_size"}) {
            REQUIRE(m.find(p) != nullptr);
            CHECK(m.find(p)->required);
        }
        CHECK(tasks::TaskManifest::from_json(m.to_json()).to_json() == m.to_json());
        CHECK(m.describe().find("learning_rate") != std::string::npos);
    }
    CHECK(names == std::set<std::string>{"membership_inference", "model_stealing", "data_reconstruction",
                                         "attribute_inference"});
    const auto& mia = tasks::task_manifest("membership_inference");
    REQUIRE(mia.find("label"));
    CHECK_FALSE(mia.find("label")->required);
    CHECK(mia.find("model")->required);
    CHECK(tasks::task_manifest("model_stealing").find("selection_strategy")->default_value == "none");
    CHECK(tasks::task_manifest("attribute_inference").find("model") == nullptr);
    CHECK_THROWS_AS(tasks::task_manifest("backdoor"), PreconditionError);

    // Three enumerable training choices, three candidates each.
    const auto k = tasks::candidate_counts(mia);
    CHECK(k == std::vector<std::uint64_t>{3, 3, 3, 3});
    const registry::DatasetRecord d{"d", 4, 16, {}, "", {}, "", {{"task", 4}, {"a", 2}}, json::object()};
    CHECK(registry::search_space_size({d}, fixtures::standard_models(), k) == 2 * 3 * 81);
}

TEST_CASE("task registry round trips and rejects malformed files") {
    const auto dir = scratch("registry");
    tasks::save_task_registry(dir / "t.json", tasks::builtin_manifests());
    const auto back = tasks::load_task_registry(dir / "t.json");
    REQUIRE(back.size() == 4);
    for (std::size_t i = 0; i < back.size(); ++i)
        CHECK(back[i].to_json() == tasks::builtin_manifests()[i].to_json());

    std::ofstream(dir / "bad.json") << "{\"tasks\": [{\"parameters\": []}]}";
    CHECK_THROWS_AS(tasks::load_task_registry(dir / "bad.json"), FormatError);
    std::ofstream(dir / "junk.json") << "not json";
    CHECK_THROWS_AS(tasks::load_task_registry(dir / "junk.json"), FormatError);
    CHECK_THROWS_AS(tasks::load_task_registry(dir / "missing.json"), FormatError);
}

TEST_CASE("parameter normalisation reports the first offending parameter") {
    const auto& m = tasks::task_manifest("membership_inference");
    json p{{"shadow_dataset_path", "datasets/x.bin"}, {"model", "small-mlp"}, {"batch_size", 64}, {"epochs", 50},
           {"dataset_size", 500}};
    CHECK(message_of([&] { tasks::normalize_parameters(m, p); }) == "missing required parameter: learning_rate");
    CHECK_THROWS_AS(tasks::normalize_parameters(m, p), tasks::ParameterError);

    p["learning_rate"] = "0.001";
    const auto n = tasks::normalize_parameters(m, p);
    CHECK(n["learning_rate"].get<double>() == 0.001);
    CHECK(n["label"] == "");

    auto q = p;
    q["momentum"] = 0.9;
    CHECK(message_of([&] { tasks::normalize_parameters(m, q); }).rfind("unknown parameter: momentum", 0) == 0);
    q = p;
    q["epochs"] = 2.5;
    CHECK(message_of([&] { tasks::normalize_parameters(m, q); }).rfind("invalid parameter epochs", 0) == 0);
    q = p;
    q["learning_rate"] = -1;
    CHECK_THROWS_AS(tasks::normalize_parameters(m, q), tasks::ParameterError);
    q = p;
    q["batch_size"] = "lots";
    CHECK_THROWS_AS(tasks::normalize_parameters(m, q), tasks::ParameterError);

    auto s = p;
    s.erase("label");
    s["selection_strategy"] = "greedy";
    CHECK(message_of([&] { tasks::normalize_parameters(tasks::task_manifest("model_stealing"), s); })
              .rfind("invalid parameter selection_strategy", 0) == 0);
    CHECK_THROWS_AS(tasks::normalize_parameters(m, json::array()), tasks::ParameterError);
}

TEST_CASE("fixture layout, shadow path rules and task execution") {
    const auto root = scratch("fixture");
    const auto spec = quick_spec(3);
    const auto fx = fixtures::build_fixture(spec, root);
    for (const char* f : {"available_datasets.json", "available_models.json", "available_tasks.json", "eval/members.bin",
                          "eval/nonmembers.bin", "eval/eval.bin", "eval/probe.bin"})
        CHECK(fs::exists(fx.env_root / f));
    CHECK(fs::exists(fx.model_path));
    CHECK(fx.train_accuracy > fx.holdout_accuracy);

    const auto loaded = fixtures::load_fixture(root);
    CHECK(loaded.num_classes == fx.num_classes);
    CHECK(loaded.spec.name == spec.name);
    const auto info = fx.service_info("http://127.0.0.1:1/predict", "http://127.0.0.1:1/embed");
    CHECK(info.class_count() == fx.num_classes);
    CHECK(info.input_size() == spec.data.n_features);

    const auto reg = registry::load_registry(fx.env_root / "available_datasets.json");
    CHECK(reg.datasets.size() == 3);
    const auto eval = tasks::load_eval_sets(fx.env_root);
    CHECK(eval.members.size() == static_cast<std::size_t>(spec.member_rows));
    CHECK(eval.nonmembers.size() == eval.members.size());

    const std::string pool = "datasets/" + spec.name + "-public.bin";
    CHECK(tasks::resolve_shadow_path(fx.env_root, pool) == fs::weakly_canonical(fx.env_root / pool));
    CHECK(message_of([&] { tasks::resolve_shadow_path(fx.env_root, "eval/members.bin"); })
              .rfind("evaluation data under eval/ cannot be used as shadow data", 0) == 0);
    CHECK_THROWS_AS(tasks::resolve_shadow_path(fx.env_root, "eval/members.bin"), PreconditionError);
    CHECK(message_of([&] { tasks::resolve_shadow_path(fx.env_root, "path/to/shadow_dataset"); })
              .find("file not found") != std::string::npos);
    CHECK_THROWS_AS(tasks::resolve_shadow_path(fx.env_root, "../service/model.bin"), tasks::ParameterError);

    auto model = nn::load_model(fx.model_path);
    service::TargetService svc(model, true, std::nullopt);
    service::LocalClient client(svc);
    const auto ws = root / "ws";
    tasks::TaskContext ctx{fx.env_root, ws, &client, 1, std::nullopt};

    json mia = training(40, 200);
    mia["shadow_dataset_path"] = pool;
    mia["model"] = "small-mlp";
    auto before = svc.ledger().used();
    const auto r = tasks::run_task("membership_inference", mia, ctx);
    CHECK(r.kind == attacks::AttackKind::membership_inference);
    CHECK(r.queries == svc.ledger().used() - before);
    for (const auto& [name, path] : r.artifacts) {
        CHECK(fs::path(path).is_relative());
        CHECK(fs::exists(ws / path));
    }

    auto bad = mia;
    bad["model"] = "huge-transformer";
    CHECK(message_of([&] { tasks::run_task("membership_inference", bad, ctx); }).rfind("invalid parameter model", 0) == 0);
    bad = mia;
    bad["label"] = "colour";
    CHECK_THROWS_AS(tasks::run_task("membership_inference", bad, ctx), tasks::ParameterError);
    bad = mia;
    bad["dataset_size"] = 1000000;
    CHECK(message_of([&] { tasks::run_task("membership_inference", bad, ctx); }).find("dataset_size") != std::string::npos);
    bad = mia;
    bad["shadow_dataset_path"] = "eval/eval.bin";
    CHECK_THROWS_AS(tasks::run_task("membership_inference", bad, ctx), PreconditionError);

    // A copy of the member rows placed among the public datasets must be refused.
    data::save_dataset(fx.env_root / "datasets/leak.bin", eval.members);
    bad = mia;
    bad["shadow_dataset_path"] = "datasets/leak.bin";
    bad["dataset_size"] = 50;
    CHECK(message_of([&] { tasks::run_task("membership_inference", bad, ctx); }).find("overlaps") != std::string::npos);

    json steal = training(10, 400);
    steal["shadow_dataset_path"] = pool;
    steal["model"] = "small-mlp";
    tasks::TaskContext limited = ctx;
    limited.query_allowance = 100;
    CHECK(message_of([&] { tasks::run_task("model_stealing", steal, limited); }).find("selection_strategy") !=
          std::string::npos);
    steal["selection_strategy"] = "importance";
    before = svc.ledger().used();
    const auto s = tasks::run_task("model_stealing", steal, limited);
    CHECK(s.queries == 100);
    CHECK(svc.ledger().used() - before == 100);

    json attr = training(10, 400);
    attr["shadow_dataset_path"] = pool;
    attr["attribute"] = "site";
    const auto a = tasks::run_task("attribute_inference", attr, ctx);
    REQUIRE(a.metric_value);

    service::TargetService blind(model, false, std::nullopt);
    service::LocalClient blind_client(blind);
    tasks::TaskContext blind_ctx{fx.env_root, ws, &blind_client, 1, std::nullopt};
    CHECK_THROWS_AS(tasks::run_task("attribute_inference", attr, blind_ctx), InfeasibleAttack);
    tasks::TaskContext no_api{fx.env_root, ws, nullptr, 1, std::nullopt};
    CHECK_THROWS_AS(tasks::run_task("data_reconstruction", steal, no_api), PreconditionError);
    fs::remove_all(root);
}

TEST_CASE("standard fixtures are well formed") {
    const auto specs = fixtures::standard_fixtures(0);
    REQUIRE(specs.size() == 4);
    int with_embedding = 0;
    for (const auto& s : specs) {
        CHECK_NOTHROW(s.validate());
        with_embedding += s.expose_embedding;
        if (s.expose_embedding) CHECK_FALSE(s.sensitive_attribute.empty());
    }
    CHECK(with_embedding == 2);
    const auto models = fixtures::standard_models();
    REQUIRE(models.size() == 3);
    CHECK(models[0].capacity_rank < models[1].capacity_rank);
    CHECK(models[1].capacity_rank < models[2].capacity_rank);
    CHECK(models[2].overfit_prone);

    auto bad = quick_spec(1);
    bad.member_rows = 500;
    CHECK_THROWS_AS(bad.validate(), PreconditionError);

    // Member and probe rows come from target training; nonmembers do not.
    const auto d = fixtures::make_fixture_data(quick_spec(2));
    const std::set<std::size_t> train_rows(d.target_train.source_index.begin(), d.target_train.source_index.end());
    auto rows_of = [](const data::Dataset& x) { return x.source_index; };
    for (auto r : rows_of(d.eval.members)) CHECK(train_rows.count(r));
    for (auto r : rows_of(d.eval.probe)) CHECK(train_rows.count(r));
    for (auto r : rows_of(d.eval.nonmembers)) CHECK_FALSE(train_rows.count(r));
    for (auto r : rows_of(d.eval.eval)) CHECK_FALSE(train_rows.count(r));
    for (auto r : rows_of(d.pool)) CHECK_FALSE(train_rows.count(r));
}
