#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "iaudit/errors.hpp"
#include "iaudit/registry.hpp"
#include "iaudit/service.hpp"

using nlohmann::json;
namespace fs = std::filesystem;
using namespace iaudit;

namespace {

const fs::path& root() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "iaudit_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

struct Result {
    int code = -1;
    std::string out;
};

Result run(const std::string& args) {
    const std::string cmd = std::string(IAUDIT_CLI) + " " + args + " 2>&1";
    Result r;
    FILE* p = ::popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    char buf[4096];
    while (std::fgets(buf, sizeof buf, p)) r.out += buf;
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string ws() { return (root() / "ws").string(); }

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

json read(const fs::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

const std::string& digits_fixture() {
    static const std::string dir = [] {
        const auto r = run("train-target --standard digits --workspace " + ws());
        REQUIRE_MESSAGE(r.code == 0, r.out);
        return (root() / "ws" / "fixtures" / "digits").string();
    }();
    return dir;
}

}  // namespace

TEST_CASE("usage errors exit 2") {
    CHECK(run("").code == 2);
    CHECK(run("assess --max-steps 0 --fixture x").code == 2);
    CHECK(run("no-such-command").code == 2);
    CHECK(run("--help").code == 0);
}

TEST_CASE("gen-data writes datasets and registry rows") {
    const auto spec = root() / "three_attrs.json";
    write(spec, R"({"name": "portraits", "n_samples": 400, "n_features": 8, "n_classes": 4,
                    "attributes": [{"name": "smiling"}, {"name": "young"}, {"name": "eyeglasses"}],
                    "common_tasks": "portrait classification"})");
    const auto r = run("gen-data --spec " + spec.string() + " --workspace " + ws());
    REQUIRE_MESSAGE(r.code == 0, r.out);
    const auto reg = registry::load_registry(root() / "ws" / "data" / "available_datasets.json");
    const auto* d = reg.find_dataset("portraits");
    REQUIRE(d != nullptr);
    REQUIRE(d->attributes.size() == 4);
    CHECK(d->attributes[1].name == "smiling");
    CHECK(d->attributes[3].num_classes == 2);
    CHECK(fs::exists(d->resolved_path));
    CHECK(read(root() / "ws" / "manifest.json")["datasets"][0]["id"] == "portraits");

    const auto dup = run("gen-data --spec " + spec.string() + " --workspace " + ws());
    CHECK(dup.code == 2);
    CHECK(dup.out.find("already registered") != std::string::npos);

    write(root() / "broken.json", "{\"name\": ");
    CHECK(run("gen-data --spec " + (root() / "broken.json").string() + " --workspace " + ws()).code == 3);
}

TEST_CASE("train-target, serve and a probe return posteriors") {
    const auto& fx = digits_fixture();
    const auto info_path = root() / "served.json";
    std::thread server([&] {
        run("serve --fixture " + fx + " --budget 5 --duration 4 --info-out " + info_path.string() + " --workspace " + ws());
    });
    for (int i = 0; i < 50 && !fs::exists(info_path); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    REQUIRE(fs::exists(info_path));
    const auto info = read(info_path);
    service::HttpClient client(info["predict_url"].get<std::string>());
    const auto post = client.predict(nn::Matrix::Zero(3, 20));
    CHECK(post.rows() == 3);
    CHECK(post.cols() == 10);
    CHECK(post.row(0).sum() == doctest::Approx(1.0));
    CHECK_THROWS_AS(client.predict(nn::Matrix::Zero(3, 20)), BudgetExhausted);
    server.join();
}

TEST_CASE("serving a corrupt artifact exits 3") {
    const auto broken = root() / "broken_fixture";
    fs::remove_all(broken);
    fs::copy(digits_fixture(), broken, fs::copy_options::recursive);
    write(broken / "service" / "model.bin", "not a model");
    const auto r = run("serve --fixture " + broken.string() + " --duration 1 --workspace " + ws());
    CHECK(r.code == 3);
}

TEST_CASE("assess with the mock planner completes and writes the report") {
    const auto r = run("assess --fixture " + digits_fixture() + " --workspace " + ws() + " --runs 2");
    REQUIRE_MESSAGE(r.code == 0, r.out);
    CHECK(r.out.find("completion rate: 1.000 over 2 runs") != std::string::npos);
    const auto manifest = read(root() / "ws" / "manifest.json");
    REQUIRE(manifest["runs"].size() >= 2);
    for (const auto& e : manifest["runs"]) CHECK(fs::exists(root() / "ws" / e["report"].get<std::string>()));
}

TEST_CASE("flags override the config file and the file fills the rest") {
    write(root() / "cfg.json", R"({"max_steps": 3, "seed": 7})");
    const auto limited = run("assess --fixture " + digits_fixture() + " --config " + (root() / "cfg.json").string() +
                             " --workspace " + ws());
    CHECK(limited.code == 1);
    CHECK(limited.out.find("-s7") != std::string::npos);
    CHECK(limited.out.find("step limit of 3") != std::string::npos);
    const auto overridden = run("assess --fixture " + digits_fixture() + " --config " + (root() / "cfg.json").string() +
                                " --max-steps 50 --workspace " + ws());
    CHECK(overridden.code == 0);
    CHECK(overridden.out.find("-s7") != std::string::npos);
}

TEST_CASE("an unreachable service exits 4") {
    json info{{"predict_url", "http://127.0.0.1:9/predict"},
              {"task_description", "t"},
              {"input_format", "20-dim"},
              {"output_format", "10 classes"},
              {"env_root", digits_fixture() + "/env"}};
    write(root() / "dead.json", info.dump());
    const auto r = run("assess --service " + (root() / "dead.json").string() + " --workspace " + ws());
    CHECK(r.code == 4);
    CHECK(r.out.find("unreachable") != std::string::npos);
}

TEST_CASE("bench aggregates one row per service and seed") {
    write(root() / "matrix.json", json{{"name", "small"},
                                       {"runs", 2},
                                       {"services", {{{"fixture", digits_fixture()}},
                                                     {{"fixture", digits_fixture()}, {"budget", 300}}}}}
                                      .dump());
    const auto r = run("bench --matrix " + (root() / "matrix.json").string() + " --workspace " + ws());
    // Agents share the budget, so attacks that find it spent fail and the run is incomplete.
    CHECK((r.code == 0 || r.code == 1));
    const auto rows = read(root() / "ws" / "bench" / "small" / "rows.json");
    REQUIRE(rows.size() == 4);
    int budgeted = 0;
    for (const auto& row : rows) {
        const auto& st = row["attacks"]["model_stealing"];
        if (row["budget"].is_null()) {
            CHECK(row["complete"] == true);
            CHECK(st["selection_strategy"] == "none");
        } else {
            ++budgeted;
            CHECK(st["selection_strategy"] == "importance");
            int total = 0;
            for (const auto& [name, a] : row["attacks"].items()) total += a.value("queries", 0);
            CHECK(total <= 300);
            if (row["complete"] == false) CHECK(r.code == 1);
        }
    }
    CHECK(budgeted == 2);
    const auto summary = read(root() / "ws" / "bench" / "small" / "summary.json");
    CHECK(summary["rows"] == 4);
    CHECK(summary["completion_by_service"]["digits"] == 1.0);
    CHECK(fs::exists(root() / "ws" / "bench" / "small" / "table.md"));

    write(root() / "empty.json", R"({"services": []})");
    CHECK(run("bench --matrix " + (root() / "empty.json").string() + " --workspace " + ws()).code == 2);
}

TEST_CASE("analyze reports per trace and rejects a missing directory") {
    const auto dir = root() / "clean_runs";
    fs::remove_all(dir);
    const auto a = run("assess --fixture " + digits_fixture() + " --workspace " + dir.string());
    REQUIRE_MESSAGE(a.code == 0, a.out);
    const auto r = run("analyze --traces " + dir.string() + " --workspace " + ws());
    REQUIRE_MESSAGE(r.code == 0, r.out);
    const auto manifest = read(root() / "ws" / "manifest.json");
    const auto findings = read(root() / "ws" / manifest["analyses"].back()["findings"].get<std::string>());
    REQUIRE(findings["findings"].size() == 1);
    for (const auto& [k, v] : findings["totals"].items()) CHECK_MESSAGE(v == 0, k);
    CHECK(run("analyze --traces " + (root() / "nope").string() + " --workspace " + ws()).code == 2);
}
