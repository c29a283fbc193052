// iaudit: operator entry points.
//
// Exit status:
//   0  success (assess/bench: every run complete)
//   1  a run finished incomplete
//   2  usage or precondition error
//   3  malformed input file or artifact
//   4  target service error or unreachable service
//   5  internal error

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "iaudit/data.hpp"
#include "iaudit/errors.hpp"
#include "iaudit/fixtures.hpp"
#include "iaudit/registry.hpp"
#include "iaudit/report.hpp"
#include "iaudit/runtime.hpp"
#include "iaudit/service.hpp"
#include "iaudit/trace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace iaudit;

namespace {

enum Exit : int { ok = 0, incomplete = 1, usage = 2, format = 3, service_failure = 4, internal = 5 };

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + " is not valid JSON: " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw PreconditionError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw PreconditionError("cannot write " + path.string());
    out << text;
}

void ensure_writable(const fs::path& workspace) {
    std::error_code ec;
    fs::create_directories(workspace, ec);
    const auto probe = workspace / ".write_probe";
    {
        std::ofstream out(probe);
        if (ec || !out) throw PreconditionError("workspace " + workspace.string() + " is not writable");
    }
    fs::remove(probe, ec);
}

std::string rel(const fs::path& p, const fs::path& workspace) {
    return fs::relative(p, workspace).generic_string();
}

std::string fixed(double v, int digits) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(digits) << v;
    return o.str();
}

// ---- run flags --------------------------------------------------------------

// Flags mirror the config file keys; a flag that was given wins.
struct RunFlags {
    std::string config;
    std::string planner;
    std::uint64_t seed = 0;
    int max_steps = 0;
    double runtime_limit = 0;
    std::int64_t budget = 0;
    std::string workspace = "workspace";
    std::string price_table;
    std::string run_id;

    CLI::Option* planner_opt = nullptr;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* steps_opt = nullptr;
    CLI::Option* limit_opt = nullptr;
    CLI::Option* budget_opt = nullptr;
    CLI::Option* workspace_opt = nullptr;
    CLI::Option* prices_opt = nullptr;
    CLI::Option* run_id_opt = nullptr;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "run config JSON (keys: planner, seed, max_steps, runtime_limit_s, budget, "
                                            "workspace, price_table, prices, poll_interval_steps, observation_limit)");
        planner_opt = app->add_option("--planner", planner, "mock, remote or faulty:<preset|script.json>");
        seed_opt = app->add_option("--seed", seed, "run seed");
        steps_opt = app->add_option("--max-steps", max_steps, "step limit per agent")->check(CLI::PositiveNumber);
        limit_opt = app->add_option("--runtime-limit", runtime_limit, "wall-clock limit per run, seconds")
                        ->check(CLI::PositiveNumber);
        budget_opt = app->add_option("--budget", budget, "query budget of the target service")->check(CLI::PositiveNumber);
        workspace_opt = app->add_option("--workspace", workspace, "output root");
        prices_opt = app->add_option("--price-table", price_table, "price table JSON");
        run_id_opt = app->add_option("--run-id", run_id, "run id (default: derived from service and seed)");
    }

    struct Resolved {
        agent::RunConfig config;
        std::optional<std::int64_t> budget;
    };

    Resolved resolve() const {
        json file = json::object();
        fs::path base = ".";
        if (!config.empty()) {
            file = read_json(config);
            if (!file.is_object()) throw FormatError("run config " + config + " must be a JSON object");
            base = fs::path(config).parent_path();
        }
        Resolved r;
        r.config = agent::RunConfig::from_json(file);
        try {
            if (file.contains("budget") && !file["budget"].is_null()) r.budget = file["budget"].get<std::int64_t>();
            if (file.contains("price_table"))
                r.config.prices = report::load_price_table(base / file["price_table"].get<std::string>());
        } catch (const json::exception& e) {
            throw FormatError("malformed run config: " + std::string(e.what()));
        }
        if (*planner_opt) r.config.planner = planner;
        if (*seed_opt) r.config.seed = seed;
        if (*steps_opt) r.config.max_steps = max_steps;
        if (*limit_opt) r.config.runtime_limit_s = runtime_limit;
        if (*budget_opt) r.budget = budget;
        if (*workspace_opt || !file.contains("workspace")) r.config.workspace = workspace;
        if (*prices_opt) r.config.prices = report::load_price_table(price_table);
        if (*run_id_opt) r.config.run_id = run_id;
        if (r.budget && *r.budget < 1) throw PreconditionError("budget must be positive");
        r.config.validate();
        ensure_writable(r.config.workspace);
        return r;
    }
};

// A fixture served in-process for the duration of a command.
struct LocalService {
    fixtures::Fixture fx;
    std::unique_ptr<service::ServiceHandle> handle;
    agent::TargetServiceInfo info;

    LocalService(const fs::path& dir, std::optional<std::int64_t> budget, int port) : fx(fixtures::load_fixture(dir)) {
        if (!budget) budget = fx.spec.query_budget;
        service::ServiceConfig sc;
        sc.model_path = fx.model_path;
        sc.expose_embedding = fx.spec.expose_embedding;
        sc.query_budget = budget;
        sc.port = port;
        handle = service::serve(sc);
        info = fx.service_info(handle->predict_url(), fx.spec.expose_embedding ? handle->embedding_url() : "");
        info.query_budget = budget;
    }
};

std::optional<fixtures::FixtureSpec> standard_spec(const std::string& name, std::uint64_t seed) {
    for (auto& s : fixtures::standard_fixtures(seed))
        if (s.name == name) return s;
    return std::nullopt;
}

std::string standard_names() {
    std::string out;
    for (const auto& s : fixtures::standard_fixtures(0)) out += (out.empty() ? "" : ", ") + s.name;
    return out;
}

bool unreachable(const agent::AssessmentOutcome& o) { return o.failure.rfind("target service unreachable", 0) == 0; }

std::string cost_text(const agent::AssessmentOutcome& o, const report::PriceTable& prices) {
    return report::cost_of_tokens(o.input_tokens, o.output_tokens, prices).rounded(3) + " " + prices.currency;
}

// ---- gen-data ---------------------------------------------------------------

struct GenDataArgs {
    std::string spec;
    std::string registry;
    std::string workspace = "workspace";
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

int cmd_gen_data(const GenDataArgs& a) {
    const fs::path ws = a.workspace;
    ensure_writable(ws);
    const auto j = read_json(a.spec);
    std::vector<json> specs = j.is_array() ? j.get<std::vector<json>>() : std::vector<json>{j};
    if (specs.empty()) throw PreconditionError("no dataset specs in " + a.spec);

    const fs::path registry_path = a.registry.empty() ? ws / "data" / "available_datasets.json" : fs::path(a.registry);
    std::vector<registry::DatasetRecord> records;
    if (fs::exists(registry_path)) records = registry::load_registry(registry_path).datasets;

    for (const auto& sj : specs) {
        auto s = data::DatasetSpec::from_json(sj);
        if (*a.seed_opt) s.seed = a.seed;
        for (const auto& r : records)
            if (r.name == s.name)
                throw PreconditionError("dataset '" + s.name + "' is already registered in " + registry_path.string());
        const auto d = data::generate_synthetic_dataset(s);
        const std::string file = "datasets/" + s.name + ".bin";
        const auto path = registry_path.parent_path() / file;
        fs::create_directories(path.parent_path());
        data::save_dataset(path, d);
        records.push_back(registry::describe_dataset(d, file, s.common_tasks));
        std::string labels;
        for (const auto& l : records.back().attributes)
            labels += (labels.empty() ? "" : ", ") + l.name + " (" + std::to_string(l.num_classes) + ")";
        std::cout << s.name << ": " << d.size() << " rows, " << d.n_features() << " features; labels: " << labels << "\n";
        agent::index_output(ws, "datasets",
                            {{"id", s.name}, {"path", rel(path, ws)}, {"registry", rel(registry_path, ws)}});
    }
    registry::save_dataset_registry(registry_path, records);
    std::cout << "registry: " << registry_path.string() << "\n";
    return ok;
}

// ---- train-target -----------------------------------------------------------

struct TrainArgs {
    std::string spec;
    std::string standard;
    std::string out;
    std::string workspace = "workspace";
    std::uint64_t seed = 0;
    bool list = false;
    CLI::Option* seed_opt = nullptr;
};

int cmd_train_target(const TrainArgs& a) {
    if (a.list) {
        for (const auto& s : fixtures::standard_fixtures(0))
            std::cout << s.name << ": " << s.task_description << (s.expose_embedding ? " [embedding]" : "") << "\n";
        return ok;
    }
    if (a.spec.empty() == a.standard.empty()) throw PreconditionError("give exactly one of --spec and --standard");
    fixtures::FixtureSpec spec;
    if (!a.standard.empty()) {
        auto s = standard_spec(a.standard, a.seed);
        if (!s) throw PreconditionError("unknown standard fixture '" + a.standard + "' (known: " + standard_names() + ")");
        spec = *s;
    } else {
        spec = fixtures::FixtureSpec::from_json(read_json(a.spec));
        if (*a.seed_opt) spec.data.seed = a.seed;
    }
    const fs::path ws = a.workspace;
    ensure_writable(ws);
    const fs::path root = a.out.empty() ? ws / "fixtures" / spec.name : fs::path(a.out);
    const auto fx = fixtures::build_fixture(spec, root);
    std::cout << "fixture " << spec.name << " at " << root.string() << "\n"
              << "classes: " << fx.num_classes << "  train accuracy: " << fixed(fx.train_accuracy, 4)
              << "  holdout accuracy: " << fixed(fx.holdout_accuracy, 4) << "\n"
              << "model: " << fx.model_path.string() << "\n"
              << "environment: " << fx.env_root.string() << "\n";
    agent::index_output(ws, "fixtures",
                        {{"id", spec.name}, {"dir", rel(root, ws)}, {"model", rel(fx.model_path, ws)},
                         {"env", rel(fx.env_root, ws)}});
    return ok;
}

// ---- serve ------------------------------------------------------------------

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

struct ServeArgs {
    std::string fixture;
    std::string host = "127.0.0.1";
    int port = 0;
    std::int64_t budget = 0;
    double duration = 0;
    std::string info_out;
    std::string workspace = "workspace";
    CLI::Option* budget_opt = nullptr;
};

int cmd_serve(const ServeArgs& a) {
    const auto fx = fixtures::load_fixture(a.fixture);
    const fs::path ws = a.workspace;
    ensure_writable(ws);
    service::ServiceConfig sc;
    sc.model_path = fx.model_path;
    sc.expose_embedding = fx.spec.expose_embedding;
    sc.query_budget = *a.budget_opt ? std::optional<std::int64_t>(a.budget) : fx.spec.query_budget;
    sc.host = a.host;
    sc.port = a.port;
    auto handle = service::serve(sc);

    auto info = fx.service_info(handle->predict_url(), fx.spec.expose_embedding ? handle->embedding_url() : "");
    info.query_budget = sc.query_budget;
    auto j = info.to_json();
    j["env_root"] = fs::absolute(fx.env_root).string();
    const fs::path info_path = a.info_out.empty() ? ws / "services" / (fx.spec.name + ".json") : fs::path(a.info_out);
    write_json(info_path, j);
    agent::index_output(ws, "services", {{"id", fx.spec.name}, {"info", rel(info_path, ws)}, {"url", handle->base_url()}});

    std::cout << "predict: " << handle->predict_url() << "\n";
    if (fx.spec.expose_embedding) std::cout << "embedding: " << handle->embedding_url() << "\n";
    if (sc.query_budget) std::cout << "query budget: " << *sc.query_budget << "\n";
    std::cout << "service info: " << info_path.string() << std::endl;

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    const auto start = std::chrono::steady_clock::now();
    while (!g_stop) {
        if (a.duration > 0 &&
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() >= a.duration)
            break;
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    std::cout << "queries admitted: " << handle->service().ledger().used() << std::endl;
    handle->stop();
    return ok;
}

// ---- assess -----------------------------------------------------------------

struct AssessArgs {
    RunFlags run;
    std::string service;
    std::string env;
    std::string fixture;
    int port = 0;
    int runs = 1;
};

int cmd_assess(const AssessArgs& a) {
    if (a.service.empty() == a.fixture.empty()) throw PreconditionError("give exactly one of --service and --fixture");
    auto [config, budget] = a.run.resolve();

    std::unique_ptr<LocalService> local;
    agent::TargetServiceInfo info;
    fs::path env;
    if (!a.fixture.empty()) {
        local = std::make_unique<LocalService>(a.fixture, budget, a.port);
        info = local->info;
        env = local->fx.env_root;
    } else {
        const auto j = read_json(a.service);
        info = agent::TargetServiceInfo::from_json(j);
        if (budget) info.query_budget = budget;
        if (!a.env.empty())
            env = a.env;
        else if (j.contains("env_root") && j["env_root"].is_string())
            env = j["env_root"].get<std::string>();
        else
            throw PreconditionError("no assessment environment: pass --env or add env_root to " + a.service);
    }

    int rc = ok;
    std::vector<std::vector<trace::TraceRecord>> traces;
    const auto base_seed = config.seed;
    const auto base_id = config.run_id;
    for (int r = 0; r < a.runs; ++r) {
        config.seed = base_seed + static_cast<std::uint64_t>(r);
        if (!base_id.empty() && a.runs > 1) config.run_id = base_id + "-r" + std::to_string(r);
        const auto out = agent::run_assessment(info, env, config);
        std::cout << out.run_id << "  " << (out.complete ? "complete" : "incomplete") << "  steps " << out.total_steps
                  << "  cost " << cost_text(out, config.prices) << "\n";
        if (!out.failure.empty()) std::cout << "  failure: " << out.failure << "\n";
        std::cout << "  report: " << out.report_path.string() << "\n  trace: " << out.trace_path.string() << "\n";
        traces.push_back(trace::read_trace(out.trace_path));
        if (unreachable(out))
            rc = service_failure;
        else if (!out.complete && rc == ok)
            rc = incomplete;
    }
    if (a.runs > 1) {
        const auto stats = report::completion_rate({{info.predict_url, traces}});
        std::cout << "completion rate: " << fixed(stats.overall, 3) << " over " << a.runs << " runs\n";
    }
    return rc;
}

// ---- bench ------------------------------------------------------------------

struct BenchService {
    std::string label;
    fs::path fixture_dir;
    std::optional<std::int64_t> budget;
};

struct BenchRow {
    std::string service;
    std::optional<std::int64_t> budget;
    std::uint64_t seed = 0;
    agent::AssessmentOutcome outcome;
};

json section_summary(const report::AttackSection& s) {
    json j{{"status", s.status}, {"steps", s.steps}};
    if (s.result) {
        j["metric"] = s.result->metric_name;
        j["value"] = s.result->metric_value ? json(*s.result->metric_value) : json(nullptr);
        j["sub_results"] = s.result->sub_results;
        j["queries"] = s.result->queries;
        j["risk"] = report::to_string(report::assess_risk(*s.result).level);
    }
    if (s.process.contains("parameters") && s.process["parameters"].contains("selection_strategy"))
        j["selection_strategy"] = s.process["parameters"]["selection_strategy"];
    if (!s.reason.empty()) j["reason"] = s.reason;
    return j;
}

std::string cell(const json& row, const char* attack, const char* sub = nullptr) {
    if (!row["attacks"].contains(attack)) return "-";
    const auto& a = row["attacks"][attack];
    if (a.value("status", "") != "completed") return "failed";
    if (sub) {
        if (!a.contains("sub_results") || !a["sub_results"].contains(sub)) return "-";
        return fixed(a["sub_results"][sub].get<double>(), 3);
    }
    return a.contains("value") && a["value"].is_number() ? fixed(a["value"].get<double>(), 3) : "-";
}

int cmd_bench(const std::string& matrix_path, const RunFlags& flags) {
    const auto m = read_json(matrix_path);
    if (!m.is_object()) throw FormatError("matrix " + matrix_path + " must be a JSON object");
    auto [config, budget_flag] = flags.resolve();
    const fs::path ws = config.workspace;
    const fs::path base = fs::path(matrix_path).parent_path();

    std::vector<std::uint64_t> seeds;
    std::vector<BenchService> services;
    std::string name;
    try {
        name = m.value("name", fs::path(matrix_path).stem().string());
        if (m.contains("seeds")) {
            seeds = m["seeds"].get<std::vector<std::uint64_t>>();
        } else {
            const int runs = m.value("runs", 5);
            for (int i = 0; i < runs; ++i) seeds.push_back(config.seed + static_cast<std::uint64_t>(i));
        }
        if (m.contains("planner") && !*flags.planner_opt) config.planner = m["planner"].get<std::string>();
        if (m.contains("max_steps") && !*flags.steps_opt) config.max_steps = m["max_steps"].get<int>();
        for (const auto& s : m.value("services", json::array())) {
            BenchService b;
            if (s.contains("budget") && !s["budget"].is_null()) b.budget = s["budget"].get<std::int64_t>();
            if (budget_flag) b.budget = budget_flag;
            if (s.contains("standard")) {
                const auto std_name = s["standard"].get<std::string>();
                b.fixture_dir = ws / "fixtures" / std_name;
                if (!fs::exists(b.fixture_dir / "fixture.json")) {
                    const auto spec = standard_spec(std_name, s.value("fixture_seed", std::uint64_t{0}));
                    if (!spec) throw PreconditionError("unknown standard fixture '" + std_name + "'");
                    fixtures::build_fixture(*spec, b.fixture_dir);
                }
                b.label = std_name;
            } else {
                b.fixture_dir = base / s.at("fixture").get<std::string>();
                b.label = b.fixture_dir.filename().string();
            }
            b.label = s.value("label", b.label + (b.budget ? "@" + std::to_string(*b.budget) : std::string()));
            services.push_back(std::move(b));
        }
    } catch (const json::exception& e) {
        throw FormatError("malformed matrix " + matrix_path + ": " + e.what());
    }
    if (services.empty() || seeds.empty()) throw PreconditionError("the matrix has no services or no runs");
    config.validate();

    // Distinct services run concurrently; runs against one service are sequential.
    std::vector<std::future<std::vector<BenchRow>>> jobs;
    for (const auto& svc : services) {
        jobs.push_back(std::async(std::launch::async, [svc, seeds, config] {
            std::vector<BenchRow> rows;
            for (const auto seed : seeds) {
                // A fresh ledger per run: the budget is per assessment.
                LocalService local(svc.fixture_dir, svc.budget, 0);
                auto cfg = config;
                cfg.seed = seed;
                cfg.run_id.clear();
                rows.push_back({svc.label, svc.budget, seed, agent::run_assessment(local.info, local.fx.env_root, cfg)});
            }
            return rows;
        }));
    }
    std::vector<BenchRow> rows;
    for (auto& j : jobs)
        for (auto& r : j.get()) rows.push_back(std::move(r));

    json out_rows = json::array();
    std::map<std::string, std::vector<std::vector<trace::TraceRecord>>> by_service;
    std::vector<std::vector<trace::TraceRecord>> all;
    report::Cost total_cost;
    int rc = ok;
    for (const auto& r : rows) {
        const auto& o = r.outcome;
        const auto cost = report::cost_of_tokens(o.input_tokens, o.output_tokens, config.prices);
        total_cost = total_cost + cost;
        json attacks_j = json::object();
        for (const auto& s : o.sections) attacks_j[attacks::to_string(s.kind)] = section_summary(s);
        out_rows.push_back({{"service", r.service},
                            {"budget", r.budget ? json(*r.budget) : json(nullptr)},
                            {"seed", r.seed},
                            {"run", o.run_id},
                            {"complete", o.complete},
                            {"failure", o.failure},
                            {"total_steps", o.total_steps},
                            {"controller_steps", o.controller_steps},
                            {"input_tokens", o.input_tokens},
                            {"output_tokens", o.output_tokens},
                            {"cost", cost.amount()},
                            {"trace", rel(o.trace_path, ws)},
                            {"attacks", attacks_j}});
        auto t = trace::read_trace(o.trace_path);
        by_service[r.service].push_back(t);
        all.push_back(std::move(t));
        if (unreachable(o))
            rc = service_failure;
        else if (!o.complete && rc == ok)
            rc = incomplete;
    }

    const auto completion = report::completion_rate(by_service);
    const auto steps = report::summarize_steps(all);
    json steps_j = json::object();
    for (const auto& [attack, s] : steps)
        steps_j[attack] = {{"runs", s.runs}, {"mean", s.mean}, {"min", s.min}, {"max", s.max}, {"incomplete", s.incomplete}};
    json summary{{"name", name},
                 {"rows", rows.size()},
                 {"completion_rate", completion.overall},
                 {"completion_by_service", completion.per_target},
                 {"steps_by_attack", steps_j},
                 {"mean_cost", total_cost.amount() / static_cast<double>(rows.size())},
                 {"total_cost", total_cost.amount()},
                 {"currency", config.prices.currency}};

    std::ostringstream md;
    md << "| service | budget | seed | complete | steps | cost | MIA acc | steal agree | steal strategy | recon mse | "
          "recon base | attr acc | attr base |\n";
    md << "|---|---|---|---|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : out_rows) {
        const auto& at = r["attacks"];
        const std::string strategy =
            at.contains("model_stealing") ? at["model_stealing"].value("selection_strategy", std::string("-")) : "-";
        md << "| " << r["service"].get<std::string>() << " | " << (r["budget"].is_null() ? "-" : r["budget"].dump())
           << " | " << r["seed"] << " | " << (r["complete"].get<bool>() ? "yes" : "no") << " | " << r["total_steps"]
           << " | " << fixed(r["cost"].get<double>(), 3) << " | " << cell(r, "membership_inference") << " | "
           << cell(r, "model_stealing", "agreement") << " | " << strategy << " | " << cell(r, "data_reconstruction")
           << " | " << cell(r, "data_reconstruction", "baseline_mse") << " | " << cell(r, "attribute_inference")
           << " | " << cell(r, "attribute_inference", "majority_baseline") << " |\n";
    }
    md << "\nCompletion rate: " << fixed(completion.overall, 3) << "  \n";
    for (const auto& [svc, rate] : completion.per_target) md << "- " << svc << ": " << fixed(rate, 3) << "\n";
    md << "\nMean agent steps per attack:\n";
    for (const auto& [attack, s] : steps) md << "- " << attack << ": " << fixed(s.mean, 2) << " (" << s.runs << " runs)\n";
    md << "\nMean cost per run: " << fixed(total_cost.amount() / static_cast<double>(rows.size()), 3) << " "
       << config.prices.currency << "\n";

    const fs::path dir = ws / "bench" / name;
    write_json(dir / "rows.json", out_rows);
    write_json(dir / "summary.json", summary);
    write_text(dir / "table.md", md.str());
    agent::index_output(ws, "benches",
                        {{"id", name}, {"rows", rel(dir / "rows.json", ws)}, {"summary", rel(dir / "summary.json", ws)},
                         {"table", rel(dir / "table.md", ws)}});
    std::cout << md.str() << "\nbench output: " << dir.string() << "\n";
    return rc;
}

// ---- analyze ----------------------------------------------------------------

int cmd_analyze(const std::string& traces_dir, const std::string& workspace) {
    const fs::path root = traces_dir;
    if (!fs::is_directory(root)) throw PreconditionError("no trace directory at " + traces_dir);
    std::vector<fs::path> found;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file() && e.path().filename() == "trace.jsonl") found.push_back(e.path());
    std::sort(found.begin(), found.end());
    if (found.empty()) throw PreconditionError("no trace.jsonl files under " + traces_dir);

    const fs::path ws = workspace;
    ensure_writable(ws);
    json all = json::array();
    std::map<std::string, int> totals;
    std::ostringstream records;
    std::cout << "trace | bad plan | instr | context | type I | type II | type III | dominant\n";
    for (const auto& path : found) {
        const auto t = trace::read_trace(path);
        const auto archive = trace::ObservationArchive::load(path.parent_path() / "observations");
        const auto f = report::analyze_trace(t, archive);
        auto j = f.to_json();
        j["trace"] = fs::relative(path, root).generic_string();
        all.push_back(j);
        records << f.to_record().to_json().dump() << "\n";
        for (const char* k : {"bad_plan", "instruction_violation", "context_loss", "hallucination_type1",
                              "hallucination_type2", "hallucination_type3"})
            totals[k] += j[k].get<int>();
        totals["dominant_action"] += f.dominant_flag() ? 1 : 0;
        std::cout << j["trace"].get<std::string>() << " | " << f.bad_plan << " | " << f.instruction_violation << " | "
                  << f.context_loss << " | " << f.hallucination_type1 << " | " << f.hallucination_type2 << " | "
                  << f.hallucination_type3 << " | " << fixed(f.dominant_action_fraction, 2)
                  << (f.dominant_flag() ? " (flagged)" : "") << "\n";
        for (const auto& n : f.notes) std::cout << "    " << n << "\n";
    }
    std::cout << "totals:";
    for (const auto& [k, v] : totals) std::cout << " " << k << "=" << v;
    std::cout << "\n";

    const auto id = trace::digest(fs::absolute(root).lexically_normal().string()).substr(0, 10);
    const fs::path dir = ws / "analysis" / id;
    write_json(dir / "findings.json", {{"traces", rel(fs::absolute(root), fs::absolute(ws))}, {"findings", all}, {"totals", totals}});
    write_text(dir / "findings.jsonl", records.str());
    agent::index_output(ws, "analyses", {{"id", id}, {"source", fs::absolute(root).string()},
                                         {"findings", rel(dir / "findings.json", ws)}});
    std::cout << "findings: " << (dir / "findings.json").string() << "\n";
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Automated inference-attack risk assessment for deployed ML services"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate synthetic datasets and register them");
    gen_cmd->add_option("--spec", gen.spec, "dataset spec JSON (object or array)")->required();
    gen_cmd->add_option("--registry", gen.registry, "registry file (default <workspace>/data/available_datasets.json)");
    gen_cmd->add_option("--workspace", gen.workspace, "output root");
    gen.seed_opt = gen_cmd->add_option("--seed", gen.seed, "override the seed in the dataset file");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train-target", "build a fixture: data partitions, target model, environment");
    train_cmd->add_option("--spec", train.spec, "fixture spec JSON");
    train_cmd->add_option("--standard", train.standard, "standard fixture name");
    train_cmd->add_option("--out", train.out, "fixture directory (default <workspace>/fixtures/<name>)");
    train_cmd->add_option("--workspace", train.workspace, "output root");
    train.seed_opt = train_cmd->add_option("--seed", train.seed, "data seed");
    train_cmd->add_flag("--list", train.list, "list the standard fixtures");

    ServeArgs serve;
    auto* serve_cmd = app.add_subcommand("serve", "serve a fixture's target model over HTTP");
    serve_cmd->add_option("--fixture", serve.fixture, "fixture directory")->required();
    serve_cmd->add_option("--host", serve.host, "bind address");
    serve_cmd->add_option("--port", serve.port, "port (0 picks a free one)");
    serve.budget_opt = serve_cmd->add_option("--budget", serve.budget, "query budget")->check(CLI::PositiveNumber);
    serve_cmd->add_option("--duration", serve.duration, "stop after this many seconds (0: until interrupted)");
    serve_cmd->add_option("--info-out", serve.info_out, "service info file (default <workspace>/services/<name>.json)");
    serve_cmd->add_option("--workspace", serve.workspace, "output root");

    AssessArgs assess;
    auto* assess_cmd = app.add_subcommand("assess", "run an assessment against one service");
    assess_cmd->add_option("--service", assess.service, "service info JSON");
    assess_cmd->add_option("--env", assess.env, "assessment environment (default: env_root in the service info)");
    assess_cmd->add_option("--fixture", assess.fixture, "serve this fixture in-process and assess it");
    assess_cmd->add_option("--port", assess.port, "port for --fixture (0 picks a free one)");
    assess_cmd->add_option("--runs", assess.runs, "repeated runs with consecutive seeds")->check(CLI::PositiveNumber);
    assess.run.attach(assess_cmd);

    std::string matrix;
    RunFlags bench_flags;
    auto* bench_cmd = app.add_subcommand("bench", "run a service x seed matrix and aggregate the results");
    bench_cmd->add_option("--matrix", matrix, "matrix JSON")->required();
    bench_flags.attach(bench_cmd);

    std::string traces_dir, analyze_ws = "workspace";
    auto* analyze_cmd = app.add_subcommand("analyze", "classify planner errors in recorded traces");
    analyze_cmd->add_option("--traces", traces_dir, "directory searched for trace.jsonl files")->required();
    analyze_cmd->add_option("--workspace", analyze_ws, "output root");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : usage;
    }

    try {
        if (*gen_cmd) return cmd_gen_data(gen);
        if (*train_cmd) return cmd_train_target(train);
        if (*serve_cmd) return cmd_serve(serve);
        if (*assess_cmd) return cmd_assess(assess);
        if (*bench_cmd) return cmd_bench(matrix, bench_flags);
        if (*analyze_cmd) return cmd_analyze(traces_dir, analyze_ws);
    } catch (const ServiceError& e) {
        std::cerr << "service error: " << e.what() << "\n";
        return service_failure;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return format;
    } catch (const PreconditionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return usage;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return internal;
    }
    return usage;
}
