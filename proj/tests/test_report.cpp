#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "iaudit/actions.hpp"
#include "iaudit/errors.hpp"
#include "iaudit/random.hpp"
#include "iaudit/report.hpp"

using namespace iaudit;
using namespace iaudit::report;
using iaudit::trace::TraceRecord;
using nlohmann::json;
namespace act = iaudit::agent::act;

namespace {

// Builds one agent's records with the archive filled the way the runtime fills it.
struct TraceBuilder {
    std::vector<TraceRecord> records;
    trace::ObservationArchive archive;
    std::string run = "run-test";

    void start(const std::string& agent, const std::string& role, const std::string& instruction) {
        TraceRecord r;
        r.run = run;
        r.agent = agent;
        r.role = role;
        r.kind = "start";
        r.extra = {{"instruction_digest", archive.put(instruction)}};
        records.push_back(r);
    }
    TraceRecord& step(const std::string& agent, const std::string& role, int step, const std::string& action,
                      json input, const std::string& observation) {
        TraceRecord r;
        r.run = run;
        r.agent = agent;
        r.role = role;
        r.kind = "step";
        r.step = step;
        r.action = action;
        r.action_input = std::move(input);
        r.observation_digest = archive.put(observation);
        r.observation_excerpt = observation.substr(0, 240);
        records.push_back(r);
        return records.back();
    }
    void end(const std::string& agent, const std::string& role, int step, const std::string& status, json extra = json::object()) {
        TraceRecord r;
        r.run = run;
        r.agent = agent;
        r.role = role;
        r.kind = "end";
        r.step = step;
        r.extra = std::move(extra);
        r.extra["status"] = status;
        if (role == "attacker") r.extra["attack"] = agent;
        records.push_back(r);
    }
};

const char* kInstruction = "attack = data_reconstruction\nscript = data_reconstruction\nroot = .\n";

json exec_input(json params) { return {{"script_name", "data_reconstruction"}, {"parameters", std::move(params)}}; }

// A clean reconstruction agent: every input value was observed first.
void clean_attacker(TraceBuilder& b) {
    const std::string a = "data_reconstruction";
    b.start(a, "attacker", kInstruction);
    b.step(a, "attacker", 1, act::list_files, {{"dir_path", "."}}, "files = available_datasets.json, datasets/");
    b.step(a, "attacker", 2, act::check_parameters, {{"script_name", "data_reconstruction"}},
           "required = shadow_dataset_path, model, learning_rate, batch_size, epochs, dataset_size\n"
           "learning_rate = 0.001\nbatch_size = 64\nepochs = 100\ndataset_size = 500\nmodel = medium-mlp");
    b.step(a, "attacker", 3, act::choose_dataset,
           {{"file_name", "available_datasets.json"}, {"task_description", "t"}, {"input_format", "i"}, {"output_format", "o"}},
           "shadow_dataset_path = datasets/public.bin");
    b.step(a, "attacker", 4, act::execute_script,
           exec_input({{"shadow_dataset_path", "datasets/public.bin"}, {"model", "medium-mlp"}, {"learning_rate", 0.001},
                       {"batch_size", 64}, {"epochs", 100}, {"dataset_size", 500}}),
           "status = completed\nmetric = mse\nvalue = 2.25\nresult.baseline_mse = 3.1");
    b.step(a, "attacker", 5, act::final_answer,
           {{"status", "completed"}, {"metrics", {{"mse", 2.25}}}, {"summary", "mse 2.25 against 3.1"}}, "accepted");
    b.end(a, "attacker", 5, "completed");
}

}  // namespace

// ---- cost -------------------------------------------------------------------

TEST_CASE("the reference token counts cost 0.627 at the default prices") {
    const PriceTable prices;
    const auto c = cost_of_tokens(147971, 25665, prices);
    // 147971 * 2.50 + 25665 * 10.00 = 626577.5 micro-units.
    CHECK(c.pico == 626577500000LL);
    CHECK(c.rounded(3) == "0.627");
    CHECK(c.rounded(7) == "0.6265775");
    CHECK(c.amount() == doctest::Approx(0.6265775).epsilon(1e-12));
}

TEST_CASE("cost is additive over token splits") {
    const PriceTable prices{1.25, 7.5, "EUR"};
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const auto a = static_cast<std::int64_t>(rng.below(1000000));
        const auto b = static_cast<std::int64_t>(rng.below(1000000));
        const auto c = static_cast<std::int64_t>(rng.below(1000000));
        const auto d = static_cast<std::int64_t>(rng.below(1000000));
        CHECK(cost_of_tokens(a + b, c + d, prices) == cost_of_tokens(a, c, prices) + cost_of_tokens(b, d, prices));
    }
    CHECK(cost_of_tokens(0, 0, prices).rounded(3) == "0.000");
    CHECK(cost_of_tokens(200, 0, PriceTable{}).rounded(3) == "0.001");  // 0.0005 rounds half up
}

TEST_CASE("cost of a trace sums step tokens") {
    TraceBuilder b;
    clean_attacker(b);
    std::int64_t in = 0, out = 0;
    for (auto& r : b.records) {
        if (r.kind != "step") continue;
        r.input_tokens = 1000 + r.step;
        r.output_tokens = 100 + r.step;
        in += r.input_tokens;
        out += r.output_tokens;
    }
    CHECK(cost_of(b.records, PriceTable{}) == cost_of_tokens(in, out, PriceTable{}));
}

TEST_CASE("price tables validate and round-trip") {
    CHECK_THROWS_AS((PriceTable{-1.0, 1.0, "USD"}.validate()), PreconditionError);
    CHECK_THROWS_AS((PriceTable{1.0, 1.0, ""}.validate()), PreconditionError);
    const PriceTable p{3.0, 15.0, "USD"};
    const auto q = PriceTable::from_json(p.to_json());
    CHECK(q.input_per_million == 3.0);
    CHECK(q.output_per_million == 15.0);
    const auto path = std::filesystem::temp_directory_path() / "iaudit_prices.json";
    std::ofstream(path) << R"({"input_per_million": -2, "output_per_million": 1})";
    CHECK_THROWS_AS(load_price_table(path), PreconditionError);
    std::ofstream(path) << "{oops";
    CHECK_THROWS_AS(load_price_table(path), FormatError);
    std::filesystem::remove(path);
}

// ---- risk and report --------------------------------------------------------

TEST_CASE("risk levels follow the rubric") {
    attacks::AttackResult mia;
    mia.kind = attacks::AttackKind::membership_inference;
    mia.metric_name = "attack accuracy";
    mia.metric_value = 0.822;
    CHECK(assess_risk(mia).level == RiskLevel::high);
    mia.metric_value = 0.7;
    CHECK(assess_risk(mia).level == RiskLevel::elevated);
    mia.metric_value = 0.52;
    CHECK(assess_risk(mia).level == RiskLevel::low);
    mia.metric_value.reset();
    CHECK(assess_risk(mia).level == RiskLevel::unknown);

    attacks::AttackResult st;
    st.kind = attacks::AttackKind::model_stealing;
    st.metric_value = 0.5;
    st.sub_results = {{"agreement", 0.85}};
    CHECK(assess_risk(st).level == RiskLevel::high);

    attacks::AttackResult rec;
    rec.kind = attacks::AttackKind::data_reconstruction;
    rec.metric_value = 2.0;
    rec.sub_results = {{"baseline_mse", 3.0}};
    CHECK(assess_risk(rec).level == RiskLevel::elevated);
    rec.metric_value = 1.0;
    CHECK(assess_risk(rec).level == RiskLevel::high);

    attacks::AttackResult attr;
    attr.kind = attacks::AttackKind::attribute_inference;
    attr.metric_value = 0.78;
    attr.sub_results = {{"majority_baseline", 0.5}};
    CHECK(assess_risk(attr).level == RiskLevel::high);
    attr.metric_value = 0.55;
    CHECK(assess_risk(attr).level == RiskLevel::low);
}

TEST_CASE("each attack section carries target, process, results, meaning and defenses") {
    ReportInput in;
    in.service.task_description = "Face identity grouping";
    in.service.predict_url = "http://h/predict";
    in.service.input_format = "16-dim";
    in.service.output_format = "posteriors over 8 classes";
    in.run_id = "run-x";
    in.complete = false;
    in.total_steps = 17;
    in.cost = cost_of_tokens(147971, 25665, PriceTable{});
    in.excluded = {{"attribute_inference", "no embedding endpoint"}};

    AttackSection ok;
    ok.kind = attacks::AttackKind::membership_inference;
    ok.agent = "membership_inference";
    ok.status = "completed";
    ok.steps = 8;
    attacks::AttackResult r;
    r.kind = ok.kind;
    r.metric_name = "attack accuracy";
    r.metric_value = 0.822;
    r.queries = 2000;
    ok.result = r;
    ok.process = {{"shadow_dataset", "faces-public"}, {"model", "medium-mlp"}, {"parameters", {{"epochs", 50}}}};

    AttackSection failed;
    failed.kind = attacks::AttackKind::model_stealing;
    failed.agent = "model_stealing";
    failed.status = "failed";
    failed.reason = "query budget exhausted after 300 queries";
    failed.steps = 9;
    in.sections = {ok, failed};

    const auto md = render_report(in);
    for (const char* part : {"### Target", "### Attack process", "### Results", "### What this means", "### Suggested defenses"}) {
        std::size_t n = 0;
        for (auto pos = md.find(part); pos != std::string::npos; pos = md.find(part, pos + 1)) ++n;
        CHECK_MESSAGE(n == 2, part);
    }
    CHECK(md.find("Risk: **high**") != std::string::npos);
    CHECK(md.find("0.822") != std::string::npos);
    CHECK(md.find("The attack failed: query budget exhausted after 300 queries") != std::string::npos);
    CHECK(md.find("attribute_inference: no embedding endpoint") != std::string::npos);
    CHECK(md.find("Planner cost: 0.627 USD") != std::string::npos);
    CHECK(md.find("## Risk rubric") != std::string::npos);
    CHECK(md.find("Architecture: medium-mlp") != std::string::npos);

    const auto j = results_json(in);
    CHECK(j["sections"][0]["risk"]["level"] == "high");
    CHECK_FALSE(j["sections"][1].contains("risk"));
    const auto back = AttackSection::from_json(j["sections"][0]);
    CHECK(back.result->metric_value == 0.822);
    CHECK(back.process == ok.process);
}

TEST_CASE("every attack kind has defenses") {
    for (auto k : {attacks::AttackKind::membership_inference, attacks::AttackKind::model_stealing,
                   attacks::AttackKind::data_reconstruction, attacks::AttackKind::attribute_inference})
        CHECK(defenses(k).size() >= 3);
}

// ---- completion and step statistics -----------------------------------------

namespace {

std::vector<TraceRecord> run_trace(bool controller_ok, std::vector<std::pair<std::string, std::pair<std::string, int>>> agents) {
    TraceBuilder b;
    std::vector<std::string> confirmed;
    for (const auto& [a, s] : agents) confirmed.push_back(a);
    b.end("controller", "controller", 4, controller_ok ? "completed" : "failed", {{"confirmed", confirmed}});
    for (const auto& [a, s] : agents) b.end(a, "attacker", s.second, s.first);
    return b.records;
}

}  // namespace

TEST_CASE("a run is complete only when the controller and every confirmed agent completed") {
    CHECK(run_complete(run_trace(true, {{"membership_inference", {"completed", 8}}, {"model_stealing", {"completed", 6}}})));
    CHECK_FALSE(run_complete(run_trace(true, {{"membership_inference", {"completed", 8}}, {"model_stealing", {"failed", 6}}})));
    CHECK_FALSE(run_complete(run_trace(false, {{"membership_inference", {"completed", 8}}})));
    // Premature final answer: the controller ended but an agent never reported.
    auto premature = run_trace(true, {{"membership_inference", {"completed", 8}}, {"model_stealing", {"completed", 6}}});
    premature.pop_back();
    CHECK_FALSE(run_complete(premature));
    CHECK_FALSE(run_complete({}));
}

TEST_CASE("completion rate per target and overall") {
    const auto good = run_trace(true, {{"membership_inference", {"completed", 8}}});
    const auto bad = run_trace(true, {{"membership_inference", {"failed", 50}}});
    const auto s = completion_rate({{"faces", {good, good, bad}}, {"digits", {good}}});
    CHECK(s.per_target.at("faces") == doctest::Approx(2.0 / 3.0));
    CHECK(s.per_target.at("digits") == 1.0);
    CHECK(s.runs.at("faces") == 3);
    CHECK(s.overall == doctest::Approx(0.75));
    CHECK_THROWS_AS(completion_rate({}), PreconditionError);
    CHECK_THROWS_AS(completion_rate({{"faces", {}}}), PreconditionError);
}

TEST_CASE("step statistics per attack exclude unfinished agents") {
    const auto a = run_trace(true, {{"membership_inference", {"completed", 9}}, {"data_reconstruction", {"completed", 5}}});
    const auto b = run_trace(true, {{"membership_inference", {"completed", 8}}, {"data_reconstruction", {"completed", 4}}});
    const auto c = run_trace(true, {{"membership_inference", {"failed", 50}}});
    const auto s = summarize_steps({a, b, c});
    CHECK(s.at("membership_inference").runs == 2);
    CHECK(s.at("membership_inference").mean == 8.5);
    CHECK(s.at("membership_inference").incomplete == 1);
    CHECK(s.at("membership_inference").max == 9);
    CHECK(s.at("data_reconstruction").mean == 4.5);
    CHECK(s.at("data_reconstruction").min == 4);
    CHECK(s.at("data_reconstruction").mean < s.at("membership_inference").mean);
}

// ---- analyzer ---------------------------------------------------------------

TEST_CASE("a clean trace has no findings") {
    TraceBuilder b;
    clean_attacker(b);
    const auto f = analyze_trace(b.records, b.archive);
    CHECK(f.categories() == 0);
    CHECK(f.notes.empty());
    CHECK(f.run == "run-test");
    CHECK(f.dominant_action_fraction == doctest::Approx(0.2));
}

TEST_CASE("each injected error lands in its own category") {
    const std::string a = "data_reconstruction";

    SUBCASE("nonexistent action") {
        TraceBuilder b;
        b.start(a, "attacker", kInstruction);
        b.step(a, "attacker", 1, "Change Directory", {{"path", "datasets"}}, "Error: unknown action");
        const auto f = analyze_trace(b.records, b.archive);
        CHECK(f.hallucination_type1 == 1);
        CHECK(f.categories() == 1);
    }
    SUBCASE("value without provenance") {
        TraceBuilder b;
        b.start(a, "attacker", kInstruction);
        b.step(a, "attacker", 1, act::execute_script,
               exec_input({{"shadow_dataset_path", "path/to/shadow_dataset"}, {"learning_rate", 0.001}, {"epochs", 100}}),
               "Error: file not found");
        // Error observations echo the agent's own input and never ground it.
        b.step(a, "attacker", 2, act::execute_script,
               exec_input({{"shadow_dataset_path", "path/to/shadow_dataset"}, {"learning_rate", 0.001}, {"epochs", 100}}),
               "Error: file not found");
        const auto f = analyze_trace(b.records, b.archive);
        CHECK(f.hallucination_type2 == 2);
        CHECK(f.hallucination_type3 == 0);
    }
    SUBCASE("fabricated result") {
        TraceBuilder b;
        clean_attacker(b);
        b.records[b.records.size() - 2].action_input["metrics"]["mse"] = 0.0123;
        const auto f = analyze_trace(b.records, b.archive);
        CHECK(f.hallucination_type3 == 1);
        CHECK(f.categories() == 1);
    }
    SUBCASE("malformed response and script misuse") {
        TraceBuilder b;
        b.start(a, "attacker", kInstruction);
        b.step(a, "attacker", 1, "", json::object(), "Error: your response could not be parsed").flags = {"malformed_plan"};
        b.step(a, "attacker", 2, act::execute_script, {{"script_name", "data_reconstruction"}, {"arguments", json::object()}},
               "Error: invalid input");
        const auto f = analyze_trace(b.records, b.archive);
        CHECK(f.instruction_violation == 2);
        CHECK(f.hallucination_type1 == 0);
    }
    SUBCASE("evaluation data as attack input") {
        TraceBuilder b;
        clean_attacker(b);
        b.records[4].action_input["parameters"]["shadow_dataset_path"] = "eval/probe.bin";
        const auto f = analyze_trace(b.records, b.archive);
        CHECK(f.bad_plan == 1);
    }
    SUBCASE("controller mistakes") {
        TraceBuilder b;
        b.start("controller", "controller", "attacks = membership_inference");
        b.step("controller", "controller", 1, act::monitor_attacks, json::object(), "agents = none").flags = {
            "monitor_without_agents"};
        auto& fin = b.step("controller", "controller", 2, act::final_answer, {{"summary", "done"}}, "accepted");
        fin.extra = {{"launched", 0}, {"confirmed", 1}};
        const auto f = analyze_trace(b.records, b.archive);
        CHECK(f.bad_plan == 2);
    }
    SUBCASE("the same error and fix three times") {
        TraceBuilder b;
        clean_attacker(b);
        const auto base = exec_input({{"shadow_dataset_path", "datasets/public.bin"}, {"epochs", 100}});
        for (int i = 0; i < 3; ++i) {
            b.step(a, "attacker", 6 + 2 * i, act::execute_script, base, "Error: missing parameter learning_rate");
            b.step(a, "attacker", 7 + 2 * i, act::check_parameters, {{"script_name", "data_reconstruction"}},
                   "learning_rate = 0.001");
        }
        const auto f = analyze_trace(b.records, b.archive);
        CHECK(f.context_loss == 1);
        CHECK(f.instruction_violation == 3);
        CHECK(f.bad_plan == 0);
    }
    SUBCASE("one action dominating the steps") {
        TraceBuilder b;
        b.start(a, "attacker", kInstruction);
        for (int s = 1; s <= 10; ++s)
            b.step(a, "attacker", s, act::list_files, {{"dir_path", "."}}, "files = datasets/");
        const auto f = analyze_trace(b.records, b.archive);
        CHECK(f.dominant_action_fraction == 1.0);
        CHECK(f.dominant_flag());
        CHECK(f.dominant_action == act::list_files);
        CHECK(f.categories() == 1);
    }
}

TEST_CASE("findings serialise into a trace record") {
    ErrorFindings f;
    f.run = "r";
    f.hallucination_type2 = 2;
    f.notes = {"x"};
    const auto r = f.to_record();
    CHECK(r.kind == "findings");
    CHECK(r.agent == "analyzer");
    CHECK(r.extra == f.to_json());
    CHECK(f.to_json()["hallucination_type2"] == 2);
}
