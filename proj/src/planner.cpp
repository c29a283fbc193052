#include "iaudit/planner.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include "iaudit/actions.hpp"
#include "iaudit/errors.hpp"
#include "iaudit/guidelines.hpp"
#include "iaudit/plan.hpp"
#include "iaudit/tasks.hpp"

// After Eigen: resolv.h defines _res.
#include <httplib.h>

namespace iaudit::agent {

using nlohmann::json;

std::int64_t estimate_tokens(const std::string& text) { return static_cast<std::int64_t>((text.size() + 3) / 4); }

std::int64_t estimate_tokens(const std::vector<ChatMessage>& messages) {
    std::int64_t n = 0;
    for (const auto& m : messages) n += estimate_tokens(m.content) + 4;
    return n;
}

namespace {

// ---- mock agent workflow ----------------------------------------------------

const std::regex& fact_line() {
    static const std::regex re(R"(^([A-Za-z_][A-Za-z0-9_.]*) = (.+)$)");
    return re;
}

std::string first_sentence(const std::string& text) {
    std::size_t end = text.size();
    const auto nl = text.find('\n');
    if (nl != std::string::npos) end = nl;
    for (std::size_t i = 0; i + 1 < end; ++i) {
        if (text[i] == '.' && (text[i + 1] == ' ' || text[i + 1] == '\t')) {
            end = i + 1;
            break;
        }
    }
    std::string s = text.substr(0, end);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.pop_back();
    return s;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
        const auto b = cur.find_first_not_of(' ');
        const auto e = cur.find_last_not_of(' ');
        if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
    }
    return out;
}

json number_or_text(const std::string& v) {
    try {
        auto j = json::parse(v);
        if (j.is_number()) return j;
    } catch (const json::exception&) {
    }
    return v;
}

class MockState {
public:
    explicit MockState(const json& ctx) : ctx_(ctx) {
        for (const auto& e : ctx.value("important_information", json::array()))
            ii_.push_back({e.at("key").get<std::string>(), e.at("value").get<std::string>(), e.value("step", 0)});
        if (ii_.empty()) seed_initial();
        const auto& window = ctx.value("window", json::array());
        if (!window.empty()) {
            last_ = window.back();
            std::istringstream in(last_.value("observation", ""));
            std::string line;
            while (std::getline(in, line)) {
                std::smatch m;
                if (std::regex_match(line, m, fact_line())) set(m[1].str(), m[2].str(), last_.value("step", 0));
            }
        }
    }

    const json& facts() const { return ctx_.at("facts"); }
    std::string fact(const char* k) const {
        const auto& f = facts();
        if (!f.contains(k) || f[k].is_null()) return {};
        return f[k].is_string() ? f[k].get<std::string>() : f[k].dump();
    }
    const json& last() const { return last_; }
    bool last_was(const char* action) const { return !last_.is_null() && last_.value("action", "") == action; }
    bool last_error() const { return !last_.is_null() && last_.value("observation", "").rfind("Error", 0) == 0; }
    std::string last_first_line() const {
        const auto obs = last_.value("observation", "");
        return obs.substr(0, obs.find('\n'));
    }

    std::optional<std::string> get(const std::string& k) const {
        for (const auto& e : ii_)
            if (e.key == k) return e.value;
        return std::nullopt;
    }
    void set(const std::string& k, const std::string& v, int step) {
        for (auto& e : ii_)
            if (e.key == k) {
                if (e.value != v) e = {k, v, step};
                return;
            }
        ii_.push_back({k, v, step});
    }
    const std::vector<ImportantEntry>& important() const { return ii_; }
    int step() const { return ctx_.value("step", 1); }

private:
    void seed_initial() {
        const auto& f = ctx_.at("facts");
        for (const char* k : {"attack", "script", "predict_endpoint", "embedding_endpoint", "target_classes", "input_size",
                              "sensitive_attribute", "query_budget"}) {
            if (!f.contains(k) || f[k].is_null()) continue;
            const auto v = f[k].is_string() ? f[k].get<std::string>() : f[k].dump();
            if (!v.empty()) ii_.push_back({k, v, 0});
        }
    }

    json ctx_;
    json last_;
    std::vector<ImportantEntry> ii_;
};

ActionPlan make_plan(const MockState& s, std::string reflection, std::string plan, std::string action, json input) {
    ActionPlan p;
    p.reflection = std::move(reflection);
    p.plan = std::move(plan);
    p.important = s.important();
    p.action = std::move(action);
    p.input = std::move(input);
    return p;
}

std::string reflect(const MockState& s) {
    if (s.last().is_null()) return "Starting from the initial instruction.";
    return "The last action was " + s.last().value("action", std::string("unparseable")) +
           (s.last_error() ? " and it returned an error." : " and it succeeded.");
}

ActionPlan controller_step(MockState& s) {
    const auto r = reflect(s);
    const auto confirmed = s.get("confirmed_attacks");
    if (!confirmed) {
        json names = json::array();
        for (const auto& n : s.facts().at("attack_catalogue")) names.push_back(n);
        return make_plan(s, r, "Confirm which attacks can run against the service.", act::determine_attacks,
                         {{"attacks", names}});
    }
    if (*confirmed == "none")
        return make_plan(s, r, "No attack is executable; close the assessment.", act::final_answer,
                         {{"summary", "No attack can be performed against this service."}});
    if (!s.get("launched"))
        return make_plan(s, r, "Launch one attack agent per confirmed attack.", act::launch_agents,
                         {{"attacks", split_list(*confirmed)}});
    if (s.last_was(act::monitor_attacks) && s.get("all_terminal") == std::optional<std::string>("yes"))
        return make_plan(s, r, "Every attack has finished; shut down and assemble the report.", act::final_answer,
                         {{"summary", "All launched attacks have finished."}});
    return make_plan(s, r, "Wait for the attack agents and check their status.", act::monitor_attacks, json::object());
}

ActionPlan attacker_step(MockState& s) {
    const auto r = reflect(s);
    const auto kind = attacks::attack_kind_from_string(s.fact("attack"));
    const std::string script = s.fact("script");
    const std::string attack = attacks::to_string(kind);

    if (s.last_was(act::execute_script) && s.last_error()) {
        const int failed = std::stoi(s.get("failed_executions").value_or("0")) + 1;
        s.set("failed_executions", std::to_string(failed), s.last().value("step", 0));
        const auto line = s.last_first_line();
        if (failed >= 4 || line.find("infeasible") != std::string::npos)
            return make_plan(s, r, "The attack cannot be completed; report the failure.", act::final_answer,
                             {{"status", "failed"}, {"reason", line}});
        return make_plan(s, r, "Re-read the script's parameters before running it again.", act::check_parameters,
                         {{"script_name", script}});
    }
    if (s.last_error() && s.last_first_line().find("infeasible") != std::string::npos)
        return make_plan(s, r, "The attack is not feasible here; report the failure.", act::final_answer,
                         {{"status", "failed"}, {"reason", s.last_first_line()}});

    if (!s.get("files"))
        return make_plan(s, r, "Inspect the environment.", act::list_files, {{"dir_path", "."}});
    if (!s.get("required_parameters"))
        return make_plan(s, r, "Find out which parameters the attack script needs.", act::check_parameters,
                         {{"script_name", script}});
    if (!s.get("shadow_dataset")) {
        const std::string attribute =
            kind == attacks::AttackKind::attribute_inference ? s.fact("sensitive_attribute") : std::string{};
        return make_plan(s, r, "Pick the shadow dataset closest to the target's data.", act::choose_dataset,
                         {{"file_name", "available_datasets.json"},
                          {"task_description", first_sentence(s.fact("task_description"))},
                          {"input_format", first_sentence(s.fact("input_format"))},
                          {"output_format", first_sentence(s.fact("output_format"))},
                          {"target_attribute", attribute}});
    }
    if (kind == attacks::AttackKind::membership_inference && !s.get("label"))
        return make_plan(s, r, "Pick labels that reproduce the target's classes.", act::choose_attribute,
                         {{"file_name", "available_datasets.json"},
                          {"task_description", first_sentence(s.fact("task_description"))},
                          {"shadow_dataset", *s.get("shadow_dataset")},
                          {"output_format", first_sentence(s.fact("output_format"))}});
    if (kind != attacks::AttackKind::attribute_inference && !s.get("model"))
        return make_plan(s, r, "Pick the model architecture.", act::choose_architecture,
                         {{"file_name", "available_models.json"}, {"access", s.fact("access")}, {"attack_name", attack}});
    if (!s.get("learning_rate")) {
        const std::string purpose = kind == attacks::AttackKind::membership_inference ? "training a shadow model"
                                    : kind == attacks::AttackKind::model_stealing    ? "training a surrogate model"
                                    : kind == attacks::AttackKind::data_reconstruction ? "training an inversion model"
                                                                                       : "training an attack model";
        return make_plan(s, r, "Set the training parameters.", act::set_parameters,
                         {{"script_name", script},
                          {"dataset_name", *s.get("shadow_dataset")},
                          {"model_name", s.get("model").value_or("")},
                          {"attack_name", attack},
                          {"purpose", purpose}});
    }
    if (!s.get("status")) {
        json params{{"shadow_dataset_path", *s.get("shadow_dataset_path")}};
        if (auto m = s.get("model"); m && kind != attacks::AttackKind::attribute_inference) params["model"] = *m;
        if (kind == attacks::AttackKind::membership_inference) params["label"] = s.get("label").value_or("");
        if (kind == attacks::AttackKind::attribute_inference) params["attribute"] = s.fact("sensitive_attribute");
        for (const char* k : {"learning_rate", "batch_size", "epochs", "dataset_size"})
            if (auto v = s.get(k)) params[k] = number_or_text(*v);
        if (auto sel = s.get("selection_strategy")) params["selection_strategy"] = *sel;
        return make_plan(s, r, "Run the attack script with the chosen parameters.", act::execute_script,
                         {{"script_name", script}, {"parameters", params}});
    }

    if (s.get("status") == std::optional<std::string>("partial") && !s.get("value"))
        return make_plan(s, r, "The script produced no measurement; report the failure.", act::final_answer,
                         {{"status", "failed"},
                          {"reason", "the query budget ran out before the attack produced a measurement"},
                          {"summary", attack + " could not be measured within the query budget."}});

    json metrics = json::object();
    const auto metric = s.get("metric").value_or("metric");
    std::string summary = attack + " finished";
    if (auto v = s.get("value")) {
        metrics[metric] = number_or_text(*v);
        summary += " with " + metric + " " + *v;
    }
    for (const auto& e : s.important())
        if (e.key.rfind("result.", 0) == 0) metrics[e.key.substr(7)] = number_or_text(e.value);
    if (auto q = s.get("queries")) metrics["queries"] = number_or_text(*q);
    if (s.get("status") == std::optional<std::string>("partial")) summary += "; the query budget ran out first";
    return make_plan(s, r, "Report the attack.", act::final_answer, {{"metrics", metrics}, {"summary", summary + "."}});
}

std::string rule_answer(const json& ctx) {
    const auto tool = ctx.at("tool").get<std::string>();
    try {
        if (tool == "choose_shadow_dataset") {
            std::vector<DatasetSummary> c;
            for (const auto& d : ctx.at("candidates")) c.push_back(DatasetSummary::from_json(d));
            return "Dataset: " + choose_shadow_dataset_rule(c, ShadowQuery::from_json(ctx.at("query")));
        }
        if (tool == "choose_attribute") {
            const auto choice =
                choose_attribute_rule(DatasetSummary::from_json(ctx.at("dataset")), ctx.at("target_classes").get<int>());
            std::string out = "Attribute: " + choice.text() + "\nClasses: " + std::to_string(choice.classes);
            if (!choice.exact) out += "\nNote: no combination matches the target exactly; closest class count chosen";
            return out;
        }
        if (tool == "choose_architecture") {
            std::vector<ModelSummary> m;
            for (const auto& x : ctx.at("models")) m.push_back(ModelSummary::from_json(x));
            return "Architecture: " +
                   choose_architecture_rule(m, attacks::attack_kind_from_string(ctx.at("attack").get<std::string>()));
        }
        if (tool == "set_parameters") {
            std::optional<std::int64_t> budget;
            if (!ctx.at("query_budget").is_null()) budget = ctx["query_budget"].get<std::int64_t>();
            const auto values = set_parameters_rule(tasks::TaskManifest::from_json(ctx.at("manifest")),
                                                    attacks::attack_kind_from_string(ctx.at("attack").get<std::string>()),
                                                    ctx.at("dataset_rows").get<std::int64_t>(), budget);
            std::string out;
            for (const auto& v : values)
                out += v.name + " = " + (v.value.is_string() ? v.value.get<std::string>() : v.value.dump()) + " | " +
                       v.reason + "\n";
            return out;
        }
    } catch (const InfeasibleAttack& e) {
        return std::string("Infeasible: ") + e.what();
    } catch (const PreconditionError& e) {
        return std::string("Cannot decide: ") + e.what();
    }
    throw PreconditionError("mock planner has no rule for tool '" + tool + "'");
}

// ---- faulty scripts ---------------------------------------------------------

void erase_path(json& j, const std::string& dotted) {
    json* cur = &j;
    std::string part;
    std::istringstream in(dotted);
    std::vector<std::string> parts;
    while (std::getline(in, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!cur->is_object() || !cur->contains(parts[i])) return;
        cur = &(*cur)[parts[i]];
    }
    if (cur->is_object()) cur->erase(parts.back());
}

void deep_merge(json& into, const json& from) {
    for (auto it = from.begin(); it != from.end(); ++it) {
        if (it.value().is_object() && into.contains(it.key()) && into[it.key()].is_object())
            deep_merge(into[it.key()], it.value());
        else
            into[it.key()] = it.value();
    }
}

json rule(const char* agent, json body) {
    body["agent"] = agent;
    return body;
}

std::map<std::string, json> presets() {
    const char* rec = "data_reconstruction";
    std::map<std::string, json> p;
    auto add = [&](const char* name, const char* cls, json rules) {
        p[name] = {{"name", name}, {"fault_class", cls}, {"rules", std::move(rules)}};
    };
    add("early_final", "bad_plan",
        json::array({rule("controller", {{"step_from", 2}, {"step_to", 2}, {"set_action", act::final_answer},
                                         {"set_input", {{"summary", "The assessment is complete."}}}})}));
    add("monitor_before_launch", "bad_plan",
        json::array({rule("controller", {{"step_from", 2}, {"step_to", 2}, {"set_action", act::monitor_attacks},
                                         {"set_input", json::object()}})}));
    add("eval_as_shadow", "bad_plan",
        json::array({rule(rec, {{"match_action", act::execute_script}, {"occurrences", {1}},
                                {"merge_input", {{"parameters", {{"shadow_dataset_path", "eval/probe.bin"}}}}}})}));
    add("malformed_output", "instruction_violation",
        json::array({rule(rec, {{"step_from", 2}, {"step_to", 2}, {"raw", "I will now check the parameters of the script."},
                                {"raw_attempts", 3}})}));
    add("script_arguments", "instruction_violation",
        json::array({rule(rec, {{"match_action", act::execute_script}, {"occurrences", {1}},
                                {"set_action", act::execute_script},
                                {"set_input", {{"script_name", rec}, {"arguments", {{"--epochs", 100}}}}}})}));
    add("forget_learning_rate", "context_loss",
        json::array({rule(rec, {{"match_action", act::execute_script}, {"occurrences", {1, 2, 3}},
                                {"drop_input", {"parameters.learning_rate"}}})}));
    add("forget_epochs", "context_loss",
        json::array({rule(rec, {{"match_action", act::execute_script}, {"occurrences", {1, 2, 3}},
                                {"drop_input", {"parameters.epochs"}}})}));
    add("change_directory", "hallucination_type1",
        json::array({rule(rec, {{"step_from", 2}, {"step_to", 2}, {"set_action", "Change Directory"},
                                {"set_input", {{"path", "datasets"}}}})}));
    add("review_code", "hallucination_type1",
        json::array({rule(rec, {{"step_from", 3}, {"step_to", 3}, {"set_action", "Review Code"},
                                {"set_input", {{"script_name", rec}}}})}));
    add("placeholder_path", "hallucination_type2",
        json::array({rule(rec, {{"match_action", act::execute_script}, {"occurrences", {1}},
                                {"merge_input", {{"parameters", {{"shadow_dataset_path", "path/to/shadow_dataset"}}}}}})}));
    add("invented_dataset", "hallucination_type2",
        json::array({rule(rec, {{"match_action", act::set_parameters}, {"occurrences", {1}},
                                {"merge_input", {{"dataset_name", "default_shadow_dataset"}}}})}));
    add("invented_metric", "hallucination_type3",
        json::array({rule(rec, {{"match_action", act::final_answer}, {"occurrences", {1}},
                                {"merge_input", {{"metrics", {{"mse", 0.0123}}}}}})}));
    add("invented_summary", "hallucination_type3",
        json::array({rule(rec, {{"match_action", act::final_answer}, {"occurrences", {1}},
                                {"merge_input", {{"summary", "Inputs were recovered with 97.5 percent fidelity."}}}})}));
    add("list_files_loop", "dominant_action",
        json::array({rule(rec, {{"step_from", 1}, {"step_to", 20}, {"set_action", act::list_files},
                                {"set_input", {{"dir_path", "."}}}})}));
    add("check_parameters_loop", "dominant_action",
        json::array({rule(rec, {{"step_from", 1}, {"step_to", 20}, {"set_action", act::check_parameters},
                                {"set_input", {{"script_name", rec}}}})}));
    return p;
}

}  // namespace

// ---- MockPlanner ------------------------------------------------------------

std::string MockPlanner::plan_text(const json& context) {
    MockState s(context);
    const auto plan = context.at("role") == "controller" ? controller_step(s) : attacker_step(s);
    return render_plan(plan);
}

std::string MockPlanner::tool_answer(const json& context) { return rule_answer(context); }

PlannerResponse MockPlanner::complete(const PlannerRequest& request) {
    const auto kind = request.context.value("kind", "");
    PlannerResponse r;
    if (kind == "step")
        r.text = plan_text(request.context);
    else if (kind == "tool")
        r.text = tool_answer(request.context);
    else
        throw PreconditionError("mock planner needs a structured context");
    r.input_tokens = estimate_tokens(request.messages);
    r.output_tokens = estimate_tokens(r.text);
    return r;
}

// ---- RemotePlanner ----------------------------------------------------------

RemoteConfig RemoteConfig::from_env() {
    auto env = [](const char* k) {
        const char* v = std::getenv(k);
        return v ? std::string(v) : std::string{};
    };
    RemoteConfig c;
    c.base_url = env("IAUDIT_PLANNER_URL");
    c.api_key = env("IAUDIT_PLANNER_KEY");
    c.model = env("IAUDIT_PLANNER_MODEL");
    if (c.base_url.empty()) throw PreconditionError("IAUDIT_PLANNER_URL is not set");
    if (c.model.empty()) throw PreconditionError("IAUDIT_PLANNER_MODEL is not set");
    return c;
}

RemotePlanner::RemotePlanner(RemoteConfig config) : config_(std::move(config)) {
    static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config_.base_url, m, url)) throw PreconditionError("malformed planner URL: " + config_.base_url);
    scheme_host_port_ = m[1].str();
    path_prefix_ = m[2].matched ? m[2].str() : "";
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

PlannerResponse RemotePlanner::complete(const PlannerRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    const json body{{"model", config_.model}, {"messages", messages}, {"temperature", config_.temperature}};

    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(10);
    client.set_read_timeout(300);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt) std::this_thread::sleep_for(std::chrono::seconds(attempt));
        auto res = client.Post(path_prefix_ + "/chat/completions", headers, body.dump(), "application/json");
        if (!res) {
            last_error = "planner endpoint unreachable: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "planner endpoint returned HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw ServiceError("planner endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body);
        try {
            const auto j = json::parse(res->body);
            PlannerResponse r;
            r.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
            if (j.contains("usage")) {
                r.input_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
                r.output_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
            } else {
                r.input_tokens = estimate_tokens(request.messages);
                r.output_tokens = estimate_tokens(r.text);
            }
            return r;
        } catch (const json::exception& e) {
            throw ServiceError(std::string("malformed planner response: ") + e.what());
        }
    }
    throw ServiceError(last_error);
}

// ---- FaultyPlanner ----------------------------------------------------------

FaultRule FaultRule::from_json(const json& j) {
    try {
        FaultRule r;
        r.agent = j.value("agent", "*");
        r.step_from = j.value("step_from", 0);
        r.step_to = j.value("step_to", r.step_from);
        r.match_action = j.value("match_action", "");
        r.occurrences = j.value("occurrences", std::vector<int>{});
        r.set_action = j.value("set_action", "");
        r.set_input = j.value("set_input", json(nullptr));
        r.merge_input = j.value("merge_input", json(nullptr));
        r.drop_input = j.value("drop_input", std::vector<std::string>{});
        r.raw = j.value("raw", "");
        r.raw_attempts = j.value("raw_attempts", 1);
        if (r.match_action.empty() && r.step_from < 1) throw FormatError("fault rule needs match_action or step_from");
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed fault rule: ") + e.what());
    }
}

json FaultRule::to_json() const {
    return {{"agent", agent},           {"step_from", step_from},   {"step_to", step_to},
            {"match_action", match_action}, {"occurrences", occurrences}, {"set_action", set_action},
            {"set_input", set_input},   {"merge_input", merge_input}, {"drop_input", drop_input},
            {"raw", raw},               {"raw_attempts", raw_attempts}};
}

FaultScript FaultScript::from_json(const json& j) {
    try {
        FaultScript s;
        s.name = j.value("name", "custom");
        s.fault_class = j.value("fault_class", "");
        for (const auto& r : j.at("rules")) s.rules.push_back(FaultRule::from_json(r));
        return s;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed fault script: ") + e.what());
    }
}

json FaultScript::to_json() const {
    json rules = json::array();
    for (const auto& r : this->rules) rules.push_back(r.to_json());
    return {{"name", name}, {"fault_class", fault_class}, {"rules", rules}};
}

std::vector<std::string> fault_preset_names() {
    std::vector<std::string> out;
    for (const auto& [name, _] : presets()) out.push_back(name);
    return out;
}

FaultScript fault_preset(const std::string& name) {
    const auto p = presets();
    const auto it = p.find(name);
    if (it == p.end()) throw PreconditionError("unknown fault script '" + name + "'");
    return FaultScript::from_json(it->second);
}

FaultyPlanner::FaultyPlanner(FaultScript script) : script_(std::move(script)) {}

PlannerResponse FaultyPlanner::complete(const PlannerRequest& request) {
    const auto& ctx = request.context;
    PlannerResponse r;
    if (ctx.value("kind", "") != "step") {
        r.text = MockPlanner::tool_answer(ctx);
    } else {
        const auto agent = ctx.value("agent", "");
        const int step = ctx.value("step", 0);
        const int attempt = ctx.value("attempt", 0);
        std::lock_guard lock(mu_);
        const auto key = std::make_pair(agent, step);
        auto it = decided_.find(key);
        if (it != decided_.end() && attempt == 0) decided_.erase(it), it = decided_.end();
        if (it == decided_.end()) {
            auto plan = parse_plan(MockPlanner::plan_text(ctx));
            const int occurrence = ++occurrences_[{agent, plan.action}];
            std::string text;
            for (const auto& rule : script_.rules) {
                if (rule.agent != "*" && rule.agent != agent) continue;
                const bool hit =
                    rule.match_action.empty()
                        ? (step >= rule.step_from && step <= rule.step_to)
                        : (rule.match_action == plan.action &&
                           (rule.occurrences.empty() ||
                            std::find(rule.occurrences.begin(), rule.occurrences.end(), occurrence) !=
                                rule.occurrences.end()));
                if (!hit) continue;
                if (!rule.raw.empty()) {
                    text = attempt < rule.raw_attempts ? rule.raw : std::string{};
                    break;
                }
                if (!rule.set_action.empty()) plan.action = rule.set_action;
                if (!rule.set_input.is_null()) plan.input = rule.set_input;
                if (!rule.merge_input.is_null()) deep_merge(plan.input, rule.merge_input);
                for (const auto& path : rule.drop_input) erase_path(plan.input, path);
            }
            decided_[key] = text.empty() ? render_plan(plan) : text;
            it = decided_.find(key);
        } else {
            // Re-prompt of a step already decided.
            for (const auto& rule : script_.rules) {
                if (rule.raw.empty() || (rule.agent != "*" && rule.agent != agent)) continue;
                if (rule.match_action.empty() && step >= rule.step_from && step <= rule.step_to &&
                    attempt >= rule.raw_attempts)
                    it->second = MockPlanner::plan_text(ctx);
            }
        }
        r.text = it->second;
    }
    r.input_tokens = estimate_tokens(request.messages);
    r.output_tokens = estimate_tokens(r.text);
    return r;
}

std::unique_ptr<Planner> make_planner(const std::string& spec) {
    if (spec == "mock") return std::make_unique<MockPlanner>();
    if (spec == "remote") return std::make_unique<RemotePlanner>(RemoteConfig::from_env());
    if (spec.rfind("faulty:", 0) == 0) {
        const auto name = spec.substr(7);
        if (name.size() > 5 && name.compare(name.size() - 5, 5, ".json") == 0) {
            std::ifstream in(name);
            if (!in) throw PreconditionError("cannot read fault script " + name);
            try {
                return std::make_unique<FaultyPlanner>(FaultScript::from_json(json::parse(in)));
            } catch (const json::exception& e) {
                throw FormatError("fault script " + name + " is not valid JSON: " + e.what());
            }
        }
        return std::make_unique<FaultyPlanner>(fault_preset(name));
    }
    throw PreconditionError("unknown planner '" + spec + "' (expected mock, remote or faulty:<script>)");
}

}  // namespace iaudit::agent
