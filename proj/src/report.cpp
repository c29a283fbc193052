#include "iaudit/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "iaudit/actions.hpp"
#include "iaudit/errors.hpp"
#include "iaudit/provenance.hpp"
#include "iaudit/tasks.hpp"

namespace iaudit::report {

namespace fs = std::filesystem;
using nlohmann::json;
using attacks::AttackKind;

// ---- cost -------------------------------------------------------------------

namespace {

std::int64_t micro(double price) {
    const double m = std::round(price * 1e6);
    if (std::fabs(m - price * 1e6) > 1e-3) throw PreconditionError("prices are limited to 6 decimal places");
    return static_cast<std::int64_t>(m);
}

}  // namespace

void PriceTable::validate() const {
    if (!std::isfinite(input_per_million) || !std::isfinite(output_per_million))
        throw PreconditionError("prices must be finite");
    if (input_per_million < 0 || output_per_million < 0) throw PreconditionError("prices must be non-negative");
    if (currency.empty()) throw PreconditionError("price table needs a currency");
    micro(input_per_million);
    micro(output_per_million);
}

json PriceTable::to_json() const {
    return {{"input_per_million", input_per_million}, {"output_per_million", output_per_million}, {"currency", currency}};
}

PriceTable PriceTable::from_json(const json& j) {
    PriceTable p;
    try {
        p.input_per_million = j.at("input_per_million").get<double>();
        p.output_per_million = j.at("output_per_million").get<double>();
        p.currency = j.value("currency", p.currency);
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed price table: ") + e.what());
    }
    p.validate();
    return p;
}

PriceTable load_price_table(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot read price table " + path.string());
    try {
        return PriceTable::from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw FormatError("price table " + path.string() + " is not valid JSON: " + e.what());
    }
}

std::string Cost::rounded(int decimals) const {
    // Round half away from zero on the exact integer amount.
    std::int64_t unit = 1;
    for (int i = 0; i < 12 - decimals; ++i) unit *= 10;
    const std::int64_t q = (pico + unit / 2) / unit;
    std::int64_t scale = 1;
    for (int i = 0; i < decimals; ++i) scale *= 10;
    std::ostringstream out;
    out << q / scale;
    if (decimals > 0) out << "." << std::setw(decimals) << std::setfill('0') << q % scale;
    return out.str();
}

Cost cost_of_tokens(std::int64_t input_tokens, std::int64_t output_tokens, const PriceTable& prices) {
    prices.validate();
    if (input_tokens < 0 || output_tokens < 0) throw PreconditionError("token counts must be non-negative");
    return {input_tokens * micro(prices.input_per_million) + output_tokens * micro(prices.output_per_million)};
}

Cost cost_of(const std::vector<trace::TraceRecord>& trace, const PriceTable& prices) {
    std::int64_t in = 0, out = 0;
    for (const auto& r : trace) {
        in += r.input_tokens;
        out += r.output_tokens;
    }
    return cost_of_tokens(in, out, prices);
}

// ---- report -----------------------------------------------------------------

const char* to_string(RiskLevel r) {
    switch (r) {
        case RiskLevel::low: return "low";
        case RiskLevel::elevated: return "elevated";
        case RiskLevel::high: return "high";
        case RiskLevel::unknown: return "unknown";
    }
    return "?";
}

namespace {

std::optional<double> sub(const attacks::AttackResult& r, const char* key) {
    const auto it = r.sub_results.find(key);
    if (it == r.sub_results.end()) return std::nullopt;
    return it->second;
}

std::string fmt(double v, int digits = 3) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(digits) << v;
    return o.str();
}

std::string pretty(AttackKind k) {
    switch (k) {
        case AttackKind::membership_inference: return "Membership inference";
        case AttackKind::model_stealing: return "Model stealing";
        case AttackKind::data_reconstruction: return "Data reconstruction";
        case AttackKind::attribute_inference: return "Attribute inference";
    }
    return "?";
}

std::string explain(AttackKind k) {
    switch (k) {
        case AttackKind::membership_inference:
            return "An attacker who holds a record can tell whether it was part of the model's training data. "
                   "Accuracy 0.5 means guessing; higher values mean membership leaks.";
        case AttackKind::model_stealing:
            return "An attacker can train a copy of the model from its answers alone. Agreement is the share of "
                   "inputs on which the copy predicts the same class as the service.";
        case AttackKind::data_reconstruction:
            return "An attacker can approximate the inputs behind a prediction. Lower error means closer "
                   "reconstructions; the baseline is the error of always guessing the average input.";
        case AttackKind::attribute_inference:
            return "An attacker can read a sensitive property off the model's internal representation. The "
                   "baseline is the accuracy of always guessing the most common value.";
    }
    return {};
}

}  // namespace

RiskAssessment assess_risk(const attacks::AttackResult& r) {
    RiskAssessment a;
    if (r.partial && !r.metric_value && r.sub_results.empty()) {
        a.rationale = "the attack stopped before producing a measurement";
        return a;
    }
    switch (r.kind) {
        case AttackKind::membership_inference: {
            if (!r.metric_value) break;
            const double v = *r.metric_value;
            a.level = v > 0.75 ? RiskLevel::high : v > 0.6 ? RiskLevel::elevated : RiskLevel::low;
            a.rationale = "best attack accuracy " + fmt(v) + " (elevated above 0.6, high above 0.75)";
            return a;
        }
        case AttackKind::model_stealing: {
            const auto agree = sub(r, "agreement");
            const auto v = agree ? agree : r.metric_value;
            if (!v) break;
            a.level = *v > 0.8 ? RiskLevel::high : *v > 0.6 ? RiskLevel::elevated : RiskLevel::low;
            a.rationale = std::string(agree ? "agreement with the service " : "surrogate accuracy ") + fmt(*v) +
                          " (elevated above 0.6, high above 0.8)";
            return a;
        }
        case AttackKind::data_reconstruction: {
            const auto base = sub(r, "baseline_mse");
            if (!r.metric_value || !base) break;
            const double v = *r.metric_value;
            a.level = v < 0.5 * *base ? RiskLevel::high : v < *base ? RiskLevel::elevated : RiskLevel::low;
            a.rationale = "reconstruction error " + fmt(v, 4) + " against a baseline of " + fmt(*base, 4) +
                          " (elevated below the baseline, high below half of it)";
            return a;
        }
        case AttackKind::attribute_inference: {
            const auto base = sub(r, "majority_baseline");
            if (!r.metric_value || !base) break;
            const double gain = *r.metric_value - *base;
            a.level = gain > 0.25 ? RiskLevel::high : gain > 0.1 ? RiskLevel::elevated : RiskLevel::low;
            a.rationale = "accuracy " + fmt(*r.metric_value) + " against a majority baseline of " + fmt(*base) +
                          " (elevated 0.1 above the baseline, high 0.25 above)";
            return a;
        }
    }
    a.rationale = "no usable measurement";
    return a;
}

const std::string& risk_rubric() {
    static const std::string text =
        "| Attack | Elevated | High |\n"
        "|---|---|---|\n"
        "| Membership inference (best attack accuracy) | > 0.60 | > 0.75 |\n"
        "| Model stealing (agreement, else surrogate accuracy) | > 0.60 | > 0.80 |\n"
        "| Data reconstruction (MSE vs. mean-input baseline) | below baseline | below half the baseline |\n"
        "| Attribute inference (accuracy vs. majority baseline) | baseline + 0.10 | baseline + 0.25 |\n";
    return text;
}

const std::vector<std::string>& defenses(AttackKind kind) {
    static const std::map<AttackKind, std::vector<std::string>> catalog = {
        {AttackKind::membership_inference,
         {"Train with regularization (weight decay, dropout) or early stopping to narrow the train/test gap.",
          "Return only the top label, or coarsen and round the posteriors.",
          "Train with differential privacy when the data is sensitive."}},
        {AttackKind::model_stealing,
         {"Enforce per-client query budgets and rate limits.",
          "Return labels instead of full posteriors, or perturb the posteriors.",
          "Watch for query patterns that cover the input space unusually evenly."}},
        {AttackKind::data_reconstruction,
         {"Return fewer or rounded output values.", "Add noise to posteriors returned to untrusted clients.",
          "Train with differential privacy to limit what outputs reveal about inputs."}},
        {AttackKind::attribute_inference,
         {"Do not expose internal embeddings to untrusted clients.",
          "Train representations adversarially so the sensitive attribute cannot be predicted from them.",
          "Remove or decorrelate features tied to the sensitive attribute."}},
    };
    return catalog.at(kind);
}

json AttackSection::to_json() const {
    json j{{"attack", attacks::to_string(kind)}, {"agent", agent},     {"status", status},
           {"reason", reason},                   {"steps", steps},     {"process", process},
           {"summary", summary},                 {"result", nullptr}};
    if (result) j["result"] = result->to_json();
    return j;
}

AttackSection AttackSection::from_json(const json& j) {
    AttackSection s;
    s.kind = attacks::attack_kind_from_string(j.at("attack").get<std::string>());
    s.agent = j.value("agent", "");
    s.status = j.value("status", "");
    s.reason = j.value("reason", "");
    s.steps = j.value("steps", 0);
    s.process = j.value("process", json::object());
    s.summary = j.value("summary", "");
    if (j.contains("result") && !j["result"].is_null()) s.result = attacks::AttackResult::from_json(j["result"]);
    return s;
}

std::string render_report(const ReportInput& in) {
    std::ostringstream o;
    o << "# Privacy risk assessment\n\n";
    o << "Run: `" << in.run_id << "`  \n";
    o << "Outcome: " << (in.complete ? "complete" : "incomplete") << "  \n";
    if (!in.failure.empty()) o << "Failure: " << in.failure << "  \n";
    o << "Agent steps: " << in.total_steps << "  \n";
    if (in.cost) o << "Planner cost: " << in.cost->rounded(3) << " " << in.currency << "  \n";
    o << "\n## Target service\n\n";
    o << "- Task: " << in.service.task_description << "\n";
    o << "- Input: " << in.service.input_format << "\n";
    o << "- Output: " << in.service.output_format << "\n";
    o << "- Embedding access: " << (in.service.has_embedding() ? "yes" : "no") << "\n";
    if (!in.service.sensitive_attribute.empty()) o << "- Sensitive attribute: " << in.service.sensitive_attribute << "\n";
    if (in.service.query_budget) o << "- Query budget: " << *in.service.query_budget << "\n";

    if (!in.excluded.empty()) {
        o << "\n## Attacks not performed\n\n";
        for (const auto& [name, why] : in.excluded) o << "- " << name << ": " << why << "\n";
    }

    for (const auto& s : in.sections) {
        o << "\n## " << pretty(s.kind) << "\n\n";
        o << "### Target\n\n" << in.service.task_description << "\n\n";

        o << "### Attack process\n\n";
        if (s.process.contains("shadow_dataset")) o << "- Shadow data: " << s.process["shadow_dataset"].get<std::string>() << "\n";
        if (s.process.contains("model")) o << "- Architecture: " << s.process["model"].get<std::string>() << "\n";
        if (s.process.contains("parameters"))
            for (const auto& [k, v] : s.process["parameters"].items())
                if (k != "shadow_dataset_path" && k != "model") o << "- " << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
        o << "- Agent steps: " << s.steps << "\n\n";

        o << "### Results\n\n";
        if (s.status != "completed" || !s.result) {
            o << "The attack failed: " << (s.reason.empty() ? "no result was produced" : s.reason) << "\n\n";
        } else {
            const auto& r = *s.result;
            if (r.metric_value)
                o << "- " << r.metric_name << ": " << fmt(*r.metric_value, 4) << "\n";
            else
                o << "- " << r.metric_name << ": not measured\n";
            for (const auto& [k, v] : r.sub_results) o << "- " << k << ": " << fmt(v, 4) << "\n";
            o << "- queries used: " << r.queries << "\n";
            if (r.partial) o << "- the query budget ran out before the attack finished\n";
            if (!r.note.empty()) o << "- note: " << r.note << "\n";
            o << "\n";
        }

        o << "### What this means\n\n" << explain(s.kind) << "\n\n";
        if (s.result && s.status == "completed") {
            const auto risk = assess_risk(*s.result);
            o << "Risk: **" << to_string(risk.level) << "** (" << risk.rationale << ").\n\n";
        } else {
            o << "Risk: **unknown** (no measurement).\n\n";
        }

        o << "### Suggested defenses\n\n";
        for (const auto& d : defenses(s.kind)) o << "- " << d << "\n";
    }

    o << "\n## Risk rubric\n\n" << risk_rubric();
    return o.str();
}

json results_json(const ReportInput& in) {
    json sections = json::array();
    for (const auto& s : in.sections) {
        auto j = s.to_json();
        if (s.result && s.status == "completed") {
            const auto risk = assess_risk(*s.result);
            j["risk"] = {{"level", to_string(risk.level)}, {"rationale", risk.rationale}};
        }
        sections.push_back(std::move(j));
    }
    json excluded = json::array();
    for (const auto& [name, why] : in.excluded) excluded.push_back({{"attack", name}, {"reason", why}});
    json j{{"run", in.run_id},        {"complete", in.complete},      {"failure", in.failure},
           {"service", in.service.to_json()}, {"sections", sections}, {"excluded", excluded},
           {"total_steps", in.total_steps}};
    if (in.cost) j["cost"] = {{"amount", in.cost->amount()}, {"currency", in.currency}};
    return j;
}

// ---- runs -------------------------------------------------------------------

bool run_complete(const std::vector<trace::TraceRecord>& trace) {
    const trace::TraceRecord* controller_end = nullptr;
    std::map<std::string, std::string> agent_status;
    for (const auto& r : trace) {
        if (r.kind != "end") continue;
        if (r.role == "controller")
            controller_end = &r;
        else
            agent_status[r.agent] = r.extra.value("status", "");
    }
    if (!controller_end || controller_end->extra.value("status", "") != "completed") return false;
    const auto confirmed = controller_end->extra.value("confirmed", std::vector<std::string>{});
    for (const auto& a : confirmed) {
        const auto it = agent_status.find(a);
        if (it == agent_status.end() || it->second != "completed") return false;
    }
    return true;
}

CompletionStats completion_rate(const std::map<std::string, std::vector<std::vector<trace::TraceRecord>>>& by_target) {
    CompletionStats s;
    int total = 0, done = 0;
    for (const auto& [target, runs] : by_target) {
        if (runs.empty()) continue;
        int ok = 0;
        for (const auto& t : runs) ok += run_complete(t) ? 1 : 0;
        s.per_target[target] = static_cast<double>(ok) / static_cast<double>(runs.size());
        s.runs[target] = static_cast<int>(runs.size());
        total += static_cast<int>(runs.size());
        done += ok;
    }
    if (total == 0) throw PreconditionError("completion rate needs at least one trace");
    s.overall = static_cast<double>(done) / total;
    return s;
}

std::map<std::string, StepStats> summarize_steps(const std::vector<std::vector<trace::TraceRecord>>& traces) {
    std::map<std::string, StepStats> out;
    std::map<std::string, double> sums;
    for (const auto& t : traces) {
        for (const auto& r : t) {
            if (r.kind != "end" || r.role != "attacker") continue;
            const auto attack = r.extra.value("attack", r.agent);
            auto& s = out[attack];
            if (r.extra.value("status", "") != "completed") {
                ++s.incomplete;
                continue;
            }
            const int steps = r.step;
            s.min = s.runs == 0 ? steps : std::min(s.min, steps);
            s.max = s.runs == 0 ? steps : std::max(s.max, steps);
            ++s.runs;
            sums[attack] += steps;
        }
    }
    for (auto& [attack, s] : out)
        if (s.runs) s.mean = sums[attack] / s.runs;
    return out;
}

// ---- analyzer ---------------------------------------------------------------

int ErrorFindings::categories() const {
    return (bad_plan > 0) + (instruction_violation > 0) + (context_loss > 0) + (hallucination_type1 > 0) +
           (hallucination_type2 > 0) + (hallucination_type3 > 0) + dominant_flag();
}

json ErrorFindings::to_json() const {
    return {{"run", run},
            {"bad_plan", bad_plan},
            {"instruction_violation", instruction_violation},
            {"context_loss", context_loss},
            {"hallucination_type1", hallucination_type1},
            {"hallucination_type2", hallucination_type2},
            {"hallucination_type3", hallucination_type3},
            {"dominant_action_fraction", dominant_action_fraction},
            {"dominant_action_flag", dominant_flag()},
            {"dominant_agent", dominant_agent},
            {"dominant_action", dominant_action},
            {"notes", notes}};
}

trace::TraceRecord ErrorFindings::to_record() const {
    trace::TraceRecord r;
    r.run = run;
    r.agent = "analyzer";
    r.role = "analyzer";
    r.kind = "findings";
    r.extra = to_json();
    return r;
}

namespace {

bool is_error(const std::string& text) { return text.rfind("Error", 0) == 0; }

bool under_eval(const json& v) {
    if (v.is_string()) {
        auto s = v.get<std::string>();
        while (s.rfind("./", 0) == 0) s = s.substr(2);
        return s.rfind("eval/", 0) == 0;
    }
    if (v.is_object() || v.is_array())
        for (const auto& x : v)
            if (under_eval(x)) return true;
    return false;
}

}  // namespace

ErrorFindings analyze_trace(const std::vector<trace::TraceRecord>& trace, const trace::ObservationArchive& archive) {
    ErrorFindings f;
    if (!trace.empty()) f.run = trace.front().run;

    std::map<std::string, std::vector<const trace::TraceRecord*>> by_agent;
    std::vector<std::string> order;
    for (const auto& r : trace) {
        if (r.kind != "start" && r.kind != "step") continue;
        if (!by_agent.count(r.agent)) order.push_back(r.agent);
        by_agent[r.agent].push_back(&r);
    }

    auto note = [&](const std::string& agent, int step, const std::string& what) {
        f.notes.push_back(agent + " step " + std::to_string(step) + ": " + what);
    };

    for (const auto& agent : order) {
        std::vector<std::string> corpus;
        std::vector<std::pair<std::string, std::string>> digests;  // (digest, excerpt) per step
        std::map<std::string, int> action_counts;
        int steps = 0;
        for (const auto* r : by_agent[agent]) {
            if (r->kind == "start") {
                const auto d = r->extra.value("instruction_digest", "");
                if (auto text = archive.get(d)) corpus.push_back(*text);
                continue;
            }
            ++steps;
            const auto role = r->role == "controller" ? agent::Role::controller : agent::Role::attacker;
            const auto* spec = agent::find_action(role, r->action);

            if (r->has_flag("malformed_plan")) {
                ++f.instruction_violation;
                note(agent, r->step, "response did not follow the required format");
            } else if (!spec) {
                ++f.hallucination_type1;
                note(agent, r->step, "nonexistent action '" + r->action + "'");
            } else {
                ++action_counts[r->action];
                const auto schema = agent::check_action_input(*spec, r->action_input);
                if (!schema.empty()) {
                    ++f.instruction_violation;
                    note(agent, r->step, r->action + " input: " + schema.front());
                } else if (r->action == agent::act::execute_script) {
                    try {
                        tasks::normalize_parameters(tasks::task_manifest(r->action_input.at("script_name").get<std::string>()),
                                                    r->action_input.at("parameters"));
                    } catch (const std::exception& e) {
                        ++f.instruction_violation;
                        note(agent, r->step, std::string("script invoked against its manifest: ") + e.what());
                    }
                }
                if (r->action == agent::act::final_answer) {
                    const auto fabricated = agent::fabricated_numbers(r->action_input, corpus);
                    if (!fabricated.empty()) {
                        ++f.hallucination_type3;
                        note(agent, r->step, "reported value never observed: " + fabricated.front());
                    }
                } else {
                    const auto unverified = agent::unverified_values(*spec, r->action_input, corpus);
                    if (!unverified.empty()) {
                        ++f.hallucination_type2;
                        note(agent, r->step, "input without provenance: " + unverified.front());
                    }
                }
                if (under_eval(r->action_input)) {
                    ++f.bad_plan;
                    note(agent, r->step, "evaluation data used as attack input");
                }
            }
            if (r->has_flag("premature_final")) {
                ++f.bad_plan;
                note(agent, r->step, "final answer before every attack finished");
            }
            if (r->has_flag("monitor_without_agents")) {
                ++f.bad_plan;
                note(agent, r->step, "monitoring before any attack was launched");
            }
            if (r->role == "controller" && r->action == agent::act::final_answer && !r->has_flag("premature_final") &&
                r->extra.value("launched", 0) == 0 && r->extra.value("confirmed", 0) > 0) {
                ++f.bad_plan;
                note(agent, r->step, "assessment ended without running any confirmed attack");
            }

            std::string full = r->observation_excerpt;
            if (auto text = archive.get(r->observation_digest)) full = *text;
            digests.emplace_back(r->observation_digest, full);
            if (!is_error(full)) corpus.push_back(full);
        }

        std::map<std::pair<std::string, std::string>, int> pairs;
        for (std::size_t i = 0; i + 1 < digests.size(); ++i)
            if (is_error(digests[i].second)) ++pairs[{digests[i].first, digests[i + 1].first}];
        for (const auto& [p, n] : pairs) {
            if (n < 3) continue;
            ++f.context_loss;
            std::string text = p.first;
            for (const auto& [d, t] : digests)
                if (d == p.first) text = t.substr(0, t.find('\n'));
            note(agent, 0, "the same error and fix repeated " + std::to_string(n) + " times: " + text);
        }

        if (steps >= 5) {
            for (const auto& [action, n] : action_counts) {
                const double frac = static_cast<double>(n) / steps;
                if (frac > f.dominant_action_fraction) {
                    f.dominant_action_fraction = frac;
                    f.dominant_agent = agent;
                    f.dominant_action = action;
                }
            }
        }
    }
    if (f.dominant_flag())
        note(f.dominant_agent, 0,
             f.dominant_action + " makes up " + std::to_string(static_cast<int>(std::round(100 * f.dominant_action_fraction))) +
                 "% of the steps");
    return f;
}

}  // namespace iaudit::report
