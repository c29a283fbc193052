#include "iaudit/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "iaudit/errors.hpp"
#include "iaudit/random.hpp"

namespace iaudit::attacks {
namespace {

constexpr double kLogFloor = 1e-300;

double safe_log(double x) { return std::log(std::max(x, kLogFloor)); }

int argmax_row(const nn::Matrix& m, Eigen::Index r) {
    Eigen::Index best = 0;
    m.row(r).maxCoeff(&best);
    return static_cast<int>(best);
}

nn::TrainConfig fitted(nn::TrainConfig cfg, std::size_t n, nn::LossKind kind) {
    cfg.loss_kind = kind;
    cfg.batch_size = std::min<int>(cfg.batch_size, static_cast<int>(n));
    return cfg;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

template <class F>
AttackResult guarded(AttackKind kind, const std::string& metric, MeteredApi& api, F&& body) {
    AttackResult r;
    r.kind = kind;
    r.metric_name = metric;
    try {
        body(r);
    } catch (const BudgetExhausted& e) {
        r.partial = true;
        r.metric_value.reset();
        r.note = std::string("query budget exhausted mid-attack: ") + e.what();
    }
    r.queries = api.queries_used();
    return r;
}

}  // namespace

const char* to_string(AttackKind kind) {
    switch (kind) {
        case AttackKind::membership_inference: return "membership_inference";
        case AttackKind::model_stealing: return "model_stealing";
        case AttackKind::data_reconstruction: return "data_reconstruction";
        case AttackKind::attribute_inference: return "attribute_inference";
    }
    return "?";
}

AttackKind attack_kind_from_string(const std::string& name) {
    for (auto k : {AttackKind::membership_inference, AttackKind::model_stealing, AttackKind::data_reconstruction,
                   AttackKind::attribute_inference})
        if (name == to_string(k) || name == short_name(k)) return k;
    throw PreconditionError("unknown attack '" + name + "'");
}

const char* short_name(AttackKind kind) {
    switch (kind) {
        case AttackKind::membership_inference: return "MIA";
        case AttackKind::model_stealing: return "stealing";
        case AttackKind::data_reconstruction: return "reconstruction";
        case AttackKind::attribute_inference: return "attribute";
    }
    return "?";
}

nlohmann::json AttackResult::to_json() const {
    nlohmann::json j{{"attack", to_string(kind)},
                     {"metric", metric_name},
                     {"value", metric_value ? nlohmann::json(*metric_value) : nlohmann::json(nullptr)},
                     {"sub_results", sub_results},
                     {"artifacts", artifacts},
                     {"queries", queries},
                     {"partial", partial}};
    if (!note.empty()) j["note"] = note;
    return j;
}

AttackResult AttackResult::from_json(const nlohmann::json& j) {
    AttackResult r;
    r.kind = attack_kind_from_string(j.at("attack").get<std::string>());
    r.metric_name = j.at("metric").get<std::string>();
    if (!j.at("value").is_null()) r.metric_value = j["value"].get<double>();
    r.sub_results = j.value("sub_results", std::map<std::string, double>{});
    r.artifacts = j.value("artifacts", std::map<std::string, std::string>{});
    r.queries = j.value("queries", std::int64_t{0});
    r.partial = j.value("partial", false);
    r.note = j.value("note", std::string());
    return r;
}

nn::Matrix MeteredApi::predict(const nn::Matrix& inputs) {
    auto out = inner_.predict(inputs);
    used_ += inputs.rows();
    return out;
}

nn::Matrix MeteredApi::embed(const nn::Matrix& inputs) {
    auto out = inner_.embed(inputs);
    used_ += inputs.rows();
    return out;
}

void MemberSets::validate() const {
    if (members.rows() == 0) throw PreconditionError("member set is empty");
    if (members.rows() != nonmembers.rows())
        throw PreconditionError("member and non-member sets must be the same size (" +
                                std::to_string(members.rows()) + " vs " + std::to_string(nonmembers.rows()) + ")");
    if (static_cast<std::size_t>(members.rows()) != member_labels.size() ||
        static_cast<std::size_t>(nonmembers.rows()) != nonmember_labels.size())
        throw PreconditionError("member set labels do not match their inputs");
    if (members.cols() != nonmembers.cols()) throw PreconditionError("member sets differ in input width");
}

// ---- membership inference --------------------------------------------------

MiaData prepare_mia(const ShadowSpec& shadow, service::PredictionApi& api, const MemberSets& eval,
                    const std::filesystem::path& shadow_artifact) {
    eval.validate();
    const auto& d = shadow.dataset;
    if (d.size() < 4) throw PreconditionError("shadow dataset needs at least 4 rows");
    if (d.n_features() != eval.members.cols())
        throw PreconditionError("shadow inputs have width " + std::to_string(d.n_features()) + " but the service expects " +
                                std::to_string(eval.members.cols()));
    const std::string label = shadow.label.empty() ? d.task_label : shadow.label;
    const auto column = data::resolve_label(d, label);
    const auto& labels = column.values;
    const int classes = column.num_classes;

    Rng rng(mix_seed(shadow.train.seed, 0x5d));
    const auto order = rng.permutation(d.size());
    const std::size_t half = d.size() / 2;
    const std::vector<std::size_t> in_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
    const std::vector<std::size_t> out_rows(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());

    auto pick = [&](const std::vector<std::size_t>& rows) {
        std::vector<int> l;
        l.reserve(rows.size());
        for (auto r : rows) l.push_back(labels[r]);
        return l;
    };
    const nn::Matrix in_x = nn::select_rows(d.inputs, in_rows);
    const nn::Matrix out_x = nn::select_rows(d.inputs, out_rows);
    MiaData out;
    out.shadow_in.labels = pick(in_rows);
    out.shadow_out.labels = pick(out_rows);

    const auto sizes = shadow.architecture.layer_sizes(d.n_features(), classes);
    const auto cfg = fitted(shadow.train, in_rows.size(), nn::LossKind::hard_ce);
    auto model = nn::train(nn::init_model(sizes, mix_seed(cfg.seed, 0x5e)),
                           nn::Batch{in_x, nn::ClassTargets{out.shadow_in.labels}}, cfg)
                     .model;
    if (!shadow_artifact.empty())
        nn::save_model(shadow_artifact, model,
                       {{"role", "shadow"}, {"dataset", d.name}, {"label", label}, {"train_config", cfg.to_json()}});
    out.shadow_in.posteriors = nn::forward(model, in_x).posteriors;
    out.shadow_out.posteriors = nn::forward(model, out_x).posteriors;

    out.target_in = {api.predict(eval.members), eval.member_labels};
    out.target_out = {api.predict(eval.nonmembers), eval.nonmember_labels};
    return out;
}

nn::Matrix mia_features(const PosteriorSet& set, int width) {
    const auto& p = set.posteriors;
    nn::Matrix f = nn::Matrix::Zero(p.rows(), width + 1);
    std::vector<double> row;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        row.resize(static_cast<std::size_t>(p.cols()));
        for (Eigen::Index c = 0; c < p.cols(); ++c) row[static_cast<std::size_t>(c)] = p(r, c);
        std::sort(row.begin(), row.end(), std::greater<>());
        for (int c = 0; c < width && c < static_cast<int>(row.size()); ++c) f(r, c) = row[static_cast<std::size_t>(c)];
        const int y = set.labels[static_cast<std::size_t>(r)];
        f(r, width) = (y >= 0 && y < p.cols() && argmax_row(p, r) == y) ? 1.0 : 0.0;
    }
    return f;
}

double neural_mia_accuracy(const MiaData& data, std::uint64_t seed) {
    const int width = static_cast<int>(data.target_in.posteriors.cols());
    const nn::Matrix fin = mia_features(data.shadow_in, width);
    const nn::Matrix fout = mia_features(data.shadow_out, width);
    nn::Matrix x(fin.rows() + fout.rows(), width + 1);
    x << fin, fout;
    std::vector<int> y(static_cast<std::size_t>(fin.rows()), 1);
    y.resize(static_cast<std::size_t>(x.rows()), 0);

    nn::TrainConfig cfg;
    cfg.epochs = 80;
    cfg.seed = mix_seed(seed, 0xa7);
    cfg = fitted(cfg, y.size(), nn::LossKind::hard_ce);
    const std::vector<int> sizes{width + 1, 32, 32, 2};
    const auto model = nn::train(nn::init_model(sizes, cfg.seed), nn::Batch{x, nn::ClassTargets{y}}, cfg).model;

    const nn::Matrix tin = mia_features(data.target_in, width);
    const nn::Matrix tout = mia_features(data.target_out, width);
    nn::Matrix tx(tin.rows() + tout.rows(), width + 1);
    tx << tin, tout;
    std::vector<int> ty(static_cast<std::size_t>(tin.rows()), 1);
    ty.resize(static_cast<std::size_t>(tx.rows()), 0);
    return nn::evaluate(model, tx, ty);
}

const char* to_string(MiaMetric m) {
    switch (m) {
        case MiaMetric::correctness: return "correctness";
        case MiaMetric::confidence: return "confidence";
        case MiaMetric::entropy: return "entropy";
        case MiaMetric::modified_entropy: return "modified_entropy";
    }
    return "?";
}

std::vector<double> mia_scores(const PosteriorSet& set, MiaMetric metric) {
    const auto& p = set.posteriors;
    if (set.labels.size() != static_cast<std::size_t>(p.rows()))
        throw PreconditionError("posterior set labels do not match rows");
    std::vector<double> s(set.labels.size());
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const int y = set.labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= p.cols()) throw PreconditionError("label " + std::to_string(y) + " outside the posterior width");
        double v = 0.0;
        switch (metric) {
            case MiaMetric::correctness: v = argmax_row(p, r) == y ? 1.0 : 0.0; break;
            case MiaMetric::confidence: v = p(r, y); break;
            case MiaMetric::entropy:
                for (Eigen::Index c = 0; c < p.cols(); ++c) v += p(r, c) * safe_log(p(r, c));
                break;
            case MiaMetric::modified_entropy: {
                double m = -(1.0 - p(r, y)) * safe_log(p(r, y));
                for (Eigen::Index c = 0; c < p.cols(); ++c)
                    if (c != y) m -= p(r, c) * safe_log(1.0 - p(r, c));
                v = -m;
                break;
            }
        }
        s[static_cast<std::size_t>(r)] = v;
    }
    return s;
}

namespace {

// Best threshold by balanced accuracy over observed values; ties keep the lowest.
double sweep_threshold(std::vector<double> in, std::vector<double> out) {
    std::vector<std::pair<double, bool>> all;
    all.reserve(in.size() + out.size());
    for (double v : in) all.emplace_back(v, true);
    for (double v : out) all.emplace_back(v, false);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    const double n_in = static_cast<double>(in.size());
    const double n_out = static_cast<double>(out.size());
    double in_below = 0, out_below = 0;
    double best_t = all.front().first, best_acc = -1.0;
    for (std::size_t i = 0; i < all.size();) {
        const double t = all[i].first;
        const double acc = 0.5 * ((n_in - in_below) / n_in + out_below / n_out);
        if (acc > best_acc) {
            best_acc = acc;
            best_t = t;
        }
        for (; i < all.size() && all[i].first == t; ++i) (all[i].second ? in_below : out_below) += 1.0;
    }
    if (0.5 > best_acc) best_t = std::numeric_limits<double>::infinity();
    return best_t;
}

}  // namespace

double ThresholdRule::threshold_for(int label) const {
    const auto it = per_class.find(label);
    return it == per_class.end() ? global : it->second;
}

ThresholdRule fit_thresholds(const std::vector<double>& in_scores, const std::vector<int>& in_labels,
                             const std::vector<double>& out_scores, const std::vector<int>& out_labels) {
    if (in_scores.empty() || out_scores.empty()) throw PreconditionError("threshold fitting needs in and out samples");
    if (in_scores.size() != in_labels.size() || out_scores.size() != out_labels.size())
        throw PreconditionError("scores and labels differ in length");
    ThresholdRule rule;
    rule.global = sweep_threshold(in_scores, out_scores);
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_class;
    for (std::size_t i = 0; i < in_scores.size(); ++i) by_class[in_labels[i]].first.push_back(in_scores[i]);
    for (std::size_t i = 0; i < out_scores.size(); ++i) by_class[out_labels[i]].second.push_back(out_scores[i]);
    for (auto& [label, io] : by_class)
        if (!io.first.empty() && !io.second.empty()) rule.per_class[label] = sweep_threshold(io.first, io.second);
    return rule;
}

std::map<std::string, double> metric_mia_from_posteriors(const MiaData& data) {
    std::map<std::string, double> out;
    for (auto metric : {MiaMetric::correctness, MiaMetric::confidence, MiaMetric::entropy, MiaMetric::modified_entropy}) {
        const auto rule = fit_thresholds(mia_scores(data.shadow_in, metric), data.shadow_in.labels,
                                         mia_scores(data.shadow_out, metric), data.shadow_out.labels);
        const auto tin = mia_scores(data.target_in, metric);
        const auto tout = mia_scores(data.target_out, metric);
        double correct = 0;
        for (std::size_t i = 0; i < tin.size(); ++i)
            correct += tin[i] >= rule.threshold_for(data.target_in.labels[i]) ? 1 : 0;
        for (std::size_t i = 0; i < tout.size(); ++i)
            correct += tout[i] < rule.threshold_for(data.target_out.labels[i]) ? 1 : 0;
        out[to_string(metric)] = correct / static_cast<double>(tin.size() + tout.size());
    }
    return out;
}

AttackResult run_neural_mia(const ShadowSpec& shadow, service::PredictionApi& api, const MemberSets& eval) {
    eval.validate();
    MeteredApi metered(api);
    return guarded(AttackKind::membership_inference, "attack accuracy", metered, [&](AttackResult& r) {
        const auto data = prepare_mia(shadow, metered, eval);
        const double acc = neural_mia_accuracy(data, shadow.train.seed);
        r.sub_results["neural"] = acc;
        r.metric_value = acc;
    });
}

AttackResult run_metric_mia(const ShadowSpec& shadow, service::PredictionApi& api, const MemberSets& eval) {
    eval.validate();
    MeteredApi metered(api);
    return guarded(AttackKind::membership_inference, "attack accuracy", metered, [&](AttackResult& r) {
        r.sub_results = metric_mia_from_posteriors(prepare_mia(shadow, metered, eval));
        double best = 0.0;
        for (const auto& [k, v] : r.sub_results) best = std::max(best, v);
        r.metric_value = best;
    });
}

AttackResult run_membership_inference(const ShadowSpec& shadow, service::PredictionApi& api, const MemberSets& eval,
                                      const std::filesystem::path& workspace) {
    eval.validate();
    MeteredApi metered(api);
    return guarded(AttackKind::membership_inference, "attack accuracy", metered, [&](AttackResult& r) {
        std::filesystem::path artifact;
        if (!workspace.empty()) {
            artifact = workspace / "shadow_model.bin";
            r.artifacts["shadow_model"] = artifact.string();
        }
        const auto data = prepare_mia(shadow, metered, eval, artifact);
        r.sub_results = metric_mia_from_posteriors(data);
        r.sub_results["neural"] = neural_mia_accuracy(data, shadow.train.seed);
        double best = 0.0;
        for (const auto& [k, v] : r.sub_results) best = std::max(best, v);
        r.metric_value = best;
    });
}

// ---- model stealing ---------------------------------------------------------

const char* to_string(Selection s) {
    switch (s) {
        case Selection::none: return "none";
        case Selection::random: return "random";
        case Selection::importance: return "importance";
    }
    return "?";
}

Selection selection_from_string(const std::string& name) {
    for (auto s : {Selection::none, Selection::random, Selection::importance})
        if (name == to_string(s)) return s;
    throw PreconditionError("unknown selection strategy '" + name + "' (expected none, random or importance)");
}

SelectionResult random_select(const nn::Matrix& candidates, std::size_t n, std::uint64_t seed,
                              service::PredictionApi& api) {
    const auto total = static_cast<std::size_t>(candidates.rows());
    if (n == 0 || n > total)
        throw PreconditionError("cannot select " + std::to_string(n) + " of " + std::to_string(total) + " candidates");
    SelectionResult out;
    if (n == total) {
        out.indices = iota_indices(total);
    } else {
        Rng rng(mix_seed(seed, 0x52));
        auto order = rng.permutation(total);
        out.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    }
    out.posteriors = api.predict(nn::select_rows(candidates, out.indices));
    out.seed_count = n;
    return out;
}

SelectionResult importance_select(const nn::Matrix& candidates, std::size_t n, const registry::ModelRecord& proxy,
                                  const nn::TrainConfig& config, service::PredictionApi& api) {
    const auto total = static_cast<std::size_t>(candidates.rows());
    if (n == 0 || n > total)
        throw PreconditionError("cannot select " + std::to_string(n) + " of " + std::to_string(total) + " candidates");
    if (n == total) return random_select(candidates, n, config.seed, api);

    const std::size_t seeds = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(n))));
    Rng rng(mix_seed(config.seed, 0x49));
    const auto order = rng.permutation(total);
    SelectionResult out;
    out.seed_count = seeds;
    out.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(seeds));
    const nn::Matrix seed_x = nn::select_rows(candidates, out.indices);
    const nn::Matrix seed_p = api.predict(seed_x);

    std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(seeds), order.end());
    if (seeds < n) {
        const auto cfg = fitted(config, seeds, nn::LossKind::soft_ce);
        const auto sizes = proxy.layer_sizes(static_cast<int>(candidates.cols()), static_cast<int>(seed_p.cols()));
        const auto model =
            nn::train(nn::init_model(sizes, mix_seed(cfg.seed, 0x50)), nn::Batch{seed_x, nn::SoftTargets{seed_p}}, cfg)
                .model;
        const nn::Matrix p = nn::forward(model, nn::select_rows(candidates, rest)).posteriors;
        std::vector<double> margin(rest.size());
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            double a = -1, b = -1;
            for (Eigen::Index c = 0; c < p.cols(); ++c) {
                const double v = p(r, c);
                if (v > a) {
                    b = a;
                    a = v;
                } else if (v > b) {
                    b = v;
                }
            }
            margin[static_cast<std::size_t>(r)] = p.cols() > 1 ? a - b : 0.0;
        }
        auto rank = iota_indices(rest.size());
        std::stable_sort(rank.begin(), rank.end(), [&](std::size_t i, std::size_t j) { return margin[i] < margin[j]; });
        std::vector<std::size_t> chosen;
        for (std::size_t k = 0; k < n - seeds; ++k) chosen.push_back(rest[rank[k]]);
        const nn::Matrix chosen_p = api.predict(nn::select_rows(candidates, chosen));
        out.indices.insert(out.indices.end(), chosen.begin(), chosen.end());
        out.posteriors.resize(static_cast<Eigen::Index>(n), seed_p.cols());
        out.posteriors << seed_p, chosen_p;
    } else {
        out.posteriors = seed_p;
    }
    return out;
}

AttackResult run_model_stealing(const StealingSpec& spec, service::PredictionApi& api, const data::Dataset& eval,
                                const std::filesystem::path& surrogate_artifact) {
    const auto total = static_cast<std::size_t>(spec.shadow_inputs.rows());
    if (total == 0) throw PreconditionError("no shadow inputs to query");
    if (eval.size() == 0) throw PreconditionError("evaluation set is empty");
    if (spec.query_budget && *spec.query_budget < 1) throw PreconditionError("query budget must be positive");
    if (spec.selection == Selection::none && spec.query_budget && static_cast<std::int64_t>(total) > *spec.query_budget)
        throw PreconditionError("dataset_size " + std::to_string(total) + " exceeds the query budget of " +
                                std::to_string(*spec.query_budget) +
                                "; lower dataset_size or set selection_strategy to random or importance");
    MeteredApi metered(api);
    return guarded(AttackKind::model_stealing, "accuracy", metered, [&](AttackResult& r) {
        const std::size_t n = spec.query_budget ? std::min<std::size_t>(total, static_cast<std::size_t>(*spec.query_budget))
                                                : total;
        SelectionResult sel;
        switch (spec.selection) {
            case Selection::none:
            case Selection::random: sel = random_select(spec.shadow_inputs, n, spec.train.seed, metered); break;
            case Selection::importance:
                sel = importance_select(spec.shadow_inputs, n, spec.architecture, spec.train, metered);
                break;
        }
        const nn::Matrix x = nn::select_rows(spec.shadow_inputs, sel.indices);
        const auto cfg = fitted(spec.train, n, nn::LossKind::soft_ce);
        const auto sizes = spec.architecture.layer_sizes(static_cast<int>(x.cols()), static_cast<int>(sel.posteriors.cols()));
        const auto model =
            nn::train(nn::init_model(sizes, mix_seed(cfg.seed, 0x53)), nn::Batch{x, nn::SoftTargets{sel.posteriors}}, cfg)
                .model;
        if (!surrogate_artifact.empty()) {
            nn::save_model(surrogate_artifact, model,
                           {{"role", "surrogate"}, {"selection", to_string(spec.selection)}, {"rows", n}});
            r.artifacts["surrogate_model"] = surrogate_artifact.string();
        }
        const double acc = nn::evaluate(model, eval.inputs, eval.labels);
        r.sub_results["accuracy"] = acc;
        r.sub_results["training_rows"] = static_cast<double>(n);
        if (spec.selection == Selection::importance) r.sub_results["seed_rows"] = static_cast<double>(sel.seed_count);
        if (!spec.query_budget) {
            const auto target = metered.predict(eval.inputs);
            const auto mine = nn::predict_classes(model, eval.inputs);
            double agree = 0;
            for (Eigen::Index i = 0; i < target.rows(); ++i) agree += argmax_row(target, i) == mine[static_cast<std::size_t>(i)];
            r.sub_results["agreement"] = agree / static_cast<double>(target.rows());
        }
        r.metric_value = acc;
        r.note = std::string("selection strategy: ") + to_string(spec.selection);
    });
}

// ---- data reconstruction ----------------------------------------------------

nn::Matrix inversion_features(const nn::Matrix& posteriors) {
    nn::Matrix f = posteriors.unaryExpr([](double p) { return safe_log(p); });
    for (Eigen::Index r = 0; r < f.rows(); ++r) f.row(r).array() -= f.row(r).mean();
    return f;
}

AttackResult run_data_reconstruction(const ReconstructionSpec& spec, service::PredictionApi& api,
                                     const nn::Matrix& probe, const std::filesystem::path& inversion_artifact) {
    const auto& aux = spec.auxiliary_inputs;
    if (aux.rows() == 0) throw PreconditionError("auxiliary set is empty");
    if (probe.rows() == 0) throw PreconditionError("probe set is empty");
    if (probe.cols() != aux.cols()) throw PreconditionError("probe and auxiliary inputs differ in width");
    MeteredApi metered(api);
    return guarded(AttackKind::data_reconstruction, "mse", metered, [&](AttackResult& r) {
        const nn::Matrix f = inversion_features(metered.predict(aux));
        const auto cfg = fitted(spec.train, static_cast<std::size_t>(aux.rows()), nn::LossKind::mse);
        const auto sizes = spec.architecture.layer_sizes(static_cast<int>(f.cols()), static_cast<int>(aux.cols()));
        const auto model =
            nn::train(nn::init_model(sizes, mix_seed(cfg.seed, 0x49e)), nn::Batch{f, nn::RealTargets{aux}}, cfg).model;
        if (!inversion_artifact.empty()) {
            nn::save_model(inversion_artifact, model, {{"role", "inversion"}, {"rows", aux.rows()}});
            r.artifacts["inversion_model"] = inversion_artifact.string();
        }
        // Scoring only: the probe rows never reach training.
        const nn::Matrix guess = nn::forward(model, inversion_features(metered.predict(probe))).logits;
        const double mse = (guess - probe).squaredNorm() / static_cast<double>(probe.size());
        const nn::RowVector mean = aux.colwise().mean();
        const double baseline = (probe.rowwise() - mean).squaredNorm() / static_cast<double>(probe.size());
        r.sub_results["mse"] = mse;
        r.sub_results["baseline_mse"] = baseline;
        r.metric_value = mse;
    });
}

// ---- attribute inference ----------------------------------------------------

double majority_rate(const std::vector<int>& labels) {
    if (labels.empty()) throw PreconditionError("no labels");
    std::map<int, std::size_t> counts;
    for (int l : labels) ++counts[l];
    std::size_t best = 0;
    for (const auto& [k, c] : counts) best = std::max(best, c);
    return static_cast<double>(best) / static_cast<double>(labels.size());
}

AttackResult run_attribute_inference(const AttributeSpec& spec, service::PredictionApi& api,
                                     const data::Dataset& eval, const std::filesystem::path& artifact) {
    if (!api.has_embedding())
        throw InfeasibleAttack("attribute inference needs an embedding endpoint and the service exposes none");
    const auto* attr = spec.shadow.find_attribute(spec.attribute);
    if (!attr)
        throw PreconditionError("shadow dataset '" + spec.shadow.name + "' has no attribute '" + spec.attribute + "'");
    const auto* eval_attr = eval.find_attribute(spec.attribute);
    if (!eval_attr) throw PreconditionError("evaluation set has no attribute '" + spec.attribute + "'");
    if (spec.hidden_units < 1) throw PreconditionError("hidden_units must be positive");
    MeteredApi metered(api);
    return guarded(AttackKind::attribute_inference, "accuracy", metered, [&](AttackResult& r) {
        const nn::Matrix e = metered.embed(spec.shadow.inputs);
        const nn::RowVector mean = e.colwise().mean();
        const nn::RowVector scale =
            ((e.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(e.rows())).cwiseSqrt().array() + 1e-8;
        auto standardize = [&](const nn::Matrix& m) -> nn::Matrix {
            return (m.rowwise() - mean).array().rowwise() / scale.array();
        };
        const int classes = std::max(attr->num_classes, eval_attr->num_classes);
        const std::vector<int> sizes{static_cast<int>(e.cols()), spec.hidden_units, classes};
        const auto cfg = fitted(spec.train, spec.shadow.size(), nn::LossKind::hard_ce);
        const auto model =
            nn::train(nn::init_model(sizes, mix_seed(cfg.seed, 0xa1)), nn::Batch{standardize(e), nn::ClassTargets{attr->values}}, cfg)
                .model;
        if (!artifact.empty()) {
            nn::save_model(artifact, model, {{"role", "attribute_attack"}, {"attribute", spec.attribute}});
            r.artifacts["attack_model"] = artifact.string();
        }
        const double acc = nn::evaluate(model, standardize(metered.embed(eval.inputs)), eval_attr->values);
        r.sub_results["accuracy"] = acc;
        r.sub_results["majority_baseline"] = majority_rate(eval_attr->values);
        r.metric_value = acc;
    });
}

}  // namespace iaudit::attacks
