#pragma once

// Black-box inference attacks against a prediction service: membership
// inference (neural and metric based), model stealing with optional query
// selection, data reconstruction by model inversion, and attribute inference
// from embeddings.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaudit/data.hpp"
#include "iaudit/nn.hpp"
#include "iaudit/registry.hpp"
#include "iaudit/service.hpp"

namespace iaudit::attacks {

enum class AttackKind { membership_inference, model_stealing, data_reconstruction, attribute_inference };
const char* to_string(AttackKind kind);
AttackKind attack_kind_from_string(const std::string& name);
// Short display name ("MIA", "stealing", ...).
const char* short_name(AttackKind kind);

struct AttackResult {
    AttackKind kind = AttackKind::membership_inference;
    std::string metric_name;
    std::optional<double> metric_value;  // absent when partial
    std::map<std::string, double> sub_results;
    std::map<std::string, std::string> artifacts;
    std::int64_t queries = 0;
    bool partial = false;
    std::string note;

    nlohmann::json to_json() const;
    static AttackResult from_json(const nlohmann::json& j);
};

// Counts the rows this pipeline has scored; budget errors propagate.
class MeteredApi final : public service::PredictionApi {
public:
    explicit MeteredApi(service::PredictionApi& inner) : inner_(inner) {}
    nn::Matrix predict(const nn::Matrix& inputs) override;
    nn::Matrix embed(const nn::Matrix& inputs) override;
    bool has_embedding() const override { return inner_.has_embedding(); }
    std::int64_t queries_used() const override { return used_; }

private:
    service::PredictionApi& inner_;
    std::int64_t used_ = 0;
};

// Labelled members (target training rows) and non-members of equal size.
struct MemberSets {
    nn::Matrix members;
    std::vector<int> member_labels;
    nn::Matrix nonmembers;
    std::vector<int> nonmember_labels;

    void validate() const;
};

// ---- membership inference --------------------------------------------------

struct PosteriorSet {
    nn::Matrix posteriors;
    std::vector<int> labels;
};

// Shadow in/out posteriors and target posteriors on members/non-members.
struct MiaData {
    PosteriorSet shadow_in;
    PosteriorSet shadow_out;
    PosteriorSet target_in;
    PosteriorSet target_out;
};

struct ShadowSpec {
    data::Dataset dataset;
    std::string label;  // empty = task label
    registry::ModelRecord architecture;
    nn::TrainConfig train;
};

// Trains the shadow model on one half of the shadow data and queries the
// service on the member sets. Optionally writes the shadow model.
MiaData prepare_mia(const ShadowSpec& shadow, service::PredictionApi& api, const MemberSets& eval,
                    const std::filesystem::path& shadow_artifact = {});

// Descending posteriors truncated or zero padded to `width`, then a correctness bit.
nn::Matrix mia_features(const PosteriorSet& set, int width);

double neural_mia_accuracy(const MiaData& data, std::uint64_t seed);

// Per-sample scores, larger = more member-like.
enum class MiaMetric { correctness, confidence, entropy, modified_entropy };
const char* to_string(MiaMetric m);
std::vector<double> mia_scores(const PosteriorSet& set, MiaMetric metric);

// Threshold per true class, fit on shadow scores; predict member iff score >= threshold.
struct ThresholdRule {
    std::map<int, double> per_class;
    double global = 0.0;
    double threshold_for(int label) const;
};
ThresholdRule fit_thresholds(const std::vector<double>& in_scores, const std::vector<int>& in_labels,
                             const std::vector<double>& out_scores, const std::vector<int>& out_labels);

// Accuracy of each of the four metrics on the balanced target sets.
std::map<std::string, double> metric_mia_from_posteriors(const MiaData& data);

AttackResult run_neural_mia(const ShadowSpec& shadow, service::PredictionApi& api, const MemberSets& eval);
AttackResult run_metric_mia(const ShadowSpec& shadow, service::PredictionApi& api, const MemberSets& eval);
// Both families on one set of queries; the metric is the best accuracy overall.
AttackResult run_membership_inference(const ShadowSpec& shadow, service::PredictionApi& api, const MemberSets& eval,
                                      const std::filesystem::path& workspace = {});

// ---- model stealing ---------------------------------------------------------

enum class Selection { none, random, importance };
const char* to_string(Selection s);
Selection selection_from_string(const std::string& name);

struct SelectionResult {
    std::vector<std::size_t> indices;  // into the candidate matrix, no duplicates
    nn::Matrix posteriors;             // service output for each selected row
    std::size_t seed_count = 0;
};

// Spends 20% of n on a random seed set, trains a proxy on it, then fills the rest
// with the candidates the proxy is least sure about (smallest top-2 margin).
SelectionResult importance_select(const nn::Matrix& candidates, std::size_t n, const registry::ModelRecord& proxy,
                                  const nn::TrainConfig& config, service::PredictionApi& api);
SelectionResult random_select(const nn::Matrix& candidates, std::size_t n, std::uint64_t seed,
                              service::PredictionApi& api);

struct StealingSpec {
    nn::Matrix shadow_inputs;
    registry::ModelRecord architecture;
    nn::TrainConfig train;
    Selection selection = Selection::none;
    std::optional<std::int64_t> query_budget;  // queries this attack may spend
};

// Surrogate accuracy on `eval`; agreement with the service is measured on
// `eval` only when no query budget is set.
AttackResult run_model_stealing(const StealingSpec& spec, service::PredictionApi& api, const data::Dataset& eval,
                                const std::filesystem::path& surrogate_artifact = {});

// ---- data reconstruction ----------------------------------------------------

// Centred log posteriors: the logits up to a per-row constant.
nn::Matrix inversion_features(const nn::Matrix& posteriors);

struct ReconstructionSpec {
    nn::Matrix auxiliary_inputs;
    registry::ModelRecord architecture;
    nn::TrainConfig train;
};

// probe rows are only scored, never trained on.
AttackResult run_data_reconstruction(const ReconstructionSpec& spec, service::PredictionApi& api,
                                     const nn::Matrix& probe, const std::filesystem::path& inversion_artifact = {});

// ---- attribute inference ----------------------------------------------------

struct AttributeSpec {
    data::Dataset shadow;
    std::string attribute;
    nn::TrainConfig train;
    int hidden_units = 64;
};

AttackResult run_attribute_inference(const AttributeSpec& spec, service::PredictionApi& api,
                                     const data::Dataset& eval, const std::filesystem::path& artifact = {});

// Rate of the most frequent value.
double majority_rate(const std::vector<int>& labels);

}  // namespace iaudit::attacks
