#pragma once

// Dense ReLU networks with softmax/linear heads, backprop and Adam.
// Used for target models, shadow models, surrogates, attack classifiers and
// inversion models alike.

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace iaudit::nn {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

enum class LossKind { hard_ce, soft_ce, mse };

const char* to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

// layer_sizes = {input, hidden..., output}. weights[l] is [layer_sizes[l] x layer_sizes[l+1]]
// so a batch X (rows = samples) maps to X * W + b. Hidden layers use ReLU; the
// output layer is linear.
struct Model {
    std::vector<int> layer_sizes;
    std::vector<Matrix> weights;
    std::vector<RowVector> biases;
    std::uint64_t seed = 0;

    std::size_t num_layers() const { return layer_sizes.size(); }
    int input_width() const { return layer_sizes.front(); }
    int output_width() const { return layer_sizes.back(); }
    std::size_t parameter_count() const;
    bool all_finite() const;
};

Model init_model(std::span<const int> layer_sizes, std::uint64_t seed);

struct ForwardResult {
    Matrix logits;
    std::vector<Matrix> hidden;  // hidden[i] = post-ReLU activation of layer i+1
    Matrix posteriors;
};

ForwardResult forward(const Model& model, const Matrix& inputs);

// Row-wise numerically stable softmax.
Matrix softmax_rows(const Matrix& logits);

struct ClassTargets {
    std::vector<int> labels;
};
struct SoftTargets {
    Matrix probs;
};
struct RealTargets {
    Matrix values;
};
using Targets = std::variant<ClassTargets, SoftTargets, RealTargets>;

struct Batch {
    Matrix inputs;
    Targets targets;

    std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
};

Batch select_rows(const Batch& data, std::span<const std::size_t> rows);
Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows);

struct Gradients {
    std::vector<Matrix> weights;
    std::vector<RowVector> biases;
};

struct LossAndGrads {
    double loss = 0.0;
    Gradients grads;
};

// Mean loss over the batch. hard_ce needs ClassTargets, soft_ce SoftTargets,
// mse RealTargets (mse = mean over all output elements).
LossAndGrads loss_and_grads(const Model& model, const Batch& batch, LossKind kind);

// Loss only, no backward pass.
double loss_value(const Model& model, const Batch& batch, LossKind kind);

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 64;
    int epochs = 300;
    LossKind loss_kind = LossKind::hard_ce;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate(std::size_t dataset_size) const;
    nlohmann::json to_json() const;
};

struct TrainResult {
    Model model;
    std::vector<double> loss_history;  // mean training loss per epoch
};

// Mini-batch Adam. Batch order is reshuffled every epoch from config.seed.
// Throws NumericError if the loss goes non-finite.
TrainResult train(Model model, const Batch& data, const TrainConfig& config);

std::vector<int> predict_classes(const Model& model, const Matrix& inputs);

double evaluate(const Model& model, const Matrix& inputs, std::span<const int> labels);

// Post-ReLU activation of hidden layer `layer_index` (1 .. num_layers-2).
Matrix embed(const Model& model, const Matrix& inputs, std::size_t layer_index);
Matrix embed(const Model& model, const Matrix& inputs);  // penultimate layer

void save_model(const std::filesystem::path& path, const Model& model,
                const nlohmann::json& lineage = nlohmann::json::object());
Model load_model(const std::filesystem::path& path, nlohmann::json* lineage = nullptr);

}  // namespace iaudit::nn
