#include "iaudit/nn.hpp"

#include <cmath>
#include <string>

#include "iaudit/container.hpp"
#include "iaudit/errors.hpp"
#include "iaudit/random.hpp"

namespace iaudit::nn {
namespace {

Matrix relu(const Matrix& z) { return z.cwiseMax(0.0); }

// Row-wise log-softmax.
Matrix log_softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
        out.row(r) = logits.row(r).array() - lse;
    }
    return out;
}

struct Activations {
    std::vector<Matrix> pre;   // pre[l] = Z_{l+1}
    std::vector<Matrix> post;  // post[0] = inputs, post[l] = A_l
};

Activations run(const Model& model, const Matrix& inputs) {
    if (inputs.cols() != model.input_width())
        throw PreconditionError("input width " + std::to_string(inputs.cols()) + " does not match model input " +
                                std::to_string(model.input_width()));
    Activations act;
    act.post.push_back(inputs);
    const std::size_t n_weights = model.weights.size();
    for (std::size_t l = 0; l < n_weights; ++l) {
        Matrix z = act.post.back() * model.weights[l];
        z.rowwise() += model.biases[l];
        act.pre.push_back(z);
        if (l + 1 < n_weights) act.post.push_back(relu(z));
    }
    return act;
}

void check_targets(const Batch& batch, LossKind kind, int out_width) {
    const auto n = batch.inputs.rows();
    if (n < 1) throw PreconditionError("batch must contain at least one row");
    switch (kind) {
        case LossKind::hard_ce: {
            const auto* t = std::get_if<ClassTargets>(&batch.targets);
            if (!t) throw PreconditionError("hard-CE loss requires class-index targets");
            if (static_cast<Eigen::Index>(t->labels.size()) != n)
                throw PreconditionError("label count does not match batch size");
            for (int y : t->labels)
                if (y < 0 || y >= out_width) throw PreconditionError("class label out of range");
            break;
        }
        case LossKind::soft_ce: {
            const auto* t = std::get_if<SoftTargets>(&batch.targets);
            if (!t) throw PreconditionError("soft-CE loss requires soft-label targets");
            if (t->probs.rows() != n || t->probs.cols() != out_width)
                throw PreconditionError("soft target shape does not match batch/output");
            break;
        }
        case LossKind::mse: {
            const auto* t = std::get_if<RealTargets>(&batch.targets);
            if (!t) throw PreconditionError("MSE loss requires real-valued targets");
            if (t->values.rows() != n || t->values.cols() != out_width)
                throw PreconditionError("regression target shape does not match batch/output");
            break;
        }
    }
}

// Loss and dL/dlogits for the given head.
std::pair<double, Matrix> head_loss(const Matrix& logits, const Batch& batch, LossKind kind, bool want_grad) {
    const double n = static_cast<double>(logits.rows());
    Matrix grad;
    double loss = 0.0;
    switch (kind) {
        case LossKind::hard_ce: {
            const auto& labels = std::get<ClassTargets>(batch.targets).labels;
            const Matrix logp = log_softmax_rows(logits);
            for (Eigen::Index r = 0; r < logits.rows(); ++r) loss -= logp(r, labels[static_cast<std::size_t>(r)]);
            loss /= n;
            if (want_grad) {
                grad = logp.array().exp();
                for (Eigen::Index r = 0; r < logits.rows(); ++r) grad(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
                grad /= n;
            }
            break;
        }
        case LossKind::soft_ce: {
            const auto& t = std::get<SoftTargets>(batch.targets).probs;
            const Matrix logp = log_softmax_rows(logits);
            loss = -(t.array() * logp.array()).sum() / n;
            if (want_grad) {
                const Matrix p = logp.array().exp();
                const Eigen::VectorXd mass = t.rowwise().sum();
                grad = p.array().colwise() * mass.array();
                grad -= t;
                grad /= n;
            }
            break;
        }
        case LossKind::mse: {
            const auto& v = std::get<RealTargets>(batch.targets).values;
            const Matrix diff = logits - v;
            const double count = static_cast<double>(diff.size());
            loss = diff.squaredNorm() / count;
            if (want_grad) grad = 2.0 * diff / count;
            break;
        }
    }
    if (!std::isfinite(loss)) throw NumericError("non-finite loss encountered");
    return {loss, grad};
}

}  // namespace

const char* to_string(LossKind kind) {
    switch (kind) {
        case LossKind::hard_ce: return "hard_ce";
        case LossKind::soft_ce: return "soft_ce";
        case LossKind::mse: return "mse";
    }
    return "?";
}

LossKind loss_kind_from_string(const std::string& name) {
    if (name == "hard_ce") return LossKind::hard_ce;
    if (name == "soft_ce") return LossKind::soft_ce;
    if (name == "mse") return LossKind::mse;
    throw PreconditionError("unknown loss kind '" + name + "'");
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
        n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
}

bool Model::all_finite() const {
    for (std::size_t l = 0; l < weights.size(); ++l)
        if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
    return true;
}

Model init_model(std::span<const int> layer_sizes, std::uint64_t seed) {
    if (layer_sizes.size() < 2) throw PreconditionError("a model needs at least 2 layers (input and output)");
    for (int s : layer_sizes)
        if (s < 1) throw PreconditionError("layer sizes must be positive");
    Model m;
    m.layer_sizes.assign(layer_sizes.begin(), layer_sizes.end());
    m.seed = seed;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        const int fan_in = layer_sizes[l];
        const int fan_out = layer_sizes[l + 1];
        const double bound = std::sqrt(6.0 / fan_in);
        Matrix w(fan_in, fan_out);
        for (int r = 0; r < fan_in; ++r)
            for (int c = 0; c < fan_out; ++c) w(r, c) = rng.uniform(-bound, bound);
        m.weights.push_back(std::move(w));
        m.biases.push_back(RowVector::Zero(fan_out));
    }
    return m;
}

Matrix softmax_rows(const Matrix& logits) { return log_softmax_rows(logits).array().exp(); }

ForwardResult forward(const Model& model, const Matrix& inputs) {
    auto act = run(model, inputs);
    ForwardResult out;
    out.logits = std::move(act.pre.back());
    out.hidden.assign(act.post.begin() + 1, act.post.end());
    out.posteriors = softmax_rows(out.logits);
    return out;
}

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

Batch select_rows(const Batch& data, std::span<const std::size_t> rows) {
    Batch out;
    out.inputs = select_rows(data.inputs, rows);
    std::visit(
        [&](const auto& t) {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, ClassTargets>) {
                ClassTargets ct;
                ct.labels.reserve(rows.size());
                for (auto r : rows) ct.labels.push_back(t.labels[r]);
                out.targets = std::move(ct);
            } else if constexpr (std::is_same_v<T, SoftTargets>) {
                out.targets = SoftTargets{select_rows(t.probs, rows)};
            } else {
                out.targets = RealTargets{select_rows(t.values, rows)};
            }
        },
        data.targets);
    return out;
}

LossAndGrads loss_and_grads(const Model& model, const Batch& batch, LossKind kind) {
    check_targets(batch, kind, model.output_width());
    const auto act = run(model, batch.inputs);
    auto [loss, delta] = head_loss(act.pre.back(), batch, kind, true);

    LossAndGrads out;
    out.loss = loss;
    const std::size_t n_weights = model.weights.size();
    out.grads.weights.resize(n_weights);
    out.grads.biases.resize(n_weights);
    for (std::size_t l = n_weights; l-- > 0;) {
        out.grads.weights[l] = act.post[l].transpose() * delta;
        out.grads.biases[l] = delta.colwise().sum();
        if (l > 0) {
            Matrix upstream = delta * model.weights[l].transpose();
            delta = upstream.array() * (act.pre[l - 1].array() > 0.0).cast<double>();
        }
        if (!out.grads.weights[l].allFinite() || !out.grads.biases[l].allFinite())
            throw NumericError("non-finite gradient in layer " + std::to_string(l));
    }
    return out;
}

double loss_value(const Model& model, const Batch& batch, LossKind kind) {
    check_targets(batch, kind, model.output_width());
    const auto act = run(model, batch.inputs);
    return head_loss(act.pre.back(), batch, kind, false).first;
}

void TrainConfig::validate(std::size_t dataset_size) const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw PreconditionError("learning_rate must be > 0");
    if (batch_size < 1) throw PreconditionError("batch_size must be >= 1");
    if (epochs < 1) throw PreconditionError("epochs must be >= 1");
    if (dataset_size == 0) throw PreconditionError("training dataset is empty");
    if (static_cast<std::size_t>(batch_size) > dataset_size)
        throw PreconditionError("batch_size " + std::to_string(batch_size) + " exceeds dataset size " +
                                std::to_string(dataset_size));
}

nlohmann::json TrainConfig::to_json() const {
    return {{"learning_rate", learning_rate}, {"batch_size", batch_size}, {"epochs", epochs},
            {"loss", to_string(loss_kind)},   {"seed", seed},             {"optimizer", "adam"}};
}

TrainResult train(Model model, const Batch& data, const TrainConfig& config) {
    config.validate(data.size());
    check_targets(data, config.loss_kind, model.output_width());

    const std::size_t n_weights = model.weights.size();
    std::vector<Matrix> mw, vw;
    std::vector<RowVector> mb, vb;
    for (std::size_t l = 0; l < n_weights; ++l) {
        mw.push_back(Matrix::Zero(model.weights[l].rows(), model.weights[l].cols()));
        vw.push_back(mw.back());
        mb.push_back(RowVector::Zero(model.biases[l].size()));
        vb.push_back(mb.back());
    }

    Rng rng(config.seed);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const auto bs = static_cast<std::size_t>(config.batch_size);

    TrainResult result;
    long long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t stop = std::min(order.size(), start + bs);
            const auto mini = select_rows(data, std::span(order).subspan(start, stop - start));
            LossAndGrads lg;
            try {
                lg = loss_and_grads(model, mini, config.loss_kind);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ": " + e.what());
            }
            epoch_loss += lg.loss * static_cast<double>(stop - start);

            ++step;
            const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
            for (std::size_t l = 0; l < n_weights; ++l) {
                const auto& gw = lg.grads.weights[l];
                const auto& gb = lg.grads.biases[l];
                mw[l] = config.beta1 * mw[l] + (1.0 - config.beta1) * gw;
                vw[l] = config.beta2 * vw[l] + (1.0 - config.beta2) * gw.cwiseProduct(gw);
                mb[l] = config.beta1 * mb[l] + (1.0 - config.beta1) * gb;
                vb[l] = config.beta2 * vb[l] + (1.0 - config.beta2) * gb.cwiseProduct(gb);
                model.weights[l].array() -=
                    config.learning_rate * (mw[l].array() / c1) / ((vw[l].array() / c2).sqrt() + config.epsilon);
                model.biases[l].array() -=
                    config.learning_rate * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + config.epsilon);
            }
        }
        epoch_loss /= static_cast<double>(order.size());
        if (!std::isfinite(epoch_loss) || !model.all_finite())
            throw NumericError("training diverged at epoch " + std::to_string(epoch + 1));
        result.loss_history.push_back(epoch_loss);
    }
    result.model = std::move(model);
    return result;
}

std::vector<int> predict_classes(const Model& model, const Matrix& inputs) {
    const auto logits = forward(model, inputs).logits;
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        Eigen::Index arg = 0;
        logits.row(r).maxCoeff(&arg);
        out[static_cast<std::size_t>(r)] = static_cast<int>(arg);
    }
    return out;
}

double evaluate(const Model& model, const Matrix& inputs, std::span<const int> labels) {
    if (inputs.rows() == 0) throw PreconditionError("cannot evaluate on an empty dataset");
    if (static_cast<std::size_t>(inputs.rows()) != labels.size())
        throw PreconditionError("label count does not match input rows");
    const auto pred = predict_classes(model, inputs);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

Matrix embed(const Model& model, const Matrix& inputs, std::size_t layer_index) {
    if (layer_index == 0 || layer_index + 1 >= model.num_layers())
        throw PreconditionError("embedding layer index " + std::to_string(layer_index) +
                                " is not a hidden layer of this model");
    auto act = run(model, inputs);
    return act.post[layer_index];
}

Matrix embed(const Model& model, const Matrix& inputs) {
    if (model.num_layers() < 3) throw PreconditionError("model has no hidden layer to embed from");
    return embed(model, inputs, model.num_layers() - 2);
}

void save_model(const std::filesystem::path& path, const Model& model, const nlohmann::json& lineage) {
    Container c;
    c.kind = "model";
    c.meta = {{"layer_sizes", model.layer_sizes},
              {"seed", model.seed},
              {"activation", "relu"},
              {"output", "linear"},
              {"lineage", lineage}};
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        c.add("weight." + std::to_string(l), model.weights[l]);
        c.add("bias." + std::to_string(l), Matrix(model.biases[l]));
    }
    write_container(path, c);
}

Model load_model(const std::filesystem::path& path, nlohmann::json* lineage) {
    const Container c = read_container(path);
    if (c.kind != "model") throw FormatError("'" + path.string() + "' holds a " + c.kind + ", not a model");
    Model m;
    try {
        m.layer_sizes = c.meta.at("layer_sizes").get<std::vector<int>>();
        m.seed = c.meta.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model metadata incomplete: ") + e.what());
    }
    if (m.layer_sizes.size() < 2) throw FormatError("model artifact has fewer than 2 layers");
    for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
        Matrix w = c.matrix("weight." + std::to_string(l));
        Matrix b = c.matrix("bias." + std::to_string(l));
        if (w.rows() != m.layer_sizes[l] || w.cols() != m.layer_sizes[l + 1] || b.rows() != 1 ||
            b.cols() != m.layer_sizes[l + 1])
            throw FormatError("parameter shapes in '" + path.string() + "' do not match layer sizes");
        m.weights.push_back(std::move(w));
        m.biases.push_back(b.row(0));
    }
    if (!m.all_finite()) throw FormatError("model artifact contains non-finite parameters");
    if (lineage) *lineage = c.meta.value("lineage", nlohmann::json::object());
    return m;
}

}  // namespace iaudit::nn
