#include "iaudit/service.hpp"

#include <algorithm>
#include <climits>
#include <regex>

#include <httplib.h>

#include "iaudit/errors.hpp"
#include "iaudit/random.hpp"

namespace iaudit::service {
namespace {

struct ParsedUrl {
    std::string origin;  // scheme://host:port
    std::string path;
};

ParsedUrl parse_url(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw ServiceError("malformed service URL '" + url + "'");
    return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

WireError error(int status, std::string code, std::string message) {
    return WireError{status, std::move(code), std::move(message), std::nullopt};
}

}  // namespace

const char* to_string(Endpoint e) { return e == Endpoint::predict ? "predict" : "embedding"; }

QueryLedger::QueryLedger(std::optional<std::int64_t> budget) : budget_(budget) {
    if (budget_ && *budget_ < 1) throw PreconditionError("query budget must be >= 1 when set");
}

QueryLedger::Decision QueryLedger::try_consume(std::int64_t n, Endpoint endpoint) {
    if (n < 1) throw PreconditionError("a query must score at least one input");
    std::lock_guard lock(mutex_);
    if (budget_ && used_ + n > *budget_) return Decision::refuse;
    used_ += n;
    per_endpoint_[endpoint] += n;
    return Decision::admit;
}

std::int64_t QueryLedger::used() const {
    std::lock_guard lock(mutex_);
    return used_;
}

std::int64_t QueryLedger::used(Endpoint endpoint) const {
    std::lock_guard lock(mutex_);
    const auto it = per_endpoint_.find(endpoint);
    return it == per_endpoint_.end() ? 0 : it->second;
}

std::int64_t QueryLedger::remaining() const {
    std::lock_guard lock(mutex_);
    return budget_ ? *budget_ - used_ : INT64_MAX;
}

void ServiceConfig::validate() const {
    if (query_budget && *query_budget < 1) throw PreconditionError("query budget must be >= 1 when set");
    if (port < 0 || port > 65535) throw PreconditionError("port out of range");
}

nlohmann::json WireError::to_json() const {
    nlohmann::json j{{"error", code}, {"message", message}};
    if (remaining_budget) j["remaining_budget"] = *remaining_budget;
    return j;
}

TargetService::TargetService(nn::Model model, bool expose_embedding, std::optional<std::int64_t> budget)
    : model_(std::move(model)), expose_embedding_(expose_embedding), ledger_(budget) {
    if (expose_embedding_ && model_.num_layers() < 3)
        throw PreconditionError("embedding endpoint requires a model with a hidden layer");
}

std::unique_ptr<TargetService> TargetService::from_config(const ServiceConfig& config) {
    config.validate();
    return std::make_unique<TargetService>(nn::load_model(config.model_path), config.expose_embedding,
                                           config.query_budget);
}

std::optional<WireError> TargetService::admit(const nn::Matrix& inputs, Endpoint endpoint) {
    if (inputs.rows() < 1) return error(400, "bad_request", "request contains no input rows");
    if (inputs.cols() != model_.input_width())
        return error(400, "dimension_mismatch",
                     "each input row must have " + std::to_string(model_.input_width()) + " values");
    if (!inputs.allFinite()) return error(400, "bad_request", "inputs must be finite numbers");
    if (ledger_.try_consume(inputs.rows(), endpoint) == QueryLedger::Decision::refuse) {
        auto e = error(429, "budget_exhausted", "query budget exhausted; request not scored");
        e.remaining_budget = ledger_.remaining();
        return e;
    }
    return std::nullopt;
}

WireResult TargetService::handle_predict(const nn::Matrix& inputs) {
    if (auto e = admit(inputs, Endpoint::predict)) return *e;
    return nn::forward(model_, inputs).posteriors;
}

WireResult TargetService::handle_embedding(const nn::Matrix& inputs) {
    if (!expose_embedding_) return error(404, "not_found", "this service does not expose an embedding endpoint");
    if (auto e = admit(inputs, Endpoint::embedding)) return *e;
    return nn::embed(model_, inputs);
}

std::pair<int, nlohmann::json> TargetService::handle_json(Endpoint endpoint, const std::string& body) {
    if (endpoint == Endpoint::embedding && !expose_embedding_)
        return {404, error(404, "not_found", "this service does not expose an embedding endpoint").to_json()};
    nn::Matrix inputs;
    try {
        const auto j = nlohmann::json::parse(body);
        inputs = matrix_from_json(j.at("inputs"));
    } catch (const std::exception& e) {
        return {400, error(400, "bad_request", std::string("expected {\"inputs\": [[numbers]]}: ") + e.what())
                         .to_json()};
    }
    const auto result = endpoint == Endpoint::predict ? handle_predict(inputs) : handle_embedding(inputs);
    if (const auto* err = std::get_if<WireError>(&result)) return {err->http_status, err->to_json()};
    const char* field = endpoint == Endpoint::predict ? "posteriors" : "embeddings";
    return {200, nlohmann::json{{field, matrix_to_json(std::get<nn::Matrix>(result))}}};
}

ServiceHandle::ServiceHandle(std::shared_ptr<TargetService> service, const std::string& host, int port)
    : service_(std::move(service)), server_(std::make_unique<httplib::Server>()), host_(host) {
    // SO_REUSEADDR only: a second service on the same port must fail, not share it.
    server_->set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    auto route = [this](Endpoint ep) {
        return [this, ep](const httplib::Request& req, httplib::Response& res) {
            auto [status, body] = service_->handle_json(ep, req.body);
            res.status = status;
            res.set_content(body.dump(), "application/json");
        };
    };
    server_->Post("/predict", route(Endpoint::predict));
    server_->Post("/embedding", route(Endpoint::embedding));
    server_->Get("/health", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"status":"ok"})", "application/json");
    });
    if (port == 0) {
        port_ = server_->bind_to_any_port(host);
        if (port_ <= 0) throw ServiceError("could not bind any port on " + host);
    } else {
        if (!server_->bind_to_port(host, port)) throw ServiceError("port " + std::to_string(port) + " is busy");
        port_ = port;
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

ServiceHandle::~ServiceHandle() { stop(); }

void ServiceHandle::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

std::string ServiceHandle::base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }

std::unique_ptr<ServiceHandle> serve(const ServiceConfig& config) {
    std::shared_ptr<TargetService> svc = TargetService::from_config(config);
    return std::make_unique<ServiceHandle>(std::move(svc), config.host, config.port);
}

std::unique_ptr<ServiceHandle> serve(std::shared_ptr<TargetService> service, const std::string& host, int port) {
    return std::make_unique<ServiceHandle>(std::move(service), host, port);
}

void raise(const WireError& e) {
    if (e.code == "budget_exhausted") throw BudgetExhausted(e.message, e.remaining_budget.value_or(0));
    if (e.code == "not_found") throw InfeasibleAttack("service endpoint not available: " + e.message);
    if (e.code == "dimension_mismatch" || e.code == "bad_request") throw PreconditionError(e.message);
    throw ServiceError(e.code + ": " + e.message);
}

nlohmann::json matrix_to_json(const nn::Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

nn::Matrix matrix_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw FormatError("matrix must be an array of rows");
    if (j.empty()) return nn::Matrix(0, 0);
    const auto cols = j.front().size();
    nn::Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (!j[r].is_array() || j[r].size() != cols) throw FormatError("matrix rows must have equal length");
        for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
    return m;
}

HttpClient::HttpClient(std::string predict_url, std::string embedding_url, std::size_t chunk_rows)
    : predict_url_(std::move(predict_url)), embedding_url_(std::move(embedding_url)), chunk_rows_(chunk_rows) {
    parse_url(predict_url_);
    if (!embedding_url_.empty()) parse_url(embedding_url_);
    if (chunk_rows_ == 0) throw PreconditionError("chunk size must be positive");
}

nn::Matrix HttpClient::call(const std::string& url, const char* field, const nn::Matrix& inputs) {
    const auto parsed = parse_url(url);
    httplib::Client client(parsed.origin);
    client.set_connection_timeout(5);
    client.set_read_timeout(120);
    nn::Matrix out;
    for (Eigen::Index start = 0; start < inputs.rows(); start += static_cast<Eigen::Index>(chunk_rows_)) {
        const Eigen::Index n = std::min<Eigen::Index>(static_cast<Eigen::Index>(chunk_rows_), inputs.rows() - start);
        const nlohmann::json body{{"inputs", matrix_to_json(inputs.middleRows(start, n))}};
        auto res = client.Post(parsed.path, body.dump(), "application/json");
        if (!res) throw ServiceError("service at " + url + " unreachable: " + httplib::to_string(res.error()));
        nlohmann::json reply;
        try {
            reply = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception&) {
            throw ServiceError("service at " + url + " returned a non-JSON body (HTTP " + std::to_string(res->status) + ")");
        }
        if (res->status != 200) {
            WireError e;
            e.http_status = res->status;
            e.code = reply.value("error", std::string("http_") + std::to_string(res->status));
            e.message = reply.value("message", std::string());
            if (reply.contains("remaining_budget")) e.remaining_budget = reply["remaining_budget"].get<std::int64_t>();
            raise(e);
        }
        const nn::Matrix chunk = matrix_from_json(reply.at(field));
        if (chunk.rows() != n) throw ServiceError("service returned " + std::to_string(chunk.rows()) + " rows for " + std::to_string(n) + " inputs");
        if (out.size() == 0) out.resize(inputs.rows(), chunk.cols());
        out.middleRows(start, n) = chunk;
        used_ += n;
    }
    return out;
}

nn::Matrix HttpClient::predict(const nn::Matrix& inputs) { return call(predict_url_, "posteriors", inputs); }

nn::Matrix HttpClient::embed(const nn::Matrix& inputs) {
    if (embedding_url_.empty()) throw InfeasibleAttack("no embedding endpoint was provided for this service");
    return call(embedding_url_, "embeddings", inputs);
}

bool HttpClient::reachable() const {
    const auto parsed = parse_url(predict_url_);
    httplib::Client client(parsed.origin);
    client.set_connection_timeout(2);
    auto res = client.Get("/health");
    return res && res->status == 200;
}

nn::Matrix LocalClient::predict(const nn::Matrix& inputs) {
    auto r = service_.handle_predict(inputs);
    if (auto* e = std::get_if<WireError>(&r)) raise(*e);
    used_ += inputs.rows();
    return std::get<nn::Matrix>(std::move(r));
}

nn::Matrix LocalClient::embed(const nn::Matrix& inputs) {
    auto r = service_.handle_embedding(inputs);
    if (auto* e = std::get_if<WireError>(&r)) raise(*e);
    used_ += inputs.rows();
    return std::get<nn::Matrix>(std::move(r));
}

TargetTraining train_target(const data::Dataset& partition, const registry::ModelRecord& architecture,
                            const nn::TrainConfig& config, const std::filesystem::path& artifact_path,
                            const std::string& label) {
    bool from_target_half = false;
    for (const auto& s : partition.provenance.value("splits", nlohmann::json::array()))
        if (s.value("name", std::string()).rfind("target", 0) == 0) from_target_half = true;
    if (!from_target_half)
        throw PreconditionError("target models must be trained on a partition of the target half");

    const auto column = data::resolve_label(partition, label);
    const auto& labels = column.values;
    const int classes = column.num_classes;
    const auto sizes = architecture.layer_sizes(partition.n_features(), classes);
    nn::Batch batch{partition.inputs, nn::ClassTargets{labels}};
    auto trained = nn::train(nn::init_model(sizes, mix_seed(config.seed, 0x7461726765745f69ULL)), batch, config);
    TargetTraining out;
    out.train_accuracy = nn::evaluate(trained.model, partition.inputs, labels);
    out.loss_history = trained.loss_history;
    out.model = std::move(trained.model);
    nlohmann::json lineage{{"dataset", partition.name},
                           {"label", label.empty() ? partition.task_label : label},
                           {"architecture", architecture.name},
                           {"train_config", config.to_json()},
                           {"rows", partition.size()},
                           {"splits", partition.provenance.value("splits", nlohmann::json::array())},
                           {"train_accuracy", out.train_accuracy}};
    nn::save_model(artifact_path, out.model, lineage);
    return out;
}

}  // namespace iaudit::service
