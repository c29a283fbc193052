#pragma once

// The audited black-box prediction service: a trained model behind HTTP
// endpoints, with an optional budget on the number of scored inputs.
//
// Wire format (JSON bodies):
//   POST /predict    {"inputs": [[...]]}  -> {"posteriors": [[...]]}
//   POST /embedding  {"inputs": [[...]]}  -> {"embeddings": [[...]]}
//   GET  /health                          -> {"status": "ok"}
//   errors: {"error": code, "message": text, "remaining_budget": int (budget errors only)}

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>

#include <nlohmann/json.hpp>

#include "iaudit/data.hpp"
#include "iaudit/nn.hpp"
#include "iaudit/registry.hpp"

namespace httplib {
class Server;
}

namespace iaudit::service {

enum class Endpoint { predict, embedding };
const char* to_string(Endpoint e);

// Counts scored inputs (rows). The only shared mutable state of a service.
class QueryLedger {
public:
    explicit QueryLedger(std::optional<std::int64_t> budget = std::nullopt);

    enum class Decision { admit, refuse };

    // Atomic check-and-increment: admits iff used + n <= budget. n must be >= 1.
    Decision try_consume(std::int64_t n, Endpoint endpoint);

    std::int64_t used() const;
    std::int64_t used(Endpoint endpoint) const;
    std::optional<std::int64_t> budget() const { return budget_; }
    // Unlimited budgets report INT64_MAX.
    std::int64_t remaining() const;

private:
    const std::optional<std::int64_t> budget_;
    mutable std::mutex mutex_;
    std::int64_t used_ = 0;
    std::map<Endpoint, std::int64_t> per_endpoint_;
};

struct ServiceConfig {
    std::filesystem::path model_path;
    bool expose_embedding = false;
    std::optional<std::int64_t> query_budget;
    std::string host = "127.0.0.1";
    int port = 0;  // 0 picks a free port

    void validate() const;
};

struct WireError {
    int http_status = 400;
    std::string code;
    std::string message;
    std::optional<std::int64_t> remaining_budget;

    nlohmann::json to_json() const;
};

using WireResult = std::variant<nn::Matrix, WireError>;

// In-process service core; the HTTP layer is a thin adapter over it.
class TargetService {
public:
    TargetService(nn::Model model, bool expose_embedding, std::optional<std::int64_t> budget);
    static std::unique_ptr<TargetService> from_config(const ServiceConfig& config);

    WireResult handle_predict(const nn::Matrix& inputs);
    WireResult handle_embedding(const nn::Matrix& inputs);

    // Parses a JSON request body and dispatches; returns (status, body).
    std::pair<int, nlohmann::json> handle_json(Endpoint endpoint, const std::string& body);

    const QueryLedger& ledger() const { return ledger_; }
    bool embedding_enabled() const { return expose_embedding_; }
    int input_width() const { return model_.input_width(); }

private:
    std::optional<WireError> admit(const nn::Matrix& inputs, Endpoint endpoint);

    const nn::Model model_;
    const bool expose_embedding_;
    QueryLedger ledger_;
};

// A running HTTP server; stops and joins on destruction.
class ServiceHandle {
public:
    ServiceHandle(std::shared_ptr<TargetService> service, const std::string& host, int port);
    ~ServiceHandle();
    ServiceHandle(const ServiceHandle&) = delete;
    ServiceHandle& operator=(const ServiceHandle&) = delete;

    int port() const { return port_; }
    std::string base_url() const;
    std::string predict_url() const { return base_url() + "/predict"; }
    std::string embedding_url() const { return base_url() + "/embedding"; }
    TargetService& service() { return *service_; }
    void stop();

private:
    std::shared_ptr<TargetService> service_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    std::string host_;
    int port_ = 0;
};

// Throws ServiceError if the port is busy, FormatError if the artifact is corrupt.
std::unique_ptr<ServiceHandle> serve(const ServiceConfig& config);
std::unique_ptr<ServiceHandle> serve(std::shared_ptr<TargetService> service, const std::string& host = "127.0.0.1",
                                     int port = 0);

// Attacker-side view of a service: query access only.
class PredictionApi {
public:
    virtual ~PredictionApi() = default;
    virtual nn::Matrix predict(const nn::Matrix& inputs) = 0;
    virtual nn::Matrix embed(const nn::Matrix& inputs) = 0;
    virtual bool has_embedding() const = 0;
    // Inputs this client has had scored so far.
    virtual std::int64_t queries_used() const = 0;
};

class HttpClient final : public PredictionApi {
public:
    // embedding_url may be empty. Throws ServiceError on a malformed URL.
    HttpClient(std::string predict_url, std::string embedding_url = {}, std::size_t chunk_rows = 512);

    nn::Matrix predict(const nn::Matrix& inputs) override;
    nn::Matrix embed(const nn::Matrix& inputs) override;
    bool has_embedding() const override { return !embedding_url_.empty(); }
    std::int64_t queries_used() const override { return used_.load(); }

    // GET /health against the predict URL's host.
    bool reachable() const;

private:
    nn::Matrix call(const std::string& url, const char* field, const nn::Matrix& inputs);

    std::string predict_url_;
    std::string embedding_url_;
    std::size_t chunk_rows_;
    std::atomic<std::int64_t> used_{0};
};

// Direct in-process access, same error semantics as HTTP.
class LocalClient final : public PredictionApi {
public:
    explicit LocalClient(TargetService& service) : service_(service) {}
    nn::Matrix predict(const nn::Matrix& inputs) override;
    nn::Matrix embed(const nn::Matrix& inputs) override;
    bool has_embedding() const override { return service_.embedding_enabled(); }
    std::int64_t queries_used() const override { return used_.load(); }

private:
    TargetService& service_;
    std::atomic<std::int64_t> used_{0};
};

// Rethrows a wire error as the matching exception type.
[[noreturn]] void raise(const WireError& error);

nlohmann::json matrix_to_json(const nn::Matrix& m);
nn::Matrix matrix_from_json(const nlohmann::json& j);

// Trains a target model on a partition of the "target half" and writes the artifact.
struct TargetTraining {
    nn::Model model;
    std::vector<double> loss_history;
    double train_accuracy = 0.0;
};
TargetTraining train_target(const data::Dataset& partition, const registry::ModelRecord& architecture,
                            const nn::TrainConfig& config, const std::filesystem::path& artifact_path,
                            const std::string& label = {});

}  // namespace iaudit::service
