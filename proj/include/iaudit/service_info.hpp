#pragma once

// What the user tells the assessment about a target service.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace iaudit::agent {

struct TargetServiceInfo {
    std::string task_description;
    std::string predict_url;
    std::string embedding_url;  // empty when not exposed
    std::string input_format;
    std::string output_format;
    std::string sensitive_attribute;  // empty when not provided
    std::optional<std::int64_t> query_budget;

    bool has_embedding() const { return !embedding_url.empty(); }
    // First "<N> classes" or "<N>-dim" in the output format.
    std::optional<int> class_count() const;
    // First "<N>-dim"/"<N> features"/"<N> values" in the input format.
    std::optional<int> input_size() const;
    void validate() const;

    nlohmann::json to_json() const;
    static TargetServiceInfo from_json(const nlohmann::json& j);
};

TargetServiceInfo load_service_info(const std::filesystem::path& path);
void save_service_info(const std::filesystem::path& path, const TargetServiceInfo& info);

}  // namespace iaudit::agent
