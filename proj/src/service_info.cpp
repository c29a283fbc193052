#include "iaudit/service_info.hpp"

#include <fstream>
#include <regex>

#include "iaudit/errors.hpp"

namespace iaudit::agent {
namespace {

std::optional<int> first_number(const std::string& text, const std::regex& re) {
    std::smatch m;
    if (!std::regex_search(text, m, re)) return std::nullopt;
    try {
        return std::stoi(m[1].str());
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace

std::optional<int> TargetServiceInfo::class_count() const {
    static const std::regex re(R"((\d+)(?:\s+classes|-dim))", std::regex::icase);
    return first_number(output_format, re);
}

std::optional<int> TargetServiceInfo::input_size() const {
    static const std::regex re(R"((\d+)(?:-dim|\s+features|\s+values))", std::regex::icase);
    return first_number(input_format, re);
}

void TargetServiceInfo::validate() const {
    if (predict_url.empty()) throw PreconditionError("service info needs a predict endpoint");
    if (const auto c = class_count(); c && *c < 2)
        throw PreconditionError("service output must have at least 2 classes");
    if (query_budget && *query_budget < 1) throw PreconditionError("query budget must be positive");
}

nlohmann::json TargetServiceInfo::to_json() const {
    nlohmann::json j{{"task_description", task_description},
                     {"predict_url", predict_url},
                     {"input_format", input_format},
                     {"output_format", output_format}};
    if (!embedding_url.empty()) j["embedding_url"] = embedding_url;
    if (!sensitive_attribute.empty()) j["sensitive_attribute"] = sensitive_attribute;
    if (query_budget) j["query_budget"] = *query_budget;
    return j;
}

TargetServiceInfo TargetServiceInfo::from_json(const nlohmann::json& j) {
    TargetServiceInfo s;
    try {
        s.task_description = j.value("task_description", std::string());
        s.predict_url = j.at("predict_url").get<std::string>();
        s.embedding_url = j.value("embedding_url", std::string());
        s.input_format = j.value("input_format", std::string());
        s.output_format = j.value("output_format", std::string());
        s.sensitive_attribute = j.value("sensitive_attribute", std::string());
        if (j.contains("query_budget") && !j["query_budget"].is_null()) s.query_budget = j["query_budget"].get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed service info: ") + e.what());
    }
    s.validate();
    return s;
}

TargetServiceInfo load_service_info(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot read service info " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("service info " + path.string() + " is not valid JSON: " + e.what());
    }
    return TargetServiceInfo::from_json(j);
}

void save_service_info(const std::filesystem::path& path, const TargetServiceInfo& info) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write service info " + path.string());
    out << info.to_json().dump(2) << "\n";
}

}  // namespace iaudit::agent
