#pragma once

// Line-delimited step records and the archive of full observation texts.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace iaudit::trace {

// 64-bit FNV-1a, 16 lowercase hex digits.
std::string digest(const std::string& text);

struct TraceRecord {
    std::string run;
    std::string agent;  // "controller" or the attack name
    std::string role;   // "controller" or "attacker"
    std::string kind;   // "start", "step" or "end"
    int step = 0;
    double t_start = 0.0;
    double t_end = 0.0;
    std::vector<int> context_steps;
    nlohmann::json plan;  // reflection, plan, important_information; null if unparseable
    std::string action;
    nlohmann::json action_input = nlohmann::json::object();
    std::string observation_digest;
    std::string observation_excerpt;
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;
    int planner_calls = 0;
    std::vector<std::string> flags;  // runtime containment notes
    nlohmann::json extra = nlohmann::json::object();

    bool has_flag(const std::string& f) const;
    nlohmann::json to_json() const;
    static TraceRecord from_json(const nlohmann::json& j);
};

// Appends one JSON line per record; flushes after each.
class TraceWriter {
public:
    explicit TraceWriter(const std::filesystem::path& path);
    void append(const TraceRecord& r);
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::mutex mu_;
};

std::vector<TraceRecord> read_trace(const std::filesystem::path& path);
void write_trace(const std::filesystem::path& path, const std::vector<TraceRecord>& records);

// Full observation texts keyed by digest; mirrored to <dir>/<digest>.txt when a
// directory is given.
class ObservationArchive {
public:
    ObservationArchive() = default;
    explicit ObservationArchive(std::filesystem::path dir);
    ObservationArchive(ObservationArchive&& other) noexcept
        : dir_(std::move(other.dir_)), texts_(std::move(other.texts_)) {}

    std::string put(const std::string& text);
    std::optional<std::string> get(const std::string& digest) const;
    std::size_t size() const;

    static ObservationArchive load(const std::filesystem::path& dir);

private:
    std::filesystem::path dir_;
    std::map<std::string, std::string> texts_;
    mutable std::mutex mu_;
};

}  // namespace iaudit::trace
