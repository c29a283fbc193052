#pragma once

// Agent response format and the bounded agent memory.
//
//   Reflection: ...
//   Plan: ...
//   Important Information:
//   - key: value [step N]
//   Action: <name>
//   Action Input: {json object}

#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaudit/errors.hpp"

namespace iaudit::agent {

class PlanFormatError : public FormatError {
public:
    using FormatError::FormatError;
};

struct ImportantEntry {
    std::string key;
    std::string value;
    int step = 0;  // 0 = initial instruction

    bool operator==(const ImportantEntry&) const = default;
};

struct ActionPlan {
    std::string reflection;
    std::string plan;
    std::vector<ImportantEntry> important;
    std::string action;
    nlohmann::json input = nlohmann::json::object();

    const ImportantEntry* find(const std::string& key) const;
    nlohmann::json to_json() const;
};

// Throws PlanFormatError naming the first missing or malformed entry.
ActionPlan parse_plan(const std::string& text);
std::string render_plan(const ActionPlan& plan);

std::string render_important(const std::vector<ImportantEntry>& entries);

struct MemoryItem {
    int step = 0;
    ActionPlan plan;
    std::string observation;
};

class Memory {
public:
    static constexpr std::size_t kWindow = 3;

    explicit Memory(std::string instruction);

    const std::string& instruction() const { return instruction_; }
    const std::deque<MemoryItem>& window() const { return window_; }
    const std::vector<ImportantEntry>& important() const { return important_; }
    const ImportantEntry* find(const std::string& key) const;
    std::vector<int> window_steps() const;

    // Adds the step's important entries and pushes it into the window.
    void record(int step, const ActionPlan& plan, std::string observation);
    // Entries known before the first step (parsed from the instruction).
    void seed(std::vector<ImportantEntry> entries);

private:
    void merge(const std::vector<ImportantEntry>& entries);

    std::string instruction_;
    std::deque<MemoryItem> window_;
    std::vector<ImportantEntry> important_;
};

}  // namespace iaudit::agent
