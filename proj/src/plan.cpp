#include "iaudit/plan.hpp"

#include <algorithm>
#include <array>
#include <regex>
#include <sstream>

namespace iaudit::agent {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 5> kHeaders = {"Reflection:", "Plan:", "Important Information:", "Action:",
                                                 "Action Input:"};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Header index of a line, or -1. "Action Input:" must win over "Action:".
int header_of(const std::string& line, std::size_t& consumed) {
    for (int h = static_cast<int>(kHeaders.size()) - 1; h >= 0; --h) {
        const std::string head = kHeaders[static_cast<std::size_t>(h)];
        if (line.rfind(head, 0) == 0) {
            consumed = head.size();
            return h;
        }
    }
    return -1;
}

std::string strip_fence(std::string s) {
    s = trim(s);
    if (s.rfind("```", 0) == 0) {
        const auto nl = s.find('\n');
        s = nl == std::string::npos ? std::string{} : s.substr(nl + 1);
        const auto end = s.rfind("```");
        if (end != std::string::npos) s = s.substr(0, end);
    }
    return trim(s);
}

}  // namespace

const ImportantEntry* ActionPlan::find(const std::string& key) const {
    for (const auto& e : important)
        if (e.key == key) return &e;
    return nullptr;
}

json ActionPlan::to_json() const {
    json ii = json::array();
    for (const auto& e : important) ii.push_back({{"key", e.key}, {"value", e.value}, {"step", e.step}});
    return {{"reflection", reflection}, {"plan", plan}, {"important_information", ii}, {"action", action},
            {"action_input", input}};
}

ActionPlan parse_plan(const std::string& text) {
    std::array<std::string, kHeaders.size()> body;
    std::array<bool, kHeaders.size()> seen{};
    int current = -1;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::size_t consumed = 0;
        // Headers are only recognised before the action input starts; the JSON may span lines.
        const int h = current == 4 ? -1 : header_of(line, consumed);
        if (h >= 0) {
            if (seen[static_cast<std::size_t>(h)]) throw PlanFormatError(std::string("duplicate entry: ") + kHeaders[static_cast<std::size_t>(h)]);
            seen[static_cast<std::size_t>(h)] = true;
            current = h;
            body[static_cast<std::size_t>(h)] = line.substr(consumed) + "\n";
        } else if (current >= 0) {
            body[static_cast<std::size_t>(current)] += line + "\n";
        }
    }
    for (std::size_t h = 0; h < kHeaders.size(); ++h) {
        if (!seen[h]) {
            std::string name = kHeaders[h];
            name.pop_back();
            throw PlanFormatError("missing entry: " + name);
        }
    }

    ActionPlan p;
    p.reflection = trim(body[0]);
    p.plan = trim(body[1]);
    static const std::regex entry(R"(^\s*-\s*([^:]+?)\s*:\s*(.*?)\s*\[step\s+(\d+)\]\s*$)");
    std::istringstream ii(body[2]);
    while (std::getline(ii, line)) {
        if (trim(line).empty() || trim(line) == "none") continue;
        std::smatch m;
        if (!std::regex_match(line, m, entry))
            throw PlanFormatError("malformed Important Information line: " + trim(line));
        p.important.push_back({m[1].str(), m[2].str(), std::stoi(m[3].str())});
    }
    p.action = trim(body[3]);
    if (p.action.empty()) throw PlanFormatError("empty entry: Action");
    const auto raw = strip_fence(body[4]);
    try {
        p.input = raw.empty() ? json::object() : json::parse(raw);
    } catch (const json::exception& e) {
        throw PlanFormatError(std::string("Action Input is not valid JSON: ") + e.what());
    }
    if (!p.input.is_object()) throw PlanFormatError("Action Input must be a JSON object");
    return p;
}

std::string render_important(const std::vector<ImportantEntry>& entries) {
    if (entries.empty()) return "none\n";
    std::string out;
    for (const auto& e : entries) out += "- " + e.key + ": " + e.value + " [step " + std::to_string(e.step) + "]\n";
    return out;
}

std::string render_plan(const ActionPlan& p) {
    return "Reflection: " + p.reflection + "\nPlan: " + p.plan + "\nImportant Information:\n" +
           render_important(p.important) + "Action: " + p.action + "\nAction Input: " + p.input.dump() + "\n";
}

Memory::Memory(std::string instruction) : instruction_(std::move(instruction)) {}

const ImportantEntry* Memory::find(const std::string& key) const {
    for (const auto& e : important_)
        if (e.key == key) return &e;
    return nullptr;
}

std::vector<int> Memory::window_steps() const {
    std::vector<int> out;
    for (const auto& w : window_) out.push_back(w.step);
    return out;
}

void Memory::merge(const std::vector<ImportantEntry>& entries) {
    for (const auto& e : entries) {
        auto it = std::find_if(important_.begin(), important_.end(), [&](const auto& x) { return x.key == e.key; });
        if (it == important_.end())
            important_.push_back(e);
        else if (it->value != e.value)
            *it = e;
    }
}

void Memory::seed(std::vector<ImportantEntry> entries) { merge(entries); }

void Memory::record(int step, const ActionPlan& plan, std::string observation) {
    merge(plan.important);
    window_.push_back({step, plan, std::move(observation)});
    while (window_.size() > kWindow) window_.pop_front();
}

}  // namespace iaudit::agent
