#include "iaudit/provenance.hpp"

#include <cctype>
#include <cmath>
#include <regex>

namespace iaudit::agent {

using nlohmann::json;

namespace {

bool digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

// Whole-number occurrence: no digit or decimal point glued to either side.
bool token_in(const std::string& token, const std::string& text) {
    for (auto pos = text.find(token); pos != std::string::npos; pos = text.find(token, pos + 1)) {
        const auto end = pos + token.size();
        const bool left = pos == 0 || !(digit(text[pos - 1]) || text[pos - 1] == '.');
        const bool right = end >= text.size() ||
                           !(digit(text[end]) || (text[end] == '.' && end + 1 < text.size() && digit(text[end + 1])));
        if (left && right) return true;
    }
    return false;
}

bool observed(const json& v, const std::vector<std::string>& corpus) {
    if (v.is_string()) {
        const auto& s = v.get_ref<const std::string&>();
        if (s.empty()) return true;
        for (const auto& t : corpus)
            if (t.find(s) != std::string::npos) return true;
        return false;
    }
    if (v.is_number()) {
        const auto s = v.dump();
        for (const auto& t : corpus)
            if (token_in(s, t)) return true;
        return number_observed(s, corpus);
    }
    return true;
}

void collect(const std::string& prefix, const json& v, const std::vector<std::string>& corpus,
             std::vector<std::string>& out) {
    if (v.is_object()) {
        for (auto it = v.begin(); it != v.end(); ++it) collect(prefix + "." + it.key(), it.value(), corpus, out);
    } else if (v.is_array()) {
        for (std::size_t i = 0; i < v.size(); ++i) collect(prefix + "[" + std::to_string(i) + "]", v[i], corpus, out);
    } else if (!observed(v, corpus)) {
        out.push_back(prefix + " = " + (v.is_string() ? v.get<std::string>() : v.dump()));
    }
}

void text_fields(const json& v, std::vector<std::string>& out) {
    if (v.is_string()) out.push_back(v.get<std::string>());
    if (v.is_object() || v.is_array())
        for (const auto& x : v) text_fields(x, out);
}

void number_fields(const json& v, std::vector<std::string>& out) {
    if (v.is_number()) out.push_back(v.dump());
    if (v.is_object() || v.is_array())
        for (const auto& x : v) number_fields(x, out);
}

}  // namespace

std::vector<std::string> unverified_values(const ActionSpec& spec, const json& input,
                                           const std::vector<std::string>& corpus) {
    std::vector<std::string> out;
    if (!input.is_object()) return out;
    for (const auto& f : spec.inputs) {
        if (!f.grounded || !input.contains(f.name)) continue;
        collect(f.name, input.at(f.name), corpus, out);
    }
    return out;
}

std::vector<std::string> numeric_literals(const std::string& text) {
    static const std::regex re(R"((?:^|[^0-9A-Za-z_.])(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?))");
    std::vector<std::string> out;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it)
        out.push_back((*it)[1].str());
    return out;
}

bool number_observed(const std::string& literal, const std::vector<std::string>& corpus) {
    double v = 0;
    try {
        v = std::stod(literal);
    } catch (const std::exception&) {
        return false;
    }
    for (const auto& t : corpus) {
        if (token_in(literal, t)) return true;
        for (const auto& lit : numeric_literals(t)) {
            double w = 0;
            try {
                w = std::stod(lit);
            } catch (const std::exception&) {
                continue;
            }
            if (w == v || std::nextafter(w, v) == v) return true;
        }
    }
    return false;
}

std::vector<std::string> fabricated_numbers(const json& final_input, const std::vector<std::string>& corpus) {
    std::vector<std::string> candidates;
    number_fields(final_input, candidates);
    std::vector<std::string> texts;
    text_fields(final_input, texts);
    for (const auto& t : texts)
        for (const auto& lit : numeric_literals(t)) candidates.push_back(lit);
    std::vector<std::string> out;
    for (const auto& c : candidates)
        if (!number_observed(c, corpus)) out.push_back(c);
    return out;
}

}  // namespace iaudit::agent
