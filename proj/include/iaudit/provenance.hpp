#pragma once

// Grounding checks shared by the runtime and the trace analyzer.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iaudit/actions.hpp"

namespace iaudit::agent {

// Values of grounded fields (leaves of nested objects included) that appear in
// none of the corpus texts. Strings match as substrings, numbers as whole
// numeric tokens. Empty strings and booleans need no provenance.
std::vector<std::string> unverified_values(const ActionSpec& spec, const nlohmann::json& input,
                                           const std::vector<std::string>& corpus);

// Decimal literals in a text, in order.
std::vector<std::string> numeric_literals(const std::string& text);

// True if some numeric literal of the corpus equals `literal` as a string or
// lies within one ulp of its value.
bool number_observed(const std::string& literal, const std::vector<std::string>& corpus);

// Numbers in a final answer (metric values and literals in text fields) that
// were never observed.
std::vector<std::string> fabricated_numbers(const nlohmann::json& final_input, const std::vector<std::string>& corpus);

}  // namespace iaudit::agent
