#pragma once

// Binary container shared by model artifacts and dataset payloads.
//
// Layout (all integers little-endian):
//   8 bytes   magic "IAUDITC\0"
//   u32       format version
//   u64       header length in bytes
//   header    UTF-8 JSON: {"kind", "meta", "arrays": [{"name","dtype","shape","offset","count"}]}
//   payload   concatenated arrays; f64 as IEEE-754 binary64, i64 as two's complement

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace iaudit {

inline constexpr std::uint32_t kContainerVersion = 1;

struct ArrayEntry {
    std::string name;
    std::vector<std::size_t> shape;
    bool is_integer = false;
    std::vector<double> reals;
    std::vector<std::int64_t> integers;

    std::size_t count() const;
};

struct Container {
    std::string kind;
    nlohmann::json meta = nlohmann::json::object();
    std::vector<ArrayEntry> arrays;

    void add(std::string name, const Eigen::MatrixXd& m);
    void add(std::string name, const std::vector<std::int64_t>& v);
    void add(std::string name, const std::vector<int>& v);

    const ArrayEntry& at(const std::string& name) const;
    bool has(const std::string& name) const;
    Eigen::MatrixXd matrix(const std::string& name) const;
    std::vector<int> ints(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const Container& c);

// Throws FormatError on bad magic, unknown version, truncation, or a header
// whose array table does not match the payload.
Container read_container(const std::filesystem::path& path);

}  // namespace iaudit
