#include "iaudit/container.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "iaudit/errors.hpp"

namespace iaudit {
namespace {

constexpr char kMagic[8] = {'I', 'A', 'U', 'D', 'I', 'T', 'C', '\0'};

template <typename T>
void put_le(std::string& out, T value) {
    std::uint64_t raw = 0;
    std::memcpy(&raw, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((raw >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
    std::uint64_t raw = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) raw |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    T value;
    std::memcpy(&value, &raw, sizeof(T));
    return value;
}

std::size_t product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

}  // namespace

std::size_t ArrayEntry::count() const { return is_integer ? integers.size() : reals.size(); }

void Container::add(std::string name, const Eigen::MatrixXd& m) {
    ArrayEntry e;
    e.name = std::move(name);
    e.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
    e.reals.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) e.reals.push_back(m(r, c));
    arrays.push_back(std::move(e));
}

void Container::add(std::string name, const std::vector<std::int64_t>& v) {
    ArrayEntry e;
    e.name = std::move(name);
    e.shape = {v.size()};
    e.is_integer = true;
    e.integers = v;
    arrays.push_back(std::move(e));
}

void Container::add(std::string name, const std::vector<int>& v) {
    add(std::move(name), std::vector<std::int64_t>(v.begin(), v.end()));
}

bool Container::has(const std::string& name) const {
    return std::any_of(arrays.begin(), arrays.end(), [&](const ArrayEntry& a) { return a.name == name; });
}

const ArrayEntry& Container::at(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return a;
    throw FormatError("container has no array named '" + name + "'");
}

Eigen::MatrixXd Container::matrix(const std::string& name) const {
    const auto& a = at(name);
    if (a.is_integer || a.shape.size() != 2) throw FormatError("array '" + name + "' is not a real matrix");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(a.shape[0]), static_cast<Eigen::Index>(a.shape[1]));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = a.reals[k++];
    return m;
}

std::vector<int> Container::ints(const std::string& name) const {
    const auto& a = at(name);
    if (!a.is_integer) throw FormatError("array '" + name + "' is not an integer array");
    return {a.integers.begin(), a.integers.end()};
}

void write_container(const std::filesystem::path& path, const Container& c) {
    nlohmann::json table = nlohmann::json::array();
    std::string payload;
    for (const auto& a : c.arrays) {
        if (product(a.shape) != a.count()) throw PreconditionError("array '" + a.name + "' shape/count mismatch");
        table.push_back({{"name", a.name},
                         {"dtype", a.is_integer ? "i64" : "f64"},
                         {"shape", a.shape},
                         {"offset", payload.size()},
                         {"count", a.count()}});
        if (a.is_integer)
            for (auto v : a.integers) put_le<std::int64_t>(payload, v);
        else
            for (auto v : a.reals) put_le<double>(payload, v);
    }
    const nlohmann::json header = {{"kind", c.kind}, {"meta", c.meta}, {"arrays", table}};
    const std::string header_text = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kContainerVersion);
    put_le<std::uint64_t>(out, header_text.size());
    out += header_text;
    out += payload;

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + path.string() + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError("write failed for '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    constexpr std::size_t fixed = sizeof(kMagic) + 4 + 8;
    if (bytes.size() < fixed || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw FormatError("'" + path.string() + "' is not an iaudit container");
    const auto version = get_le<std::uint32_t>(p + 8);
    if (version != kContainerVersion)
        throw FormatError("unsupported container version " + std::to_string(version));
    const auto header_len = get_le<std::uint64_t>(p + 12);
    if (header_len > bytes.size() - fixed) throw FormatError("truncated container header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(fixed, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt container header: ") + e.what());
    }

    Container c;
    try {
        c.kind = header.at("kind").get<std::string>();
        c.meta = header.at("meta");
        const std::size_t base = fixed + header_len;
        for (const auto& row : header.at("arrays")) {
            ArrayEntry a;
            a.name = row.at("name").get<std::string>();
            a.shape = row.at("shape").get<std::vector<std::size_t>>();
            a.is_integer = row.at("dtype").get<std::string>() == "i64";
            const auto offset = row.at("offset").get<std::size_t>();
            const auto count = row.at("count").get<std::size_t>();
            if (count != product(a.shape)) throw FormatError("array '" + a.name + "' shape/count mismatch");
            if (base + offset + count * 8 > bytes.size()) throw FormatError("array '" + a.name + "' truncated");
            const unsigned char* q = p + base + offset;
            if (a.is_integer) {
                a.integers.resize(count);
                for (std::size_t i = 0; i < count; ++i) a.integers[i] = get_le<std::int64_t>(q + 8 * i);
            } else {
                a.reals.resize(count);
                for (std::size_t i = 0; i < count; ++i) a.reals[i] = get_le<double>(q + 8 * i);
            }
            c.arrays.push_back(std::move(a));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt container header: ") + e.what());
    }
    return c;
}

}  // namespace iaudit
