#include "iaudit/trace.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "iaudit/errors.hpp"

namespace iaudit::trace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string digest(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

bool TraceRecord::has_flag(const std::string& f) const {
    return std::find(flags.begin(), flags.end(), f) != flags.end();
}

json TraceRecord::to_json() const {
    return {{"run", run},
            {"agent", agent},
            {"role", role},
            {"kind", kind},
            {"step", step},
            {"t_start", t_start},
            {"t_end", t_end},
            {"context_steps", context_steps},
            {"plan", plan},
            {"action", action},
            {"action_input", action_input},
            {"observation_digest", observation_digest},
            {"observation_excerpt", observation_excerpt},
            {"tokens", {{"input", input_tokens}, {"output", output_tokens}}},
            {"planner_calls", planner_calls},
            {"flags", flags},
            {"extra", extra}};
}

TraceRecord TraceRecord::from_json(const json& j) {
    try {
        TraceRecord r;
        r.run = j.value("run", "");
        r.agent = j.at("agent").get<std::string>();
        r.role = j.value("role", "");
        r.kind = j.at("kind").get<std::string>();
        r.step = j.value("step", 0);
        r.t_start = j.value("t_start", 0.0);
        r.t_end = j.value("t_end", 0.0);
        r.context_steps = j.value("context_steps", std::vector<int>{});
        r.plan = j.value("plan", json(nullptr));
        r.action = j.value("action", "");
        r.action_input = j.value("action_input", json::object());
        r.observation_digest = j.value("observation_digest", "");
        r.observation_excerpt = j.value("observation_excerpt", "");
        if (j.contains("tokens")) {
            r.input_tokens = j["tokens"].value("input", std::int64_t{0});
            r.output_tokens = j["tokens"].value("output", std::int64_t{0});
        }
        r.planner_calls = j.value("planner_calls", 0);
        r.flags = j.value("flags", std::vector<std::string>{});
        r.extra = j.value("extra", json::object());
        if (r.input_tokens < 0 || r.output_tokens < 0) throw FormatError("negative token count");
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed trace record: ") + e.what());
    }
}

TraceWriter::TraceWriter(const fs::path& path) : path_(path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path, std::ios::app);
    if (!out_) throw FormatError("cannot open trace file " + path.string());
}

void TraceWriter::append(const TraceRecord& r) {
    std::lock_guard lock(mu_);
    out_ << r.to_json().dump() << "\n";
    out_.flush();
}

std::vector<TraceRecord> read_trace(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot read trace " + path.string());
    std::vector<TraceRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(TraceRecord::from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

void write_trace(const fs::path& path, const std::vector<TraceRecord>& records) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write trace " + path.string());
    for (const auto& r : records) out << r.to_json().dump() << "\n";
}

ObservationArchive::ObservationArchive(fs::path dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) fs::create_directories(dir_);
}

std::string ObservationArchive::put(const std::string& text) {
    const auto d = digest(text);
    std::lock_guard lock(mu_);
    if (texts_.emplace(d, text).second && !dir_.empty()) {
        std::ofstream out(dir_ / (d + ".txt"), std::ios::binary);
        out << text;
        if (!out) throw FormatError("cannot write observation archive entry " + d);
    }
    return d;
}

std::optional<std::string> ObservationArchive::get(const std::string& d) const {
    std::lock_guard lock(mu_);
    const auto it = texts_.find(d);
    if (it == texts_.end()) return std::nullopt;
    return it->second;
}

std::size_t ObservationArchive::size() const {
    std::lock_guard lock(mu_);
    return texts_.size();
}

ObservationArchive ObservationArchive::load(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw FormatError("no observation archive at " + dir.string());
    ObservationArchive a;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".txt") continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        a.texts_[e.path().stem().string()] = ss.str();
    }
    return a;
}

}  // namespace iaudit::trace
