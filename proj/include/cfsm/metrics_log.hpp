#pragma once

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace cfsm {

// Append-only JSON-lines writer, flushed per record so a crashed run keeps its history.
class MetricsLog {
public:
    MetricsLog() = default;
    explicit MetricsLog(const std::filesystem::path& path);

    void write(const nlohmann::json& record);
    bool is_open() const { return out_.is_open(); }

private:
    std::ofstream out_;
};

}  // namespace cfsm
