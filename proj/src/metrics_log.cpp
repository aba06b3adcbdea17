#include "cfsm/metrics_log.hpp"

#include "cfsm/errors.hpp"

namespace cfsm {

MetricsLog::MetricsLog(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw IoError("cannot open metrics log: " + path.string());
}

void MetricsLog::write(const nlohmann::json& record) {
    if (!out_.is_open()) return;
    out_ << record.dump() << '\n';
    out_.flush();
}

}  // namespace cfsm
