#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace drtl::eval {

struct ReportOutput {
    std::string markdown;
    nlohmann::json doc;
};

// Comparison table over run manifests (each joined with its eval result).
// Every manifest must carry the same eval_set_hash; a sweep series is
// appended when provided.
ReportOutput render_report(const std::vector<nlohmann::json>& runs,
                           const std::optional<nlohmann::json>& sweep = std::nullopt);

}  // namespace drtl::eval
