#include "drtl/report.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace drtl::eval {

using nlohmann::json;

ReportOutput render_report(const std::vector<json>& runs, const std::optional<json>& sweep) {
    if (runs.empty()) throw std::invalid_argument("render_report: no run manifests");

    std::string eval_hash;
    for (const auto& r : runs) {
        const std::string h = r.at("eval_set_hash").get<std::string>();
        if (eval_hash.empty())
            eval_hash = h;
        else if (h != eval_hash)
            throw std::runtime_error(
                "render_report: run manifests evaluate different eval sets (hash mismatch)");
    }

    // canonical regime order, then seed
    const std::vector<std::string> order = {"baseline", "pretrain",      "maml",
                                            "drtl_p",   "drtl_m",        "drtl_m_nobank"};
    auto rank = [&](const std::string& r) {
        const auto it = std::find(order.begin(), order.end(), r);
        return it == order.end() ? order.size() : static_cast<size_t>(it - order.begin());
    };
    std::vector<json> sorted = runs;
    std::stable_sort(sorted.begin(), sorted.end(), [&](const json& a, const json& b) {
        const auto ra = rank(a.at("regime").get<std::string>());
        const auto rb = rank(b.at("regime").get<std::string>());
        if (ra != rb) return ra < rb;
        return a.at("seed").get<uint64_t>() < b.at("seed").get<uint64_t>();
    });

    json doc;
    doc["eval_set_hash"] = eval_hash;
    doc["psnr_convention"] = "infinite per-image PSNR capped at 100 dB in means";
    doc["rows"] = json::array();

    std::string md;
    md += "# Regime comparison\n\n";
    md += "Eval set: `" + eval_hash.substr(0, 12) + "`\n\n";
    md += "| Regime | Arch | Seed | PSNR (dB) | SSIM |\n";
    md += "|---|---|---|---|---|\n";
    char buf[64];
    for (const auto& r : sorted) {
        json row;
        row["regime"] = r.at("regime");
        row["arch"] = r.at("arch");
        row["seed"] = r.at("seed");
        row["psnr"] = r.at("psnr");
        row["ssim"] = r.at("ssim");
        row["config_hash"] = r.at("config_hash");
        doc["rows"].push_back(row);

        std::snprintf(buf, sizeof(buf), "%.4f", r.at("psnr").get<double>());
        std::string psnr_s = buf;
        std::snprintf(buf, sizeof(buf), "%.4f", r.at("ssim").get<double>());
        std::string ssim_s = buf;
        md += "| " + r.at("regime").get<std::string>() + " | " +
              r.at("arch").get<std::string>() + " | " +
              std::to_string(r.at("seed").get<uint64_t>()) + " | " + psnr_s + " | " + ssim_s +
              " |\n";
    }

    if (sweep) {
        doc["sweep"] = *sweep;
        md += "\n## Few-shot sweep (PSNR vs k)\n\n| k |";
        for (const auto& [name, _] : sweep->at("series").items()) md += " " + name + " |";
        md += "\n|---|";
        for (size_t i = 0; i < sweep->at("series").size(); ++i) md += "---|";
        md += "\n";
        const auto& ks = sweep->at("k");
        for (size_t i = 0; i < ks.size(); ++i) {
            md += "| " + std::to_string(ks[i].get<int>()) + " |";
            for (const auto& [_, series] : sweep->at("series").items()) {
                std::snprintf(buf, sizeof(buf), "%.4f", series[i].get<double>());
                md += std::string(" ") + buf + " |";
            }
            md += "\n";
        }
    }

    ReportOutput out;
    out.markdown = std::move(md);
    out.doc = std::move(doc);
    return out;
}

}  // namespace drtl::eval
