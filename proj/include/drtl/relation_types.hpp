#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace drtl::relation {

// task-level node in the distortion relation graph
struct DistortionEmbedding {
    std::vector<double> c;
    std::string kind;
    int probe_n = 0;
};

// cosine transferability coefficients between each auxiliary task and the
// target; `raw` keeps the unnormalized cosines, `gamma` the nonnegative
// mean-one gradient weights derived from them
struct RelationMatrix {
    std::vector<std::string> kinds;
    std::vector<double> raw;
    std::vector<double> gamma;
    int probe_n = 0;
    uint64_t seed = 0;

    nlohmann::json to_json() const;
    static RelationMatrix from_json(const nlohmann::json& j);
};

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// raw_i = cos(aux_i, target); gamma_i = max(raw_i, eps) rescaled to mean 1
RelationMatrix relation_matrix(const std::vector<DistortionEmbedding>& aux,
                               const DistortionEmbedding& target);

inline constexpr double kGammaFloor = 1e-3;

// Plot-ready export: deterministic 2-d PCA projection of per-sample
// embeddings plus the (N+1)x(N+1) cosine heatmap over task embeddings
// (auxiliaries + target).
struct GraphExport {
    std::vector<std::string> sample_kinds;          // one per projected sample
    std::vector<std::array<double, 2>> projection;  // aligned with sample_kinds
    std::vector<std::string> node_kinds;            // N+1 task nodes
    std::vector<std::vector<double>> heatmap;       // cosine similarities
};

GraphExport build_graph_export(const std::vector<std::string>& sample_kinds,
                               const std::vector<std::vector<double>>& sample_embeddings,
                               const std::vector<DistortionEmbedding>& task_nodes);

void write_graph_export(const GraphExport& g, const std::filesystem::path& out_path);

// deterministic top-k PCA (covariance + cyclic Jacobi, fixed sign convention)
std::vector<std::vector<double>> pca_project(const std::vector<std::vector<double>>& rows,
                                             int components);

}  // namespace drtl::relation
