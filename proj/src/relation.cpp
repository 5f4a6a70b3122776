#include "drtl/relation_types.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace drtl::relation {

using nlohmann::json;

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("cosine_similarity: dimension mismatch");
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0)
        throw std::invalid_argument("cosine_similarity: zero-norm embedding");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

RelationMatrix relation_matrix(const std::vector<DistortionEmbedding>& aux,
                               const DistortionEmbedding& target) {
    if (aux.empty()) throw std::invalid_argument("relation_matrix: no auxiliary embeddings");
    RelationMatrix rm;
    rm.probe_n = target.probe_n;
    for (const auto& e : aux) {
        if (e.c.size() != target.c.size())
            throw std::invalid_argument("relation_matrix: embedding dimension mismatch");
        rm.kinds.push_back(e.kind);
        rm.raw.push_back(cosine_similarity(e.c, target.c));
    }
    double mean = 0;
    for (double r : rm.raw) mean += std::max(r, kGammaFloor);
    mean /= static_cast<double>(rm.raw.size());
    for (double r : rm.raw) rm.gamma.push_back(std::max(r, kGammaFloor) / mean);
    return rm;
}

json RelationMatrix::to_json() const {
    json j;
    j["kinds"] = kinds;
    j["raw"] = raw;
    j["gamma"] = gamma;
    j["probe_n"] = probe_n;
    j["seed"] = seed;
    return j;
}

RelationMatrix RelationMatrix::from_json(const json& j) {
    RelationMatrix rm;
    rm.kinds = j.at("kinds").get<std::vector<std::string>>();
    rm.raw = j.at("raw").get<std::vector<double>>();
    rm.gamma = j.at("gamma").get<std::vector<double>>();
    rm.probe_n = j.at("probe_n").get<int>();
    rm.seed = j.at("seed").get<uint64_t>();
    if (rm.kinds.size() != rm.raw.size() || rm.raw.size() != rm.gamma.size())
        throw std::invalid_argument("relation matrix: inconsistent array lengths");
    return rm;
}

namespace {

// cyclic Jacobi eigendecomposition of a symmetric matrix; deterministic
// sweep order, fixed iteration cap
void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& eigvals,
                  std::vector<double>& eigvecs) {
    eigvecs.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) eigvecs[static_cast<size_t>(i) * n + i] = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[static_cast<size_t>(p) * n + q] *
                                                   a[static_cast<size_t>(p) * n + q];
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<size_t>(p) * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[static_cast<size_t>(p) * n + p];
                const double aqq = a[static_cast<size_t>(q) * n + q];
                const double phi = 0.5 * std::atan2(2 * apq, aqq - app);
                const double c = std::cos(phi), s = std::sin(phi);
                for (int k = 0; k < n; ++k) {
                    const double akp = a[static_cast<size_t>(k) * n + p];
                    const double akq = a[static_cast<size_t>(k) * n + q];
                    a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
                    a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a[static_cast<size_t>(p) * n + k];
                    const double aqk = a[static_cast<size_t>(q) * n + k];
                    a[static_cast<size_t>(p) * n + k] = c * apk - s * aqk;
                    a[static_cast<size_t>(q) * n + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = eigvecs[static_cast<size_t>(k) * n + p];
                    const double vkq = eigvecs[static_cast<size_t>(k) * n + q];
                    eigvecs[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
                    eigvecs[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
                }
            }
    }
    eigvals.assign(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) eigvals[static_cast<size_t>(i)] = a[static_cast<size_t>(i) * n + i];
}

}  // namespace

std::vector<std::vector<double>> pca_project(const std::vector<std::vector<double>>& rows,
                                             int components) {
    if (rows.empty()) throw std::invalid_argument("pca_project: no rows");
    const int n = static_cast<int>(rows.size());
    const int d = static_cast<int>(rows[0].size());
    if (components > d) throw std::invalid_argument("pca_project: more components than dims");

    std::vector<double> mean(static_cast<size_t>(d), 0.0);
    for (const auto& r : rows)
        for (int j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += r[static_cast<size_t>(j)];
    for (double& v : mean) v /= n;

    std::vector<double> cov(static_cast<size_t>(d) * d, 0.0);
    for (const auto& r : rows)
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j)
                cov[static_cast<size_t>(i) * d + j] += (r[static_cast<size_t>(i)] - mean[i]) *
                                                       (r[static_cast<size_t>(j)] - mean[j]);
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            cov[static_cast<size_t>(i) * d + j] /= std::max(1, n - 1);
            cov[static_cast<size_t>(j) * d + i] = cov[static_cast<size_t>(i) * d + j];
        }

    std::vector<double> eigvals, eigvecs;
    jacobi_eigen(cov, d, eigvals, eigvecs);

    // top components by eigenvalue, deterministic tie-break by index
    std::vector<int> idx(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) idx[static_cast<size_t>(i)] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return eigvals[static_cast<size_t>(a)] >
                                                eigvals[static_cast<size_t>(b)]; });

    std::vector<std::vector<double>> axes(static_cast<size_t>(components),
                                          std::vector<double>(static_cast<size_t>(d)));
    for (int cidx = 0; cidx < components; ++cidx) {
        const int e = idx[static_cast<size_t>(cidx)];
        double max_abs = 0;
        int max_at = 0;
        for (int j = 0; j < d; ++j) {
            axes[static_cast<size_t>(cidx)][static_cast<size_t>(j)] =
                eigvecs[static_cast<size_t>(j) * d + e];
            if (std::abs(axes[static_cast<size_t>(cidx)][static_cast<size_t>(j)]) > max_abs) {
                max_abs = std::abs(axes[static_cast<size_t>(cidx)][static_cast<size_t>(j)]);
                max_at = j;
            }
        }
        // sign convention: largest-magnitude coordinate positive
        if (axes[static_cast<size_t>(cidx)][static_cast<size_t>(max_at)] < 0)
            for (double& v : axes[static_cast<size_t>(cidx)]) v = -v;
    }

    std::vector<std::vector<double>> out(static_cast<size_t>(n),
                                         std::vector<double>(static_cast<size_t>(components)));
    for (int i = 0; i < n; ++i)
        for (int cidx = 0; cidx < components; ++cidx) {
            double acc = 0;
            for (int j = 0; j < d; ++j)
                acc += (rows[static_cast<size_t>(i)][static_cast<size_t>(j)] - mean[j]) *
                       axes[static_cast<size_t>(cidx)][static_cast<size_t>(j)];
            out[static_cast<size_t>(i)][static_cast<size_t>(cidx)] = acc;
        }
    return out;
}

GraphExport build_graph_export(const std::vector<std::string>& sample_kinds,
                               const std::vector<std::vector<double>>& sample_embeddings,
                               const std::vector<DistortionEmbedding>& task_nodes) {
    if (sample_kinds.size() != sample_embeddings.size())
        throw std::invalid_argument("build_graph_export: kind/embedding count mismatch");
    GraphExport g;
    g.sample_kinds = sample_kinds;
    const auto proj = pca_project(sample_embeddings, 2);
    for (const auto& p : proj) g.projection.push_back({p[0], p[1]});

    const size_t n = task_nodes.size();
    g.heatmap.assign(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i) {
        g.node_kinds.push_back(task_nodes[i].kind);
        g.heatmap[i][i] = 1.0;
        for (size_t j = i + 1; j < n; ++j) {
            const double s = cosine_similarity(task_nodes[i].c, task_nodes[j].c);
            g.heatmap[i][j] = s;
            g.heatmap[j][i] = s;
        }
    }
    return g;
}

void write_graph_export(const GraphExport& g, const std::filesystem::path& out_path) {
    json j;
    j["samples"] = json::array();
    for (size_t i = 0; i < g.sample_kinds.size(); ++i)
        j["samples"].push_back({{"kind", g.sample_kinds[i]},
                                {"x", g.projection[i][0]},
                                {"y", g.projection[i][1]}});
    j["nodes"] = g.node_kinds;
    j["heatmap"] = g.heatmap;
    std::ofstream f(out_path);
    if (!f) throw std::runtime_error("write_graph_export: cannot open " + out_path.string());
    f << j.dump(2) << "\n";
}

}  // namespace drtl::relation
