#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "drtl/nn.hpp"
#include "drtl/tensor.hpp"

namespace drtl {

// Named-tensor checkpoint, single flat file:
//   magic "NTCK" | u32 version | u32 endian marker 0x01020304 | u64 count
//   per tensor: u32 name length | name bytes | u8 dtype (0 = f32) |
//               u8 ndim | u64 dims... | little-endian f32 payload
// Save/load round-trips are byte-idempotent. A JSON sidecar
// (<stem>.meta.json) carries whatever metadata the caller supplies.
void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::string>& names,
                     const std::vector<Tensor<float>>& values);

std::vector<std::pair<std::string, Tensor<float>>> load_checkpoint(
    const std::filesystem::path& path);

void write_meta_sidecar(const std::filesystem::path& checkpoint_path, const nlohmann::json& meta);
nlohmann::json read_meta_sidecar(const std::filesystem::path& checkpoint_path);

// stored payloads are always f32; other scalar types cast on save/load
template <class S>
void save_params(const std::filesystem::path& path, const ParamStore<S>& params) {
    std::vector<Tensor<float>> values;
    values.reserve(params.size());
    for (const auto& v : params.values) {
        Tensor<float> f = Tensor<float>::zeros(v.shape);
        for (int64_t i = 0; i < v.numel(); ++i) f[i] = static_cast<float>(v[i]);
        values.push_back(std::move(f));
    }
    save_checkpoint(path, params.names, values);
}

template <class S>
void load_params(const std::filesystem::path& path, ParamStore<S>& params) {
    const auto loaded = load_checkpoint(path);
    if (loaded.size() != params.size())
        throw std::runtime_error("load_params: tensor count mismatch in " + path.string());
    for (size_t i = 0; i < loaded.size(); ++i) {
        if (loaded[i].first != params.names[i])
            throw std::runtime_error("load_params: name mismatch at index " + std::to_string(i) +
                                     ": " + loaded[i].first + " vs " + params.names[i]);
        if (loaded[i].second.shape != params.values[i].shape)
            throw std::runtime_error("load_params: shape mismatch for " + loaded[i].first);
        for (int64_t e = 0; e < loaded[i].second.numel(); ++e)
            params.values[i][e] = static_cast<S>(loaded[i].second[e]);
    }
}

}  // namespace drtl
