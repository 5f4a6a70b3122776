#include "drtl/data.hpp"

#include <algorithm>
#include <stdexcept>

#include "drtl/image_io.hpp"

namespace drtl::data {

namespace fs = std::filesystem;

PairedDataset load_pairs(const fs::path& manifest_path) {
    const auto manifest = synth::load_manifest(manifest_path);
    const fs::path root = manifest_path.parent_path();

    PairedDataset ds;
    ds.kind = manifest.kind;
    for (const auto& it : manifest.items) {
        PairItem item;
        const fs::path cp = root / it.clean_path;
        const fs::path dp = root / it.distorted_path;
        if (!fs::exists(cp))
            throw std::runtime_error("load_pairs: item " + std::to_string(it.index) +
                                     ": missing clean file " + cp.string());
        if (!fs::exists(dp))
            throw std::runtime_error("load_pairs: item " + std::to_string(it.index) +
                                     ": missing distorted file " + dp.string());
        item.clean = read_png(cp);
        item.distorted = read_png(dp);
        if (!item.clean.same_shape(item.distorted))
            throw std::runtime_error("load_pairs: item " + std::to_string(it.index) +
                                     ": clean/distorted shape mismatch");
        item.record = it.record;
        ds.items.push_back(std::move(item));
    }
    return ds;
}

FewShotSplit few_shot_split(const PairedDataset& ds, int k, uint64_t seed) {
    const int n = static_cast<int>(ds.size());
    if (k < 1 || k > n)
        throw std::invalid_argument("few_shot_split: k must be in [1, dataset size]");
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(mix_seed(seed, 0x73706c6974ULL));
    // partial Fisher-Yates: first k entries are the train subset
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(n - i)));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    FewShotSplit split;
    split.train_indices.assign(order.begin(), order.begin() + k);
    split.eval_indices.assign(order.begin() + k, order.end());
    std::sort(split.train_indices.begin(), split.train_indices.end());
    std::sort(split.eval_indices.begin(), split.eval_indices.end());
    return split;
}

std::vector<std::pair<Image, Image>> subset_pairs(const PairedDataset& ds,
                                                  const std::vector<int>& indices) {
    std::vector<std::pair<Image, Image>> out;
    out.reserve(indices.size());
    for (int i : indices)
        out.emplace_back(ds.items[static_cast<size_t>(i)].clean,
                         ds.items[static_cast<size_t>(i)].distorted);
    return out;
}

std::vector<std::pair<Image, Image>> all_pairs(const PairedDataset& ds) {
    std::vector<std::pair<Image, Image>> out;
    out.reserve(ds.size());
    for (const auto& it : ds.items) out.emplace_back(it.clean, it.distorted);
    return out;
}

void extract_patch(const Image& img, int y0, int x0, int patch, bool flip, int rotation,
                   float* out) {
    const int c = img.channels;
    // crop, then optional horizontal flip, then rotate by quarter turns
    auto src_at = [&](int y, int x, int ch) {
        int yy = y, xx = x;
        // invert rotation: out(y,x) = in(rot^-1(y,x))
        for (int r = 0; r < rotation; ++r) {
            const int ty = yy;
            yy = patch - 1 - xx;  // inverse of a 90-degree clockwise turn
            xx = ty;
        }
        if (flip) xx = patch - 1 - xx;
        return img.at(y0 + yy, x0 + xx, ch);
    };
    for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
            for (int ch = 0; ch < c; ++ch)
                out[(static_cast<size_t>(y) * patch + x) * c + ch] = src_at(y, x, ch);
}

PatchBatch sample_patch_batch(const std::vector<std::pair<Image, Image>>& pairs, int batch,
                              int patch, Rng& rng) {
    if (pairs.empty()) throw std::invalid_argument("sample_patch_batch: no pairs");
    if (batch < 1) throw std::invalid_argument("sample_patch_batch: batch must be >= 1");
    for (size_t i = 0; i < pairs.size(); ++i)
        if (pairs[i].first.height < patch || pairs[i].first.width < patch)
            throw std::invalid_argument("sample_patch_batch: image " + std::to_string(i) +
                                        " smaller than patch size");
    const int c = pairs[0].first.channels;

    PatchBatch b;
    b.patch = patch;
    b.clean = Tensor<float>::zeros({batch, patch, patch, c});
    b.distorted = Tensor<float>::zeros({batch, patch, patch, c});
    const int64_t stride = static_cast<int64_t>(patch) * patch * c;

    for (int s = 0; s < batch; ++s) {
        const int pi = static_cast<int>(rng.uniform_index(pairs.size()));
        const auto& [clean, distorted] = pairs[static_cast<size_t>(pi)];
        const int y0 = static_cast<int>(rng.uniform_index(
            static_cast<uint64_t>(clean.height - patch + 1)));
        const int x0 = static_cast<int>(rng.uniform_index(
            static_cast<uint64_t>(clean.width - patch + 1)));
        const bool flip = rng.bernoulli(0.5);
        const int rot = rng.uniform_int(0, 3);

        extract_patch(clean, y0, x0, patch, flip, rot, b.clean.data() + s * stride);
        extract_patch(distorted, y0, x0, patch, flip, rot, b.distorted.data() + s * stride);
        b.source_index.push_back(pi);
        b.crop_y.push_back(y0);
        b.crop_x.push_back(x0);
        b.flip.push_back(flip ? 1 : 0);
        b.rotation.push_back(static_cast<uint8_t>(rot));
    }
    return b;
}

Tensor<float> residual(const Image& clean, const Image& distorted) {
    if (!clean.same_shape(distorted)) throw std::invalid_argument("residual: shape mismatch");
    Tensor<float> out = Tensor<float>::zeros({clean.height, clean.width, clean.channels});
    for (size_t i = 0; i < clean.px.size(); ++i)
        out[static_cast<int64_t>(i)] = clean.px[i] - distorted.px[i];
    return out;
}

}  // namespace drtl::data
