#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "drtl/distortion.hpp"
#include "drtl/image.hpp"
#include "drtl/rng.hpp"
#include "drtl/tensor.hpp"

namespace drtl::data {

struct PairItem {
    Image clean;
    Image distorted;
    std::optional<synth::DegradationRecord> record;
};

struct PairedDataset {
    std::string kind;
    std::vector<PairItem> items;

    size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
};

// Loads every pair referenced by the manifest; shapes are checked per item
// and errors name the failing index.
PairedDataset load_pairs(const std::filesystem::path& manifest_path);

struct FewShotSplit {
    std::vector<int> train_indices;
    std::vector<int> eval_indices;
};

// uniform k-subset for training, remainder for evaluation; reproducible in
// the seed
FewShotSplit few_shot_split(const PairedDataset& ds, int k, uint64_t seed);

std::vector<std::pair<Image, Image>> subset_pairs(const PairedDataset& ds,
                                                  const std::vector<int>& indices);
std::vector<std::pair<Image, Image>> all_pairs(const PairedDataset& ds);

// Aligned augmented crops. Layout [B, P, P, C]; the same crop window, flip
// and quarter-turn rotation are applied to the clean and distorted sides.
struct PatchBatch {
    Tensor<float> distorted;
    Tensor<float> clean;
    int patch = 0;
    std::vector<int> source_index;
    std::vector<int> crop_y, crop_x;
    std::vector<uint8_t> flip;      // horizontal flip applied
    std::vector<uint8_t> rotation;  // number of 90-degree turns (0..3)
};

PatchBatch sample_patch_batch(const std::vector<std::pair<Image, Image>>& pairs, int batch,
                              int patch, Rng& rng);

// crop + augmentation used by the sampler, exposed so the alignment
// invariant can be checked externally
void extract_patch(const Image& img, int y0, int x0, int patch, bool flip, int rotation,
                   float* out);

// clean - distorted, signed, not clamped; shape {H,W,C}
Tensor<float> residual(const Image& clean, const Image& distorted);

}  // namespace drtl::data
