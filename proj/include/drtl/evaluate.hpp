#pragma once

#include "drtl/backbones.hpp"
#include "drtl/metrics.hpp"

namespace drtl::eval {

// Runs every distorted full image through the model (outputs clamped) and
// scores PSNR/SSIM against the clean references.
template <class S>
MetricReport evaluate_model(const models::RestorationModel<S>& model,
                            const std::vector<std::pair<Image, Image>>& pairs,
                            const std::string& regime = {}, const std::string& dataset_hash = {},
                            uint64_t seed = 0) {
    return evaluate_restorer([&](const Image& d) { return model.restore_image(d); }, pairs,
                             regime, dataset_hash, seed);
}

}  // namespace drtl::eval
