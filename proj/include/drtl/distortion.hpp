#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "drtl/image.hpp"
#include "drtl/rng.hpp"

namespace drtl::synth {

enum class DistortionKind {
    Bicubic8,
    AniBicubic4,
    GaussNoise,
    GaussBlur,
    MixedMild,
    MixedModerate,
    MixedSevere,
};

inline constexpr int kNumKinds = 7;

const char* kind_name(DistortionKind k);
DistortionKind kind_from_name(const std::string& name);
inline int kind_index(DistortionKind k) { return static_cast<int>(k); }
std::vector<DistortionKind> all_kinds();

inline bool is_mixed(DistortionKind k) {
    return k == DistortionKind::MixedMild || k == DistortionKind::MixedModerate ||
           k == DistortionKind::MixedSevere;
}

// integer severity triple for the mixed kinds; component range [0,10], sum
// constrained to the owning band
struct MixedLevels {
    int noise = 0;
    int blur = 0;
    int jpeg = 0;
    int sum() const { return noise + blur + jpeg; }
};

// inclusive [lo,hi] total-severity band
void band_bounds(DistortionKind k, int& lo, int& hi);

// Everything needed to reproduce one degradation bit-exactly on the same
// clean input.
struct DegradationRecord {
    DistortionKind kind = DistortionKind::GaussNoise;
    uint64_t noise_seed = 0;
    double noise_sigma255 = 0;
    double blur_sigma = 0;
    double blur_sigx = 0;
    double blur_sigy = 0;
    double blur_theta = 0;
    int jpeg_quality = 0;  // 0 = jpeg stage skipped
    double scale = 0;      // downsample factor, 0 = no resampling
    MixedLevels levels;

    nlohmann::json to_json() const;
    static DegradationRecord from_json(const nlohmann::json& j);
};

// ---- synthesis operations ----

Image apply_gaussian_noise(const Image& img, double sigma255, Rng& rng);
Image apply_gaussian_blur(const Image& img, double sigma);
Image apply_anisotropic_blur(const Image& img, double sigx, double sigy, double theta);
Image apply_jpeg(const Image& img, int quality);
Image bicubic_resize(const Image& img, double scale);
Image bicubic_resize_to(const Image& img, int out_h, int out_w);
MixedLevels sample_mixed_levels(DistortionKind band, Rng& rng);

// mixed-level parameter mapping
inline double level_to_noise_sigma255(int l) { return 5.0 * l; }
inline double level_to_blur_sigma(int l) { return 0.5 * l; }
inline int level_to_jpeg_quality(int l) { return 100 - 9 * l; }

std::pair<Image, DegradationRecord> degrade(const Image& img, DistortionKind kind, Rng& rng);
Image replay(const Image& clean, const DegradationRecord& record);

// ---- dataset generation ----

struct ManifestItem {
    int index = 0;
    std::string clean_path;      // relative to the manifest directory
    std::string distorted_path;  // relative to the manifest directory
    std::optional<DegradationRecord> record;
};

struct DatasetManifest {
    std::string kind;
    int count = 0;
    uint64_t seed = 0;
    std::vector<ManifestItem> items;

    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j);
};

// Writes <out_dir>/{clean,distorted}/NNNN.png plus <out_dir>/manifest.json.
// Each item derives its own seed from (seed, kind, index). Fails before any
// output is created when the source list is empty.
DatasetManifest make_auxiliary_dataset(const std::vector<std::filesystem::path>& clean_sources,
                                       DistortionKind kind,
                                       const std::filesystem::path& out_dir, uint64_t seed);

DatasetManifest load_manifest(const std::filesystem::path& manifest_path);

}  // namespace drtl::synth
