#include "drtl/distortion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "drtl/image_io.hpp"

namespace drtl::synth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kKindNames[kNumKinds] = {
    "Bicubic8", "AniBicubic4", "GaussNoise", "GaussBlur",
    "MixedMild", "MixedModerate", "MixedSevere",
};

// symmetric reflection (edge repeated): ...2 1 0 | 0 1 2 ... n-1 | n-1 n-2...
int reflect(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

std::vector<double> gaussian_kernel_1d(double sigma, int radius) {
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double total = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        total += k[static_cast<size_t>(i + radius)];
    }
    for (double& v : k) v /= total;
    return k;
}

// Catmull-Rom cubic (a = -0.5)
double cubic_weight(double t) {
    t = std::abs(t);
    if (t <= 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
    if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
    return 0.0;
}

}  // namespace

const char* kind_name(DistortionKind k) { return kKindNames[kind_index(k)]; }

DistortionKind kind_from_name(const std::string& name) {
    for (int i = 0; i < kNumKinds; ++i)
        if (name == kKindNames[i]) return static_cast<DistortionKind>(i);
    throw std::invalid_argument("unknown distortion kind: " + name);
}

std::vector<DistortionKind> all_kinds() {
    std::vector<DistortionKind> out;
    for (int i = 0; i < kNumKinds; ++i) out.push_back(static_cast<DistortionKind>(i));
    return out;
}

void band_bounds(DistortionKind k, int& lo, int& hi) {
    switch (k) {
        case DistortionKind::MixedMild: lo = 9; hi = 11; return;
        case DistortionKind::MixedModerate: lo = 12; hi = 17; return;
        case DistortionKind::MixedSevere: lo = 18; hi = 20; return;
        default: throw std::invalid_argument("band_bounds: not a mixed kind");
    }
}

json DegradationRecord::to_json() const {
    json j;
    j["kind"] = kind_name(kind);
    j["noise_seed"] = noise_seed;
    j["noise_sigma255"] = noise_sigma255;
    j["blur_sigma"] = blur_sigma;
    j["blur_sigx"] = blur_sigx;
    j["blur_sigy"] = blur_sigy;
    j["blur_theta"] = blur_theta;
    j["jpeg_quality"] = jpeg_quality;
    j["scale"] = scale;
    j["levels"] = {{"noise", levels.noise}, {"blur", levels.blur}, {"jpeg", levels.jpeg}};
    return j;
}

DegradationRecord DegradationRecord::from_json(const json& j) {
    DegradationRecord r;
    r.kind = kind_from_name(j.at("kind").get<std::string>());
    r.noise_seed = j.at("noise_seed").get<uint64_t>();
    r.noise_sigma255 = j.at("noise_sigma255").get<double>();
    r.blur_sigma = j.at("blur_sigma").get<double>();
    r.blur_sigx = j.at("blur_sigx").get<double>();
    r.blur_sigy = j.at("blur_sigy").get<double>();
    r.blur_theta = j.at("blur_theta").get<double>();
    r.jpeg_quality = j.at("jpeg_quality").get<int>();
    r.scale = j.at("scale").get<double>();
    r.levels.noise = j.at("levels").at("noise").get<int>();
    r.levels.blur = j.at("levels").at("blur").get<int>();
    r.levels.jpeg = j.at("levels").at("jpeg").get<int>();
    return r;
}

Image apply_gaussian_noise(const Image& img, double sigma255, Rng& rng) {
    if (sigma255 < 0) throw std::invalid_argument("apply_gaussian_noise: sigma must be >= 0");
    const double std01 = sigma255 / 255.0;
    Image out = img;
    for (float& v : out.px) {
        v = static_cast<float>(v + rng.normal() * std01);
        v = std::min(1.f, std::max(0.f, v));
    }
    return out;
}

Image apply_gaussian_blur(const Image& img, double sigma) {
    if (sigma < 0) throw std::invalid_argument("apply_gaussian_blur: sigma must be >= 0");
    if (sigma < 0.1) return img;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    const auto k = gaussian_kernel_1d(sigma, radius);

    const int h = img.height, w = img.width, c = img.channels;
    std::vector<double> tmp(img.px.size());
    // horizontal pass
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[static_cast<size_t>(i + radius)] * img.at(y, reflect(x + i, w), ch);
                tmp[(static_cast<size_t>(y) * w + x) * c + ch] = acc;
            }
    // vertical pass
    Image out(h, w, c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[static_cast<size_t>(i + radius)] *
                           tmp[(static_cast<size_t>(reflect(y + i, h)) * w + x) * c + ch];
                out.at(y, x, ch) = static_cast<float>(std::min(1.0, std::max(0.0, acc)));
            }
    return out;
}

Image apply_anisotropic_blur(const Image& img, double sigx, double sigy, double theta) {
    if (sigx <= 0 || sigy <= 0)
        throw std::invalid_argument("apply_anisotropic_blur: sigmas must be > 0");
    const int radius = static_cast<int>(std::ceil(3.0 * std::max(sigx, sigy)));
    const int ksz = 2 * radius + 1;

    // inverse covariance of the rotated Gaussian
    const double ct = std::cos(theta), st = std::sin(theta);
    const double ixx = ct * ct / (sigx * sigx) + st * st / (sigy * sigy);
    const double iyy = st * st / (sigx * sigx) + ct * ct / (sigy * sigy);
    const double ixy = ct * st * (1.0 / (sigx * sigx) - 1.0 / (sigy * sigy));

    std::vector<double> kern(static_cast<size_t>(ksz) * ksz);
    double total = 0;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            const double q = ixx * dx * dx + 2 * ixy * dx * dy + iyy * dy * dy;
            const double v = std::exp(-0.5 * q);
            kern[static_cast<size_t>(dy + radius) * ksz + (dx + radius)] = v;
            total += v;
        }
    for (double& v : kern) v /= total;

    const int h = img.height, w = img.width, c = img.channels;
    Image out(h, w, c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0;
                for (int dy = -radius; dy <= radius; ++dy)
                    for (int dx = -radius; dx <= radius; ++dx)
                        acc += kern[static_cast<size_t>(dy + radius) * ksz + (dx + radius)] *
                               img.at(reflect(y + dy, h), reflect(x + dx, w), ch);
                out.at(y, x, ch) = static_cast<float>(std::min(1.0, std::max(0.0, acc)));
            }
    return out;
}

Image apply_jpeg(const Image& img, int quality) {
    if (quality < 10 || quality > 100)
        throw std::invalid_argument("apply_jpeg: quality must be in [10,100]");
    const auto bytes = jpeg_encode(img, quality);
    return jpeg_decode(bytes, img.height, img.width, img.channels);
}

namespace {

// separable Catmull-Rom resample of one axis (horizontal when `horizontal`),
// anti-aliased when shrinking; clamp-to-edge boundary
std::vector<double> resample_pass(const std::vector<double>& src, int h, int w, int c, int n_out,
                                  bool horizontal) {
    const int n_in = horizontal ? w : h;
    const double scale = static_cast<double>(n_out) / n_in;
    const double filter_scale = scale < 1.0 ? scale : 1.0;
    const double support = 2.0 / filter_scale;

    // precompute taps per output coordinate
    std::vector<std::vector<std::pair<int, double>>> taps(static_cast<size_t>(n_out));
    for (int o = 0; o < n_out; ++o) {
        const double center = (o + 0.5) / scale - 0.5;
        const int lo = static_cast<int>(std::floor(center - support)) + 1;
        const int hi = static_cast<int>(std::floor(center + support));
        double wsum = 0;
        auto& t = taps[static_cast<size_t>(o)];
        for (int i = lo; i <= hi; ++i) {
            const double wt = cubic_weight((center - i) * filter_scale);
            if (wt == 0.0) continue;
            t.emplace_back(std::clamp(i, 0, n_in - 1), wt);
            wsum += wt;
        }
        for (auto& [idx, wt] : t) wt /= wsum;
    }

    const int oh = horizontal ? h : n_out;
    const int ow = horizontal ? n_out : w;
    std::vector<double> dst(static_cast<size_t>(oh) * ow * c);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const auto& t = taps[static_cast<size_t>(horizontal ? x : y)];
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0;
                for (const auto& [idx, wt] : t) {
                    const size_t si = horizontal
                                          ? (static_cast<size_t>(y) * w + idx) * c + ch
                                          : (static_cast<size_t>(idx) * w + x) * c + ch;
                    acc += wt * src[si];
                }
                dst[(static_cast<size_t>(y) * ow + x) * c + ch] = acc;
            }
        }
    return dst;
}

}  // namespace

Image bicubic_resize_to(const Image& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("bicubic_resize: output dimensions must be >= 1");
    std::vector<double> work(img.px.begin(), img.px.end());
    work = resample_pass(work, img.height, img.width, img.channels, out_w, true);
    work = resample_pass(work, img.height, out_w, img.channels, out_h, false);
    Image out(out_h, out_w, img.channels);
    for (size_t i = 0; i < out.px.size(); ++i)
        out.px[i] = static_cast<float>(std::min(1.0, std::max(0.0, work[i])));
    return out;
}

Image bicubic_resize(const Image& img, double scale) {
    if (scale <= 0) throw std::invalid_argument("bicubic_resize: scale must be > 0");
    if (scale == 1.0) return img;
    const int oh = static_cast<int>(std::lround(img.height * scale));
    const int ow = static_cast<int>(std::lround(img.width * scale));
    if (oh < 1 || ow < 1) throw std::invalid_argument("bicubic_resize: degenerate output size");
    return bicubic_resize_to(img, oh, ow);
}

MixedLevels sample_mixed_levels(DistortionKind band, Rng& rng) {
    int lo = 0, hi = 0;
    band_bounds(band, lo, hi);
    // uniform over admissible triples by rejection
    while (true) {
        MixedLevels l;
        l.noise = rng.uniform_int(0, 10);
        l.blur = rng.uniform_int(0, 10);
        l.jpeg = rng.uniform_int(0, 10);
        if (l.sum() >= lo && l.sum() <= hi) return l;
    }
}

namespace {

Image apply_mixed(const Image& img, const DegradationRecord& r) {
    // order: blur -> noise -> jpeg
    Image out = apply_gaussian_blur(img, r.blur_sigma);
    Rng noise_rng(r.noise_seed);
    out = apply_gaussian_noise(out, r.noise_sigma255, noise_rng);
    if (r.jpeg_quality > 0) out = apply_jpeg(out, r.jpeg_quality);
    return out;
}

Image apply_scaled(const Image& img, const DegradationRecord& r) {
    Image work = img;
    if (r.kind == DistortionKind::AniBicubic4)
        work = apply_anisotropic_blur(work, r.blur_sigx, r.blur_sigy, r.blur_theta);
    const double down = 1.0 / r.scale;
    Image small = bicubic_resize(work, down);
    return bicubic_resize_to(small, img.height, img.width);
}

}  // namespace

std::pair<Image, DegradationRecord> degrade(const Image& img, DistortionKind kind, Rng& rng) {
    DegradationRecord r;
    r.kind = kind;
    switch (kind) {
        case DistortionKind::Bicubic8:
            r.scale = 8.0;
            break;
        case DistortionKind::AniBicubic4:
            r.scale = 4.0;
            r.blur_sigx = rng.uniform(1.0, 4.0);
            r.blur_sigy = rng.uniform(1.0, 4.0);
            r.blur_theta = rng.uniform(0.0, M_PI);
            break;
        case DistortionKind::GaussNoise:
            r.noise_sigma255 = rng.uniform(0.0, 50.0);
            r.noise_seed = rng.next_u64();
            break;
        case DistortionKind::GaussBlur:
            r.blur_sigma = rng.uniform(0.0, 5.0);
            break;
        case DistortionKind::MixedMild:
        case DistortionKind::MixedModerate:
        case DistortionKind::MixedSevere:
            r.levels = sample_mixed_levels(kind, rng);
            r.noise_sigma255 = level_to_noise_sigma255(r.levels.noise);
            r.blur_sigma = level_to_blur_sigma(r.levels.blur);
            r.jpeg_quality = r.levels.jpeg > 0 ? level_to_jpeg_quality(r.levels.jpeg) : 0;
            r.noise_seed = rng.next_u64();
            break;
    }
    return {replay(img, r), r};
}

Image replay(const Image& clean, const DegradationRecord& r) {
    switch (r.kind) {
        case DistortionKind::Bicubic8:
        case DistortionKind::AniBicubic4:
            return apply_scaled(clean, r);
        case DistortionKind::GaussNoise: {
            Rng noise_rng(r.noise_seed);
            return apply_gaussian_noise(clean, r.noise_sigma255, noise_rng);
        }
        case DistortionKind::GaussBlur:
            return apply_gaussian_blur(clean, r.blur_sigma);
        case DistortionKind::MixedMild:
        case DistortionKind::MixedModerate:
        case DistortionKind::MixedSevere:
            return apply_mixed(clean, r);
    }
    throw std::logic_error("replay: unknown kind");
}

json DatasetManifest::to_json() const {
    json j;
    j["kind"] = kind;
    j["count"] = count;
    j["seed"] = seed;
    j["items"] = json::array();
    for (const auto& it : items) {
        json ji;
        ji["index"] = it.index;
        ji["clean"] = it.clean_path;
        ji["distorted"] = it.distorted_path;
        if (it.record) ji["record"] = it.record->to_json();
        j["items"].push_back(ji);
    }
    return j;
}

DatasetManifest DatasetManifest::from_json(const json& j) {
    DatasetManifest m;
    m.kind = j.at("kind").get<std::string>();
    m.count = j.at("count").get<int>();
    m.seed = j.at("seed").get<uint64_t>();
    for (const auto& ji : j.at("items")) {
        ManifestItem it;
        it.index = ji.at("index").get<int>();
        it.clean_path = ji.at("clean").get<std::string>();
        it.distorted_path = ji.at("distorted").get<std::string>();
        if (ji.contains("record")) it.record = DegradationRecord::from_json(ji["record"]);
        m.items.push_back(std::move(it));
    }
    return m;
}

DatasetManifest make_auxiliary_dataset(const std::vector<fs::path>& clean_sources,
                                       DistortionKind kind, const fs::path& out_dir,
                                       uint64_t seed) {
    if (clean_sources.empty())
        throw std::invalid_argument("make_auxiliary_dataset: empty clean source");
    for (const auto& p : clean_sources)
        if (!fs::exists(p))
            throw std::runtime_error("make_auxiliary_dataset: missing source " + p.string());

    fs::create_directories(out_dir / "clean");
    fs::create_directories(out_dir / "distorted");

    DatasetManifest m;
    m.kind = kind_name(kind);
    m.count = static_cast<int>(clean_sources.size());
    m.seed = seed;

    char name[32];
    for (size_t i = 0; i < clean_sources.size(); ++i) {
        Image clean = read_png(clean_sources[i]);
        clean.validate("clean source");
        Rng item_rng(mix_seed(seed, static_cast<uint64_t>(kind_index(kind)),
                              static_cast<uint64_t>(i)));
        auto [distorted, record] = degrade(clean, kind, item_rng);

        std::snprintf(name, sizeof(name), "%04zu.png", i);
        ManifestItem it;
        it.index = static_cast<int>(i);
        it.clean_path = std::string("clean/") + name;
        it.distorted_path = std::string("distorted/") + name;
        it.record = record;
        write_png(out_dir / it.clean_path, clean);
        write_png(out_dir / it.distorted_path, distorted);
        m.items.push_back(std::move(it));
    }

    std::ofstream f(out_dir / "manifest.json");
    f << m.to_json().dump(2) << "\n";
    if (!f) throw std::runtime_error("make_auxiliary_dataset: cannot write manifest");
    return m;
}

DatasetManifest load_manifest(const fs::path& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw std::runtime_error("load_manifest: cannot open " + manifest_path.string());
    json j = json::parse(f);
    return DatasetManifest::from_json(j);
}

}  // namespace drtl::synth
