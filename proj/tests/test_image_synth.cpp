#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "drtl/clean_gen.hpp"
#include "drtl/distortion.hpp"
#include "drtl/image_io.hpp"
#include "drtl/metrics.hpp"

using namespace drtl;
using namespace drtl::synth;
namespace fs = std::filesystem;

namespace {

Image random_image(int h, int w, int c, uint64_t seed) {
    Rng rng(seed);
    Image img(h, w, c);
    for (float& v : img.px) v = static_cast<float>(rng.uniform());
    return img;
}

int reflect_idx(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

// direct O(HW k^2) convolution with an explicit normalized 2-d kernel
Image conv2d_oracle(const Image& img, const std::vector<double>& kern, int radius) {
    const int ksz = 2 * radius + 1;
    Image out(img.height, img.width, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double acc = 0;
                for (int dy = -radius; dy <= radius; ++dy)
                    for (int dx = -radius; dx <= radius; ++dx)
                        acc += kern[static_cast<size_t>(dy + radius) * ksz + (dx + radius)] *
                               img.at(reflect_idx(y + dy, img.height),
                                      reflect_idx(x + dx, img.width), c);
                out.at(y, x, c) = static_cast<float>(acc);
            }
    return out;
}

std::vector<double> iso_kernel(double sigma, int radius) {
    const int ksz = 2 * radius + 1;
    std::vector<double> k(static_cast<size_t>(ksz) * ksz);
    double total = 0;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            const double v = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            k[static_cast<size_t>(dy + radius) * ksz + (dx + radius)] = v;
            total += v;
        }
    for (double& v : k) v /= total;
    return k;
}

std::vector<double> aniso_kernel(double sigx, double sigy, double theta, int radius) {
    const int ksz = 2 * radius + 1;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double ixx = ct * ct / (sigx * sigx) + st * st / (sigy * sigy);
    const double iyy = st * st / (sigx * sigx) + ct * ct / (sigy * sigy);
    const double ixy = ct * st * (1.0 / (sigx * sigx) - 1.0 / (sigy * sigy));
    std::vector<double> k(static_cast<size_t>(ksz) * ksz);
    double total = 0;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            const double v = std::exp(-0.5 * (ixx * dx * dx + 2 * ixy * dx * dy + iyy * dy * dy));
            k[static_cast<size_t>(dy + radius) * ksz + (dx + radius)] = v;
            total += v;
        }
    for (double& v : k) v /= total;
    return k;
}

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("drtl_synth_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("gaussian noise: zero-sigma identity, calibrated std, determinism") {
    Image img = random_image(32, 32, 3, 1);
    Rng r0(10);
    Image same = apply_gaussian_noise(img, 0.0, r0);
    CHECK(same.px == img.px);

    Image gray(256, 256, 1, 0.5f);
    for (uint64_t seed : {11u, 12u, 13u}) {
        Rng rng(seed);
        Image noisy = apply_gaussian_noise(gray, 25.0, rng);
        double var = 0;
        for (size_t i = 0; i < gray.px.size(); ++i) {
            const double d = static_cast<double>(noisy.px[i]) - gray.px[i];
            var += d * d;
        }
        const double std_emp = std::sqrt(var / static_cast<double>(gray.px.size()));
        const double expect = 25.0 / 255.0;
        CHECK(std_emp == doctest::Approx(expect).epsilon(0.05));
    }

    Rng a(42), b(42);
    Image n1 = apply_gaussian_noise(img, 17.0, a);
    Image n2 = apply_gaussian_noise(img, 17.0, b);
    CHECK(n1.px == n2.px);

    Rng r(1);
    CHECK_THROWS_AS((void)apply_gaussian_noise(img, -1.0, r), std::invalid_argument);
}

TEST_CASE("gaussian blur: identities, constants, brute-force oracle") {
    Image img = random_image(32, 32, 3, 2);
    CHECK(apply_gaussian_blur(img, 0.0).px == img.px);
    CHECK(apply_gaussian_blur(img, 0.05).px == img.px);  // below the 0.1 identity threshold

    Image constant(16, 16, 3, 0.42f);
    for (double sigma : {0.5, 1.5, 3.0, 5.0}) {
        Image blurred = apply_gaussian_blur(constant, sigma);
        for (float v : blurred.px) CHECK(v == doctest::Approx(0.42f).epsilon(1e-9));
    }

    const double sigma = 1.5;
    const int radius = static_cast<int>(std::ceil(3 * sigma));
    Image blurred = apply_gaussian_blur(img, sigma);
    Image oracle = conv2d_oracle(img, iso_kernel(sigma, radius), radius);
    for (size_t i = 0; i < img.px.size(); ++i)
        CHECK(std::abs(blurred.px[i] - oracle.px[i]) < 1e-6);

    CHECK_THROWS_AS((void)apply_gaussian_blur(img, -0.5), std::invalid_argument);
}

TEST_CASE("blur kernels are normalized") {
    for (double sigma : {0.3, 1.0, 2.5, 5.0}) {
        const int radius = static_cast<int>(std::ceil(3 * sigma));
        const auto k = iso_kernel(sigma, radius);
        // the implementation normalizes the separable factors; equality with
        // this explicitly normalized kernel is covered by the oracle test, so
        // here only the sum contract matters
        double total = 0;
        for (double v : k) total += v;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        // constant image through the real implementation: exact passthrough
        Image constant(16, 16, 1, 0.37f);
        Image blurred = apply_gaussian_blur(constant, sigma);
        for (float v : blurred.px) CHECK(std::abs(v - 0.37f) < 1e-9);
    }
}

TEST_CASE("anisotropic blur: reduces to isotropic, constants, rotated oracle") {
    Image img = random_image(32, 32, 3, 3);
    for (double theta : {0.0, 0.7, 2.0}) {
        Image aniso = apply_anisotropic_blur(img, 2.0, 2.0, theta);
        Image iso = apply_gaussian_blur(img, 2.0);
        for (size_t i = 0; i < img.px.size(); ++i)
            CHECK(std::abs(aniso.px[i] - iso.px[i]) < 1e-6);
    }

    Image constant(16, 16, 1, 0.8f);
    Image blurred = apply_anisotropic_blur(constant, 3.0, 1.0, 0.9);
    for (float v : blurred.px) CHECK(v == doctest::Approx(0.8f).epsilon(1e-9));

    const double sx = 3.0, sy = 1.0, th = M_PI / 4;
    const int radius = static_cast<int>(std::ceil(3 * sx));
    Image out = apply_anisotropic_blur(img, sx, sy, th);
    Image oracle = conv2d_oracle(img, aniso_kernel(sx, sy, th, radius), radius);
    for (size_t i = 0; i < img.px.size(); ++i) CHECK(std::abs(out.px[i] - oracle.px[i]) < 1e-6);

    CHECK_THROWS_AS((void)apply_anisotropic_blur(img, 0.0, 1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS((void)apply_anisotropic_blur(img, 1.0, -2.0, 0.0), std::invalid_argument);
}

TEST_CASE("jpeg: near-lossless at q=100, quality ordering, determinism") {
    Image img = generate_clean_image(96, 96, 5);
    Image q100 = apply_jpeg(img, 100);
    CHECK(eval::psnr(q100, img) >= 40.0);

    Image q10 = apply_jpeg(img, 10);
    Image q90 = apply_jpeg(img, 90);
    CHECK(eval::psnr(q10, img) < eval::psnr(q90, img));

    auto b1 = jpeg_encode(img, 55);
    auto b2 = jpeg_encode(img, 55);
    CHECK(b1 == b2);
    CHECK(apply_jpeg(img, 55).px == apply_jpeg(img, 55).px);

    CHECK_THROWS_AS((void)apply_jpeg(img, 5), std::invalid_argument);
    CHECK_THROWS_AS((void)apply_jpeg(img, 101), std::invalid_argument);

    // grayscale path
    Image gray = random_image(32, 32, 1, 6);
    Image gq = apply_jpeg(gray, 80);
    CHECK(gq.height == 32);
    CHECK(gq.channels == 1);
}

TEST_CASE("bicubic resize: identity, constants, information-loss ordering") {
    Image img = random_image(64, 64, 3, 7);
    CHECK(bicubic_resize(img, 1.0).px == img.px);

    Image constant(24, 24, 3, 0.6f);
    for (double scale : {0.33, 0.5, 2.0, 2.7}) {
        Image resized = bicubic_resize(constant, scale);
        CHECK(resized.height == static_cast<int>(std::lround(24 * scale)));
        for (float v : resized.px) CHECK(v == doctest::Approx(0.6f).epsilon(1e-6));
    }

    auto roundtrip = [&](double factor) {
        Image small = bicubic_resize(img, 1.0 / factor);
        Image back = bicubic_resize_to(small, img.height, img.width);
        return eval::psnr(back, img);
    };
    CHECK(roundtrip(8.0) < roundtrip(2.0));

    CHECK_THROWS_AS((void)bicubic_resize(img, 0.0), std::invalid_argument);
    Image tiny(8, 8, 1, 0.5f);
    CHECK_THROWS_AS((void)bicubic_resize(tiny, 0.05), std::invalid_argument);
}

TEST_CASE("mixed level sampling: band closure, bounds, uniformity") {
    Rng rng(100);
    for (int i = 0; i < 500; ++i) {
        auto l = sample_mixed_levels(DistortionKind::MixedMild, rng);
        CHECK(l.sum() >= 9);
        CHECK(l.sum() <= 11);
    }
    for (int i = 0; i < 500; ++i) {
        auto l = sample_mixed_levels(DistortionKind::MixedSevere, rng);
        CHECK(l.sum() >= 18);
        CHECK(l.sum() <= 20);
        CHECK(l.noise >= l.sum() - 20);
        CHECK(l.blur >= l.sum() - 20);
        CHECK(l.jpeg >= l.sum() - 20);
    }
    CHECK_THROWS_AS((void)sample_mixed_levels(DistortionKind::GaussNoise, rng),
                    std::invalid_argument);

    // uniformity over admissible triples (chi-square style 3-sigma band)
    std::map<std::tuple<int, int, int>, int> counts;
    int admissible = 0;
    for (int a = 0; a <= 10; ++a)
        for (int b = 0; b <= 10; ++b)
            for (int c = 0; c <= 10; ++c)
                if (a + b + c >= 12 && a + b + c <= 17) {
                    counts[{a, b, c}] = 0;
                    ++admissible;
                }
    const int n = 20000;
    Rng urng(2028);
    for (int i = 0; i < n; ++i) {
        auto l = sample_mixed_levels(DistortionKind::MixedModerate, urng);
        auto it = counts.find({l.noise, l.blur, l.jpeg});
        REQUIRE(it != counts.end());
        ++it->second;
    }
    const double p = 1.0 / admissible;
    const double mean = n * p;
    const double sd = std::sqrt(n * p * (1 - p));
    int outliers = 0;
    for (const auto& [_, c] : counts)
        if (std::abs(c - mean) > 3 * sd) ++outliers;
    // deterministic draw; a tiny number of 3-sigma excursions would indicate
    // bias, none are expected at this sample size for this seed
    CHECK(outliers == 0);
}

TEST_CASE("degrade: dispatch, severity ordering, record replay") {
    Image clean = quantize8(generate_clean_image(96, 96, 8));

    // sigma = 0 noise record replays to the identity
    DegradationRecord r;
    r.kind = DistortionKind::GaussNoise;
    r.noise_sigma255 = 0.0;
    r.noise_seed = 7;
    CHECK(replay(clean, r).px == clean.px);

    // mild beats severe on average
    double mild_sum = 0, severe_sum = 0;
    for (int i = 0; i < 20; ++i) {
        Image c = quantize8(generate_clean_image(96, 96, 1000 + static_cast<uint64_t>(i)));
        Rng r1(mix_seed(5, static_cast<uint64_t>(i), 1));
        Rng r2(mix_seed(5, static_cast<uint64_t>(i), 2));
        mild_sum += eval::psnr(degrade(c, DistortionKind::MixedMild, r1).first, c);
        severe_sum += eval::psnr(degrade(c, DistortionKind::MixedSevere, r2).first, c);
    }
    CHECK(mild_sum / 20 > severe_sum / 20);

    // every kind: record -> json -> record replays bit-exactly
    for (auto kind : all_kinds()) {
        Rng rng(mix_seed(9, static_cast<uint64_t>(kind_index(kind))));
        auto [distorted, record] = degrade(clean, kind, rng);
        CHECK(distorted.same_shape(clean));
        auto zapped = DegradationRecord::from_json(record.to_json());
        Image again = replay(clean, zapped);
        CHECK(again.px == distorted.px);
    }
}

TEST_CASE("severity monotonicity for the three single distortions") {
    std::vector<Image> images;
    for (int i = 0; i < 20; ++i)
        images.push_back(generate_clean_image(64, 64, 2000 + static_cast<uint64_t>(i)));

    auto mean_psnr = [&](auto&& distort) {
        double total = 0;
        for (const auto& img : images) total += eval::psnr(distort(img), img);
        return total / static_cast<double>(images.size());
    };

    double prev_noise = 1e18, prev_blur = 1e18, prev_jpeg = 1e18;
    for (int level = 1; level <= 10; ++level) {
        const double pn = mean_psnr([&](const Image& img) {
            Rng rng(static_cast<uint64_t>(level) * 31 + 1);
            return apply_gaussian_noise(img, level_to_noise_sigma255(level), rng);
        });
        CHECK(pn < prev_noise);
        prev_noise = pn;

        const double pb = mean_psnr([&](const Image& img) {
            return apply_gaussian_blur(img, level_to_blur_sigma(level));
        });
        CHECK(pb < prev_blur);
        prev_blur = pb;

        const double pj = mean_psnr(
            [&](const Image& img) { return apply_jpeg(img, level_to_jpeg_quality(level)); });
        CHECK(pj < prev_jpeg);
        prev_jpeg = pj;
    }
}

TEST_CASE("make_auxiliary_dataset: layout, determinism, empty-source error") {
    const fs::path dir = fresh_dir("aux");
    std::vector<fs::path> cleans;
    for (int i = 0; i < 5; ++i) {
        const fs::path p = dir / ("clean_src_" + std::to_string(i) + ".png");
        write_png(p, generate_clean_image(96, 96, 3000 + static_cast<uint64_t>(i)));
        cleans.push_back(p);
    }

    auto m1 = make_auxiliary_dataset(cleans, DistortionKind::Bicubic8, dir / "d1", 77);
    CHECK(m1.count == 5);
    CHECK(m1.kind == "Bicubic8");
    for (const auto& it : m1.items) {
        Image c = read_png(dir / "d1" / it.clean_path);
        Image d = read_png(dir / "d1" / it.distorted_path);
        CHECK(c.same_shape(d));
        REQUIRE(it.record.has_value());
        // stored distorted equals a replay of the stored record on the
        // stored clean, after 8-bit quantization
        Image re = quantize8(replay(c, *it.record));
        CHECK(re.px == d.px);
    }

    auto m2 = make_auxiliary_dataset(cleans, DistortionKind::Bicubic8, dir / "d2", 77);
    CHECK(m1.to_json().dump() == m2.to_json().dump());
    for (const auto& it : m1.items) {
        std::ifstream f1(dir / "d1" / it.distorted_path, std::ios::binary);
        std::ifstream f2(dir / "d2" / it.distorted_path, std::ios::binary);
        std::string s1((std::istreambuf_iterator<char>(f1)), {});
        std::string s2((std::istreambuf_iterator<char>(f2)), {});
        CHECK(s1 == s2);
    }

    CHECK_THROWS_AS(
        (void)make_auxiliary_dataset({}, DistortionKind::GaussNoise, dir / "d3", 1),
        std::invalid_argument);
    CHECK(!fs::exists(dir / "d3"));
}

TEST_CASE("range closure after every synthesis op") {
    Image img = generate_clean_image(48, 48, 9);
    Rng rng(50);
    for (const Image& out :
         {apply_gaussian_noise(img, 45.0, rng), apply_gaussian_blur(img, 4.0),
          apply_anisotropic_blur(img, 3.5, 1.2, 1.1), apply_jpeg(img, 12),
          bicubic_resize(img, 0.25), bicubic_resize(img, 2.0)}) {
        for (float v : out.px) {
            CHECK(v >= 0.f);
            CHECK(v <= 1.f);
        }
    }
}
