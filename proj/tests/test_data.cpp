#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "drtl/clean_gen.hpp"
#include "drtl/data.hpp"
#include "drtl/image_io.hpp"

using namespace drtl;
namespace fs = std::filesystem;

namespace {

fs::path build_dataset(const std::string& name, int count, synth::DistortionKind kind,
                       uint64_t seed = 5) {
    fs::path dir = fs::temp_directory_path() / ("drtl_data_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir / "src");
    std::vector<fs::path> cleans;
    for (int i = 0; i < count; ++i) {
        fs::path p = dir / "src" / (std::to_string(i) + ".png");
        write_png(p, synth::generate_clean_image(96, 96, 400 + static_cast<uint64_t>(i)));
        cleans.push_back(p);
    }
    synth::make_auxiliary_dataset(cleans, kind, dir / "ds", seed);
    return dir / "ds";
}

}  // namespace

TEST_CASE("load_pairs: success, missing file names the item, empty manifest") {
    const fs::path ds = build_dataset("load", 30, synth::DistortionKind::GaussNoise);
    auto pairs = data::load_pairs(ds / "manifest.json");
    CHECK(pairs.size() == 30);
    CHECK(pairs.kind == "GaussNoise");
    for (const auto& it : pairs.items) CHECK(it.clean.same_shape(it.distorted));

    fs::remove(ds / "distorted" / "0007.png");
    try {
        (void)data::load_pairs(ds / "manifest.json");
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("item 7") != std::string::npos);
    }

    const fs::path empty_dir = fs::temp_directory_path() / "drtl_data_test_empty";
    fs::create_directories(empty_dir);
    std::ofstream f(empty_dir / "manifest.json");
    f << R"({"kind":"GaussNoise","count":0,"seed":1,"items":[]})";
    f.close();
    auto empty = data::load_pairs(empty_dir / "manifest.json");
    CHECK(empty.empty());
}

TEST_CASE("few_shot_split: sizes, determinism, sweep grid, bounds") {
    const fs::path ds = build_dataset("split", 30, synth::DistortionKind::GaussBlur);
    auto pairs = data::load_pairs(ds / "manifest.json");

    auto full = data::few_shot_split(pairs, 30, 9);
    CHECK(full.train_indices.size() == 30);
    CHECK(full.eval_indices.empty());

    for (int k : {5, 10, 15, 20, 25, 30}) {
        auto split = data::few_shot_split(pairs, k, 9);
        CHECK(static_cast<int>(split.train_indices.size()) == k);
        CHECK(static_cast<int>(split.eval_indices.size()) == 30 - k);
        std::set<int> all(split.train_indices.begin(), split.train_indices.end());
        all.insert(split.eval_indices.begin(), split.eval_indices.end());
        CHECK(all.size() == 30);  // disjoint, covers everything
    }

    auto a = data::few_shot_split(pairs, 10, 123);
    auto b = data::few_shot_split(pairs, 10, 123);
    CHECK(a.train_indices == b.train_indices);
    auto c = data::few_shot_split(pairs, 10, 124);
    CHECK(a.train_indices != c.train_indices);

    CHECK_THROWS_AS((void)data::few_shot_split(pairs, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS((void)data::few_shot_split(pairs, 31, 1), std::invalid_argument);
}

TEST_CASE("sample_patch_batch: shapes, alignment, augmentation replay, determinism") {
    const fs::path ds = build_dataset("patch", 6, synth::DistortionKind::MixedModerate);
    auto pairs = data::all_pairs(data::load_pairs(ds / "manifest.json"));

    Rng rng(77);
    auto batch = data::sample_patch_batch(pairs, 32, 64, rng);
    CHECK(batch.clean.shape == Shape{32, 64, 64, 3});
    CHECK(batch.distorted.shape == Shape{32, 64, 64, 3});

    // clean == distorted pairs stay aligned sample by sample
    std::vector<std::pair<Image, Image>> self_pairs = {{pairs[0].first, pairs[0].first}};
    Rng rng2(78);
    auto aligned = data::sample_patch_batch(self_pairs, 8, 32, rng2);
    CHECK(aligned.clean.buf->size() == aligned.distorted.buf->size());
    for (int64_t i = 0; i < aligned.clean.numel(); ++i)
        CHECK(aligned.clean[i] == aligned.distorted[i]);

    // stored flags reproduce both tensors exactly
    const int64_t stride = 64LL * 64 * 3;
    std::vector<float> buf(static_cast<size_t>(stride));
    for (int s = 0; s < 32; ++s) {
        const auto& [clean, distorted] = pairs[static_cast<size_t>(batch.source_index[s])];
        data::extract_patch(clean, batch.crop_y[s], batch.crop_x[s], 64, batch.flip[s],
                            batch.rotation[s], buf.data());
        for (int64_t i = 0; i < stride; ++i) CHECK(buf[static_cast<size_t>(i)] ==
                                                   batch.clean[s * stride + i]);
        data::extract_patch(distorted, batch.crop_y[s], batch.crop_x[s], 64, batch.flip[s],
                            batch.rotation[s], buf.data());
        for (int64_t i = 0; i < stride; ++i) CHECK(buf[static_cast<size_t>(i)] ==
                                                   batch.distorted[s * stride + i]);
    }

    Rng r1(5), r2(5);
    auto b1 = data::sample_patch_batch(pairs, 4, 48, r1);
    auto b2 = data::sample_patch_batch(pairs, 4, 48, r2);
    CHECK(*b1.clean.buf == *b2.clean.buf);
    CHECK(*b1.distorted.buf == *b2.distorted.buf);

    std::vector<std::pair<Image, Image>> tiny = {{Image(16, 16, 3, 0.5f), Image(16, 16, 3, 0.5f)}};
    Rng r3(6);
    CHECK_THROWS_AS((void)data::sample_patch_batch(tiny, 1, 64, r3), std::invalid_argument);
}

TEST_CASE("rotation and flip produce distinct lattice transforms") {
    // 2x2 marker patch checked through all 8 (flip, rot) combos
    Image img(8, 8, 1, 0.f);
    img.at(0, 0, 0) = 0.1f;
    img.at(0, 1, 0) = 0.2f;
    img.at(1, 0, 0) = 0.3f;
    img.at(1, 1, 0) = 0.4f;
    std::set<std::vector<float>> variants;
    std::vector<float> out(4);
    for (int flip = 0; flip < 2; ++flip)
        for (int rot = 0; rot < 4; ++rot) {
            data::extract_patch(img, 0, 0, 2, flip != 0, rot, out.data());
            variants.insert(out);
        }
    CHECK(variants.size() == 8);
}

TEST_CASE("residual: zeros, shift, antisymmetry, noise statistics") {
    Image a = synth::generate_clean_image(64, 64, 31);
    auto zero = data::residual(a, a);
    for (int64_t i = 0; i < zero.numel(); ++i) CHECK(zero[i] == 0.f);

    Image shifted = a;
    for (float& v : shifted.px) v = std::max(0.f, v - 0.1f);
    // stay away from the clamp so the shift is exact
    Image base = a;
    for (float& v : base.px) v = 0.2f + 0.6f * v;
    Image down = base;
    for (float& v : down.px) v -= 0.1f;
    auto res = data::residual(base, down);
    for (int64_t i = 0; i < res.numel(); ++i)
        CHECK(res[i] == doctest::Approx(0.1f).epsilon(1e-5));

    Image b = synth::generate_clean_image(64, 64, 32);
    auto ab = data::residual(a, b);
    auto ba = data::residual(b, a);
    for (int64_t i = 0; i < ab.numel(); ++i) CHECK(ab[i] == -ba[i]);

    Image gray(128, 128, 1, 0.5f);
    Rng rng(33);
    Image noisy = synth::apply_gaussian_noise(gray, 25.0, rng);
    auto nres = data::residual(gray, noisy);
    double var = 0;
    for (int64_t i = 0; i < nres.numel(); ++i) var += static_cast<double>(nres[i]) * nres[i];
    const double std_emp = std::sqrt(var / static_cast<double>(nres.numel()));
    CHECK(std_emp == doctest::Approx(25.0 / 255.0).epsilon(0.05));

    Image small(32, 32, 1, 0.5f);
    CHECK_THROWS_AS((void)data::residual(a, small), std::invalid_argument);
}
