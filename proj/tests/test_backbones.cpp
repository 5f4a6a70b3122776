#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "drtl/backbones.hpp"
#include "drtl/checkpoint.hpp"
#include "drtl/trainers.hpp"

using namespace drtl;
using drtl::models::ArchTag;
using drtl::models::RestorationModel;

namespace {

template <class S>
Tensor<S> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
    Tensor<S> t = Tensor<S>::zeros(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.normal() * scale);
    return t;
}

}  // namespace

TEST_CASE("zero-initialized final layer makes both architectures the identity") {
    for (ArchTag arch : {ArchTag::TinyDnCNN, ArchTag::TinyVDSR}) {
        auto model = RestorationModel<float>::make(arch, 3, 42);
        Rng rng(1);
        Tensor<float> x = random_tensor<float>({2, 16, 16, 3}, rng, 0.2);
        Tape<float> t;
        Var y = model.forward(t, t.leaf(x, false));
        const auto& out = t.val(y);
        REQUIRE(out.shape == x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) CHECK(out[i] == x[i]);
    }
}

TEST_CASE("default depths and widths per architecture") {
    auto dncnn = RestorationModel<float>::make(ArchTag::TinyDnCNN, 3, 1);
    CHECK(dncnn.depth == 6);
    CHECK(dncnn.width == 32);
    auto vdsr = RestorationModel<float>::make(ArchTag::TinyVDSR, 3, 1);
    CHECK(vdsr.depth == 8);
    CHECK(vdsr.width == 32);
}

TEST_CASE("duplicated batch rows produce identical outputs") {
    auto model = RestorationModel<float>::make(ArchTag::TinyDnCNN, 3, 7, 4, 8);
    // randomize the final layer so the network is not the identity
    Rng wr(3);
    model.params.values[model.params.index("conv3.weight")] =
        random_tensor<float>({9 * 8, 3}, wr, 0.1);

    Rng rng(2);
    Tensor<float> one = random_tensor<float>({1, 12, 12, 3}, rng, 0.3);
    Tensor<float> two = Tensor<float>::zeros({2, 12, 12, 3});
    for (int64_t i = 0; i < one.numel(); ++i) {
        two[i] = one[i];
        two[one.numel() + i] = one[i];
    }
    Tape<float> t;
    const auto& out = t.val(model.forward(t, t.leaf(two, false)));
    for (int64_t i = 0; i < one.numel(); ++i) CHECK(out[i] == out[one.numel() + i]);
}

TEST_CASE("forward_with_params: stored params untouched, override semantics") {
    auto model = RestorationModel<float>::make(ArchTag::TinyVDSR, 1, 11, 3, 4);
    Rng wr(5);
    model.params.values[model.params.index("conv2.weight")] =
        random_tensor<float>({9 * 4, 1}, wr, 0.2);

    Rng rng(6);
    Tensor<float> x = random_tensor<float>({1, 10, 10, 1}, rng, 0.3);

    Tape<float> t;
    Var in = t.leaf(x, false);
    Var via_stored = model.forward(t, in);
    Var via_override = model.forward_with_params(t, model.params.leaves(t, false), in);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(t.val(via_stored)[i] == t.val(via_override)[i]);

    // overriding the final layer with zeros turns the network into the identity
    auto zeroed = model.params.snapshot();
    zeroed.values[zeroed.index("conv2.weight")] = Tensor<float>::zeros({9 * 4, 1});
    zeroed.values[zeroed.index("conv2.bias")] = Tensor<float>::zeros({1});
    Var via_zero = model.forward_with_params(t, zeroed.leaves(t, false), in);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(t.val(via_zero)[i] == x[i]);

    std::vector<Var> short_params = {in};
    CHECK_THROWS_AS((void)model.forward_with_params(t, short_params, in),
                    std::invalid_argument);
}

TEST_CASE("L1 gradient matches central finite differences on a 2-layer instance") {
    auto model = RestorationModel<double>::make(ArchTag::TinyDnCNN, 1, 13, 2, 3);
    Rng wr(8);
    model.params.values[1] = random_tensor<double>({3}, wr, 0.05);  // conv0.bias
    model.params.values[2] = random_tensor<double>({9 * 3, 1}, wr, 0.3);
    model.params.values[3] = random_tensor<double>({1}, wr, 0.05);

    Rng rng(9);
    Tensor<double> x = random_tensor<double>({1, 8, 8, 1}, rng, 0.3);
    Tensor<double> y = Tensor<double>::zeros(x.shape);
    // keep |pred - target| away from zero so the FD step never crosses a kink
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = x[i] + 0.5;

    auto loss_value = [&](const ParamStore<double>& p) {
        Tape<double> t;
        auto model2 = model;
        model2.params = p.snapshot();
        Var pred = model2.forward(t, t.leaf(x, false));
        return t.val(train::loss_l1(t, pred, t.leaf(y, false)))[0];
    };

    Tape<double> t;
    auto theta = model.params.leaves(t, true);
    Var pred = model.forward_with_params(t, theta, t.leaf(x, false));
    Var loss = train::loss_l1(t, pred, t.leaf(y, false));
    auto grads = t.backward(loss, theta);

    const double h = 1e-3;
    for (size_t p = 0; p < model.params.size(); ++p) {
        for (int64_t i = 0; i < model.params.values[p].numel(); ++i) {
            auto plus = model.params.snapshot();
            auto minus = model.params.snapshot();
            plus.values[p][i] += h;
            minus.values[p][i] -= h;
            const double fd = (loss_value(plus) - loss_value(minus)) / (2 * h);
            const double an = t.val(grads[p])[i];
            CHECK(std::abs(fd - an) / std::max(1.0, std::abs(fd)) < 1e-4);
        }
    }
}

TEST_CASE("parameter round-trip through the checkpoint reproduces outputs bitwise") {
    auto model = RestorationModel<float>::make(ArchTag::TinyDnCNN, 3, 21, 4, 8);
    Rng wr(22);
    model.params.values[model.params.index("conv3.weight")] =
        random_tensor<float>({9 * 8, 3}, wr, 0.1);

    const auto path = std::filesystem::temp_directory_path() / "drtl_backbone_rt.ckpt";
    save_params(path, model.params);

    auto reloaded = RestorationModel<float>::make(ArchTag::TinyDnCNN, 3, 999, 4, 8);
    load_params(path, reloaded.params);

    Rng rng(23);
    Tensor<float> x = random_tensor<float>({1, 16, 16, 3}, rng, 0.3);
    Tape<float> t;
    const Tensor<float> y1 = t.val(model.forward(t, t.leaf(x, false)));
    const Tensor<float> y2 = t.val(reloaded.forward(t, t.leaf(x, false)));
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("restore_image clamps to the unit range") {
    auto model = RestorationModel<float>::make(ArchTag::TinyDnCNN, 3, 31, 3, 4);
    Rng wr(32);
    model.params.values[model.params.index("conv2.weight")] =
        random_tensor<float>({9 * 4, 3}, wr, 2.0);  // big weights force overshoot
    Image img(16, 16, 3, 0.9f);
    Image out = model.restore_image(img);
    for (float v : out.px) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }
}
