#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "drtl/nn.hpp"
#include "drtl/rng.hpp"
#include "drtl/tape.hpp"

using drtl::IndexMap;
using drtl::Rng;
using drtl::Shape;
using drtl::Tape;
using drtl::Tensor;
using drtl::Var;

namespace {

using ScalarFn =
    std::function<Var(Tape<double>&, const std::vector<Var>&)>;

double eval_fn(const ScalarFn& f, const std::vector<Tensor<double>>& inputs) {
    Tape<double> t;
    std::vector<Var> leaves;
    for (const auto& in : inputs) leaves.push_back(t.leaf(in.clone(), true));
    return t.val(f(t, leaves))[0];
}

// central finite differences vs. reverse-mode gradients on every input coord
void check_gradients(const ScalarFn& f, std::vector<Tensor<double>> inputs, double h = 1e-5,
                     double tol = 1e-6) {
    Tape<double> t;
    std::vector<Var> leaves;
    for (const auto& in : inputs) leaves.push_back(t.leaf(in.clone(), true));
    Var loss = f(t, leaves);
    auto grads = t.backward(loss, leaves);

    for (size_t p = 0; p < inputs.size(); ++p) {
        for (int64_t i = 0; i < inputs[p].numel(); ++i) {
            auto plus = inputs;
            auto minus = inputs;
            plus[p] = inputs[p].clone();
            minus[p] = inputs[p].clone();
            plus[p][i] += h;
            minus[p][i] -= h;
            const double fd = (eval_fn(f, plus) - eval_fn(f, minus)) / (2 * h);
            const double an = t.val(grads[p])[i];
            const double err = std::abs(fd - an) / std::max(1.0, std::abs(fd));
            CAPTURE(p);
            CAPTURE(i);
            CHECK(err < tol);
        }
    }
}

Tensor<double> random_tensor(Shape s, Rng& rng, double scale = 1.0) {
    Tensor<double> t = Tensor<double>::zeros(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
    return t;
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    Rng rng(7);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);

    check_gradients(
        [](Tape<double>& t, const std::vector<Var>& v) {
            return t.sum_all(t.mul(t.add(v[0], v[1]), t.sub(v[0], v[1])));
        },
        {a, b});

    check_gradients(
        [](Tape<double>& t, const std::vector<Var>& v) {
            return t.mean_all(t.mul(t.scale(v[0], 2.5), v[0]));
        },
        {a});
}

TEST_CASE("relu and abs use correct masks away from kinks") {
    Rng rng(11);
    auto a = random_tensor({5, 5}, rng);
    // keep all entries away from 0 so FD never crosses the kink
    for (int64_t i = 0; i < a.numel(); ++i)
        if (std::abs(a[i]) < 0.1) a[i] = a[i] < 0 ? a[i] - 0.2 : a[i] + 0.2;

    check_gradients(
        [](Tape<double>& t, const std::vector<Var>& v) { return t.sum_all(t.relu(v[0])); }, {a});
    check_gradients(
        [](Tape<double>& t, const std::vector<Var>& v) { return t.sum_all(t.abs_val(v[0])); },
        {a});
}

TEST_CASE("matmul gradients for all transpose flags") {
    Rng rng(13);
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
            Shape sb = tb ? Shape{2, 4} : Shape{4, 2};
            auto A = random_tensor(sa, rng);
            auto B = random_tensor(sb, rng);
            auto C = random_tensor({3, 2}, rng);
            check_gradients(
                [ta, tb](Tape<double>& t, const std::vector<Var>& v) {
                    return t.sum_all(t.mul(t.matmul(v[0], v[1], ta, tb), v[2]));
                },
                {A, B, C});
        }
}

TEST_CASE("gather/scatter are adjoint and differentiable") {
    Rng rng(17);
    auto x = random_tensor({6}, rng);
    auto weights = random_tensor({8}, rng);
    auto map = std::make_shared<std::vector<int32_t>>(std::vector<int32_t>{0, 2, 2, 5, -1, 1, 4, 3});

    check_gradients(
        [&](Tape<double>& t, const std::vector<Var>& v) {
            Var g = t.gather(v[0], IndexMap(map), {8});
            return t.sum_all(t.mul(g, v[1]));
        },
        {x, weights});

    auto y = random_tensor({8}, rng);
    auto w2 = random_tensor({6}, rng);
    check_gradients(
        [&](Tape<double>& t, const std::vector<Var>& v) {
            Var s = t.scatter_add(v[0], IndexMap(map), {6});
            return t.sum_all(t.mul(s, v[1]));
        },
        {y, w2});

    // adjointness: <gather(x), y> == <x, scatter(y)>
    Tape<double> t;
    Var vx = t.leaf(x, false);
    Var vy = t.leaf(y, false);
    double lhs = t.val(t.sum_all(t.mul(t.gather(vx, IndexMap(map), {8}), vy)))[0];
    double rhs = t.val(t.sum_all(t.mul(vx, t.scatter_add(vy, IndexMap(map), {6}))))[0];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("reductions, broadcasts, row ops") {
    Rng rng(19);
    auto X = random_tensor({4, 5}, rng);
    auto v = random_tensor({5}, rng);
    auto u = random_tensor({4}, rng);

    check_gradients(
        [](Tape<double>& t, const std::vector<Var>& vars) {
            Var y = t.add_rowvec(vars[0], vars[1]);
            Var r = t.rowsum(y);
            Var c = t.colsum(y);
            return t.add(t.sum_all(t.mul(r, t.broadcast_scalar(t.constant_scalar(1.0), {4}))),
                         t.sum_all(t.mul(c, c)));
        },
        {X, v});

    check_gradients(
        [](Tape<double>& t, const std::vector<Var>& vars) {
            Var a = t.broadcast_rows(vars[1], 4);
            Var b = t.broadcast_cols(vars[2], 5);
            return t.sum_all(t.mul(t.mul(a, b), vars[0]));
        },
        {X, v, u});
}

TEST_CASE("softmax rows and cross entropy") {
    Rng rng(23);
    auto X = random_tensor({3, 5}, rng);
    auto W = random_tensor({3, 5}, rng);

    check_gradients(
        [](Tape<double>& t, const std::vector<Var>& v) {
            return t.sum_all(t.mul(t.softmax_rows(v[0]), v[1]));
        },
        {X, W}, 1e-5, 1e-5);

    auto labels = std::make_shared<std::vector<int>>(std::vector<int>{1, 4, 0});
    check_gradients(
        [labels](Tape<double>& t, const std::vector<Var>& v) {
            return t.cross_entropy_mean(v[0], labels);
        },
        {X}, 1e-5, 1e-5);

    // softmax rows sum to one
    Tape<double> t;
    Var s = t.softmax_rows(t.leaf(X, false));
    auto rs = t.val(t.rowsum(s));
    for (int64_t i = 0; i < 3; ++i) CHECK(rs[i] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("slice, pad, concat, transpose, scalar-var ops") {
    Rng rng(29);
    auto A = random_tensor({3, 4}, rng);
    auto B = random_tensor({2, 4}, rng);
    auto s = random_tensor({}, rng);

    check_gradients(
        [](Tape<double>& t, const std::vector<Var>& v) {
            Var c = t.concat_rows(v[0], v[1]);
            Var sl = t.slice_rows(c, 1, 4);
            Var tr = t.transpose2d(sl);
            Var sc = t.scale_by(tr, v[2]);
            Var ad = t.add_scalar_var(sc, v[2]);
            return t.sum_all(t.mul(ad, ad));
        },
        {A, B, s});
}

TEST_CASE("second order: grad of gradient matches analytic values") {
    // f(x) = sum(x^3); df/dx = 3x^2; d(sum(df/dx))/dx = 6x
    Tape<double> t;
    auto x0 = Tensor<double>::from({3}, {1.0, -2.0, 0.5});
    Var x = t.leaf(x0, true);
    Var f = t.sum_all(t.mul(t.mul(x, x), x));
    auto g1 = t.backward(f, {x});
    Var gsum = t.sum_all(g1[0]);
    auto g2 = t.backward(gsum, {x});
    for (int64_t i = 0; i < 3; ++i) {
        CHECK(t.val(g1[0])[i] == doctest::Approx(3 * x0[i] * x0[i]).epsilon(1e-12));
        CHECK(t.val(g2[0])[i] == doctest::Approx(6 * x0[i]).epsilon(1e-12));
    }
}

TEST_CASE("second order through matmul chains (bilinear curvature)") {
    // f(a,b) = sum((a*b)^2) with scalars: d2f/dadb at (a0,b0) = 4*a0*b0... use FD on grad
    Tape<double> t;
    auto a0 = Tensor<double>::from({2, 2}, {0.5, -1.0, 2.0, 0.3});
    auto b0 = Tensor<double>::from({2, 2}, {1.5, 0.7, -0.4, 1.1});
    Var a = t.leaf(a0, true);
    Var b = t.leaf(b0, true);
    Var y = t.matmul(a, b);
    Var f = t.sum_all(t.mul(y, y));
    auto g = t.backward(f, {a});
    Var probe = t.sum_all(g[0]);
    auto h = t.backward(probe, {b});

    // finite differences of (d f / d a summed) w.r.t. b
    auto fd_probe = [&](const Tensor<double>& bt) {
        Tape<double> t2;
        Var a2 = t2.leaf(a0, true);
        Var b2 = t2.leaf(bt, false);
        Var y2 = t2.matmul(a2, b2);
        Var f2 = t2.sum_all(t2.mul(y2, y2));
        auto g2 = t2.backward(f2, {a2});
        return t2.val(t2.sum_all(g2[0]))[0];
    };
    const double eps = 1e-6;
    for (int64_t i = 0; i < 4; ++i) {
        auto bp = b0.clone();
        auto bm = b0.clone();
        bp[i] += eps;
        bm[i] -= eps;
        const double fd = (fd_probe(bp) - fd_probe(bm)) / (2 * eps);
        CHECK(t.val(h[0])[i] == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("conv2d lowering matches direct convolution and differentiates") {
    Rng rng(31);
    const int64_t B = 2, H = 5, W = 6, C = 2, O = 3, K = 3, P = 1;
    auto x = random_tensor({B, H, W, C}, rng);
    auto wt = random_tensor({K * K * C, O}, rng, 0.5);
    auto bias = random_tensor({O}, rng, 0.1);

    Tape<double> t;
    Var y = drtl::conv2d(t, t.leaf(x, false), t.leaf(wt, false), t.leaf(bias, false), K, K, P);
    const auto& yv = t.val(y);
    REQUIRE(yv.shape == Shape{B, H, W, O});

    // direct NHWC convolution
    for (int64_t b = 0; b < B; ++b)
        for (int64_t oy = 0; oy < H; ++oy)
            for (int64_t ox = 0; ox < W; ++ox)
                for (int64_t oc = 0; oc < O; ++oc) {
                    double acc = bias[oc];
                    for (int64_t ky = 0; ky < K; ++ky)
                        for (int64_t kx = 0; kx < K; ++kx) {
                            const int64_t iy = oy - P + ky, ix = ox - P + kx;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            for (int64_t ic = 0; ic < C; ++ic)
                                acc += x[((b * H + iy) * W + ix) * C + ic] *
                                       wt[(ky * K + kx) * C * O + ic * O + oc];
                        }
                    CHECK(yv[((b * H + oy) * W + ox) * O + oc] ==
                          doctest::Approx(acc).epsilon(1e-10));
                }

    check_gradients(
        [&](Tape<double>& t2, const std::vector<Var>& v) {
            Var out = drtl::conv2d(t2, v[0], v[1], v[2], K, K, P);
            return t2.sum_all(t2.mul(out, out));
        },
        {x, wt, bias}, 1e-5, 1e-5);
}

TEST_CASE("maxpool and gap") {
    Rng rng(37);
    auto x = random_tensor({2, 4, 4, 3}, rng);
    check_gradients(
        [](Tape<double>& t, const std::vector<Var>& v) {
            return t.sum_all(t.mul(drtl::maxpool2x2(t, v[0]), drtl::maxpool2x2(t, v[0])));
        },
        {x}, 1e-6, 1e-5);

    check_gradients(
        [](Tape<double>& t, const std::vector<Var>& v) {
            Var p = drtl::global_avg_pool(t, v[0]);
            return t.sum_all(t.mul(p, p));
        },
        {x});

    // gap value check
    Tape<double> t;
    Var p = drtl::global_avg_pool(t, t.leaf(x, false));
    double expect = 0;
    for (int64_t i = 0; i < 16; ++i) expect += x[i * 3];  // batch 0, channel 0
    expect /= 16;
    CHECK(t.val(p)[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("adam matches a scalar re-derivation") {
    drtl::ParamStore<double> ps;
    ps.add("w", Tensor<double>::from({2}, {1.0, -0.5}));
    drtl::Adam<double> opt(ps);
    std::vector<Tensor<double>> g = {Tensor<double>::from({2}, {0.3, -0.2})};
    const double lr = 1e-2;

    double m[2] = {0, 0}, v[2] = {0, 0}, w[2] = {1.0, -0.5};
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int step = 1; step <= 3; ++step) {
        opt.step(ps, g, lr);
        for (int i = 0; i < 2; ++i) {
            const double gi = g[0][i];
            m[i] = b1 * m[i] + (1 - b1) * gi;
            v[i] = b2 * v[i] + (1 - b2) * gi * gi;
            const double mh = m[i] / (1 - std::pow(b1, step));
            const double vh = v[i] / (1 - std::pow(b2, step));
            w[i] -= lr * mh / (std::sqrt(vh) + eps);
            CHECK(ps[0][i] == doctest::Approx(w[i]).epsilon(1e-14));
        }
    }
}
