#include "drtl/clean_gen.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "drtl/rng.hpp"

namespace drtl::synth {

namespace {

// two box-blur passes, replicate boundary
void smooth3(std::vector<double>& f, int h, int w) {
    std::vector<double> tmp(f.size());
    for (int pass = 0; pass < 2; ++pass) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = std::clamp(y + dy, 0, h - 1);
                        const int xx = std::clamp(x + dx, 0, w - 1);
                        acc += f[static_cast<size_t>(yy) * w + xx];
                    }
                tmp[static_cast<size_t>(y) * w + x] = acc / 9.0;
            }
        f.swap(tmp);
    }
}

}  // namespace

Image generate_clean_image(int height, int width, uint64_t seed) {
    Rng rng(mix_seed(seed, 0x636c65616eULL));
    const int h = height, w = width;
    std::vector<double> luma(static_cast<size_t>(h) * w, 0.0);

    auto idx = [w](int y, int x) { return static_cast<size_t>(y) * w + x; };

    // low-frequency shading
    const double a0 = rng.uniform(0.3, 0.7), ax = rng.uniform(-0.3, 0.3),
                 ay = rng.uniform(-0.3, 0.3), axy = rng.uniform(-0.2, 0.2);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double u = static_cast<double>(x) / w, v = static_cast<double>(y) / h;
            luma[idx(y, x)] = a0 + ax * u + ay * v + axy * u * v;
        }

    // soft elliptical blobs
    const int blobs = rng.uniform_int(3, 6);
    for (int b = 0; b < blobs; ++b) {
        const double cx = rng.uniform(0, w), cy = rng.uniform(0, h);
        const double rx = rng.uniform(0.08, 0.3) * w, ry = rng.uniform(0.08, 0.3) * h;
        const double amp = rng.uniform(-0.35, 0.35);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                luma[idx(y, x)] += amp * std::exp(-(dx * dx + dy * dy));
            }
    }

    // hard edges: rectangles and oriented half-planes
    const int shapes = rng.uniform_int(2, 4);
    for (int s = 0; s < shapes; ++s) {
        const double amp = rng.uniform(-0.3, 0.3);
        if (rng.bernoulli(0.5)) {
            const int x0 = rng.uniform_int(0, w - 2), y0 = rng.uniform_int(0, h - 2);
            const int x1 = rng.uniform_int(x0 + 1, w - 1), y1 = rng.uniform_int(y0 + 1, h - 1);
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) luma[idx(y, x)] += amp;
        } else {
            const double theta = rng.uniform(0, 2 * M_PI);
            const double nx = std::cos(theta), ny = std::sin(theta);
            const double d0 = rng.uniform(0.2, 0.8) * (nx * w + ny * h);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    if (nx * x + ny * y > d0) luma[idx(y, x)] += amp;
        }
    }

    // plaid texture + smoothed noise
    const double f1 = rng.uniform(0.05, 0.22), f2 = rng.uniform(0.05, 0.22);
    const double p1 = rng.uniform(0, 2 * M_PI), p2 = rng.uniform(0, 2 * M_PI);
    const double tex_amp = rng.uniform(0.02, 0.06);
    std::vector<double> noise(luma.size());
    for (double& v : noise) v = rng.normal();
    smooth3(noise, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            luma[idx(y, x)] += tex_amp * (std::sin(2 * M_PI * f1 * x + p1) +
                                          std::sin(2 * M_PI * f2 * y + p2)) +
                               0.04 * noise[idx(y, x)];

    // normalize luma into [0.04, 0.96]
    double lo = luma[0], hi = luma[0];
    for (double v : luma) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo > 1e-9 ? hi - lo : 1.0;
    for (double& v : luma) v = 0.04 + 0.92 * (v - lo) / span;

    // correlated color: slowly varying tint around neutral
    const double tr = rng.uniform(-0.12, 0.12), tg = rng.uniform(-0.12, 0.12),
                 tb = rng.uniform(-0.12, 0.12);
    const double wx = rng.uniform(-0.1, 0.1), wy = rng.uniform(-0.1, 0.1);
    Image img(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double l = luma[idx(y, x)];
            const double sw = wx * (static_cast<double>(x) / w - 0.5) +
                              wy * (static_cast<double>(y) / h - 0.5);
            img.at(y, x, 0) = static_cast<float>(std::clamp(l * (1.0 + tr + sw), 0.0, 1.0));
            img.at(y, x, 1) = static_cast<float>(std::clamp(l * (1.0 + tg), 0.0, 1.0));
            img.at(y, x, 2) = static_cast<float>(std::clamp(l * (1.0 + tb - sw), 0.0, 1.0));
        }
    return img;
}

}  // namespace drtl::synth
