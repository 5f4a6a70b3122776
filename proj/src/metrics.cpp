#include "drtl/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace drtl::eval {

namespace {

std::vector<double> to_luma(const Image& img) {
    std::vector<double> y(static_cast<size_t>(img.height) * img.width);
    if (img.channels == 1) {
        for (size_t i = 0; i < y.size(); ++i) y[i] = img.px[i];
    } else {
        for (size_t i = 0; i < y.size(); ++i) {
            const float* p = &img.px[i * 3];
            y[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        }
    }
    return y;
}

constexpr int kWin = 11;

const double* ssim_window_1d() {
    static double g[kWin];
    static bool init = false;
    if (!init) {
        const double sigma = 1.5;
        double total = 0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - kWin / 2;
            g[i] = std::exp(-d * d / (2 * sigma * sigma));
            total += g[i];
        }
        for (double& v : g) v /= total;
        init = true;
    }
    return g;
}

// valid-mode separable filtering with the normalized 1-d window
std::vector<double> window_filter_valid(const std::vector<double>& src, int h, int w, int& oh,
                                        int& ow) {
    const double* g = ssim_window_1d();
    ow = w - kWin + 1;
    oh = h - kWin + 1;
    std::vector<double> rows(static_cast<size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int k = 0; k < kWin; ++k) acc += g[k] * src[static_cast<size_t>(y) * w + x + k];
            rows[static_cast<size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int k = 0; k < kWin; ++k) acc += g[k] * rows[static_cast<size_t>(y + k) * ow + x];
            out[static_cast<size_t>(y) * ow + x] = acc;
        }
    return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
    double mse = 0;
    for (size_t i = 0; i < a.px.size(); ++i) {
        const double d = static_cast<double>(a.px[i]) - static_cast<double>(b.px[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(a.px.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
    if (a.height < kWin || a.width < kWin)
        throw std::invalid_argument("ssim: image smaller than 11x11 window");

    const auto ya = to_luma(a);
    const auto yb = to_luma(b);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int h = a.height, wd = a.width;

    std::vector<double> aa(ya.size()), bb(ya.size()), ab(ya.size());
    for (size_t i = 0; i < ya.size(); ++i) {
        aa[i] = ya[i] * ya[i];
        bb[i] = yb[i] * yb[i];
        ab[i] = ya[i] * yb[i];
    }

    int oh = 0, ow = 0;
    const auto mu_a = window_filter_valid(ya, h, wd, oh, ow);
    const auto mu_b = window_filter_valid(yb, h, wd, oh, ow);
    const auto m_aa = window_filter_valid(aa, h, wd, oh, ow);
    const auto m_bb = window_filter_valid(bb, h, wd, oh, ow);
    const auto m_ab = window_filter_valid(ab, h, wd, oh, ow);

    double total = 0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        const double mx = mu_a[i], my = mu_b[i];
        const double vx = m_aa[i] - mx * mx;
        const double vy = m_bb[i] - my * my;
        const double cov = m_ab[i] - mx * my;
        total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                 ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

double aggregate_psnr(const std::vector<double>& values, bool exclude_inf) {
    double total = 0;
    int64_t n = 0;
    for (double v : values) {
        if (std::isinf(v)) {
            if (exclude_inf) continue;
            total += kPsnrCapDb;
        } else {
            total += v;
        }
        ++n;
    }
    if (n == 0) throw std::invalid_argument("aggregate_psnr: no values");
    return total / static_cast<double>(n);
}

MetricReport evaluate_restorer(const std::function<Image(const Image&)>& restore,
                               const std::vector<std::pair<Image, Image>>& pairs,
                               const std::string& regime, const std::string& dataset_hash,
                               uint64_t seed) {
    if (pairs.empty()) throw std::invalid_argument("evaluate_restorer: empty eval set");
    MetricReport rep;
    rep.regime = regime;
    rep.dataset_hash = dataset_hash;
    rep.seed = seed;
    for (const auto& [clean, distorted] : pairs) {
        Image restored = restore(distorted);
        restored.clamp01();
        rep.per_image_psnr.push_back(psnr(restored, clean));
        rep.per_image_ssim.push_back(ssim(restored, clean));
    }
    rep.mean_psnr = aggregate_psnr(rep.per_image_psnr);
    double s = 0;
    for (double v : rep.per_image_ssim) s += v;
    rep.mean_ssim = s / static_cast<double>(rep.per_image_ssim.size());
    return rep;
}

}  // namespace drtl::eval
