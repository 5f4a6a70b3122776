#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "drtl/image.hpp"
#include "drtl/nn.hpp"
#include "drtl/rng.hpp"
#include "drtl/tape.hpp"

namespace drtl::models {

enum class ArchTag { TinyDnCNN, TinyVDSR };

inline const char* arch_name(ArchTag a) {
    return a == ArchTag::TinyDnCNN ? "tiny_dncnn" : "tiny_vdsr";
}

inline ArchTag arch_from_name(const std::string& s) {
    if (s == "tiny_dncnn") return ArchTag::TinyDnCNN;
    if (s == "tiny_vdsr") return ArchTag::TinyVDSR;
    throw std::invalid_argument("unknown architecture: " + s);
}

inline int default_depth(ArchTag a) { return a == ArchTag::TinyDnCNN ? 6 : 8; }
inline int default_width(ArchTag) { return 32; }

// Same-resolution residual restoration stack: conv3x3+relu layers with a
// global skip connection, so a zero final layer is the identity mapping. The
// last conv is zero-initialized. Parameters live in a flat named store so
// look-ahead (functional) forward passes can swap them without touching the
// model.
template <class S>
struct RestorationModel {
    ArchTag arch = ArchTag::TinyDnCNN;
    int depth = 0;
    int width = 0;
    int channels = 3;
    ParamStore<S> params;

    static RestorationModel make(ArchTag arch, int channels, uint64_t seed, int depth = 0,
                                 int width = 0) {
        RestorationModel m;
        m.arch = arch;
        m.depth = depth > 0 ? depth : default_depth(arch);
        m.width = width > 0 ? width : default_width(arch);
        m.channels = channels;
        if (m.depth < 2) throw std::invalid_argument("restoration model: depth must be >= 2");
        Rng rng(mix_seed(seed, 0x6d6f64656cULL));
        for (int l = 0; l < m.depth; ++l) {
            const int cin = l == 0 ? channels : m.width;
            const int cout = l == m.depth - 1 ? channels : m.width;
            const std::string base = "conv" + std::to_string(l);
            if (l == m.depth - 1) {
                m.params.add(base + ".weight", Tensor<S>::zeros({9 * cin, cout}));
                m.params.add(base + ".bias", Tensor<S>::zeros({cout}));
            } else {
                m.params.add(base + ".weight", he_normal<S>({9 * cin, cout}, 9 * cin, rng));
                m.params.add(base + ".bias", Tensor<S>::zeros({cout}));
            }
        }
        return m;
    }

    // functional forward: runs with the supplied parameter vars, stored
    // parameters untouched; differentiable through `p`
    Var forward_with_params(Tape<S>& t, const std::vector<Var>& p, Var x) const {
        if (p.size() != params.size())
            throw std::invalid_argument("forward_with_params: parameter schema mismatch");
        const auto& xs = t.val(x).shape;
        if (xs.size() != 4 || xs[3] != channels)
            throw std::invalid_argument("forward: input must be [B,H,W,C]");
        Var h = x;
        for (int l = 0; l < depth; ++l) {
            h = conv2d(t, h, p[static_cast<size_t>(2 * l)], p[static_cast<size_t>(2 * l + 1)], 3,
                       3, 1);
            if (l != depth - 1) h = t.relu(h);
        }
        return t.add(x, h);  // predicts the residual
    }

    Var forward(Tape<S>& t, Var x) const {
        return forward_with_params(t, params.leaves(t, false), x);
    }

    // single-image inference; output clamped to [0,1]
    Image restore_image(const Image& img) const {
        Tape<S> t;
        Tensor<S> x = Tensor<S>::zeros({1, img.height, img.width, img.channels});
        for (size_t i = 0; i < img.px.size(); ++i)
            x[static_cast<int64_t>(i)] = static_cast<S>(img.px[i]);
        Var y = forward(t, t.leaf(std::move(x), false));
        const auto& out = t.val(y);
        Image res(img.height, img.width, img.channels);
        for (size_t i = 0; i < res.px.size(); ++i)
            res.px[i] = static_cast<float>(out[static_cast<int64_t>(i)]);
        res.clamp01();
        return res;
    }
};

}  // namespace drtl::models
