#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "drtl/rng.hpp"
#include "drtl/tape.hpp"

namespace drtl {

// ---------------------------------------------------------------------------
// index-map builders (conv lowering, pooling, global average pooling)
// All activations use NHWC layout so the im2col GEMM writes output directly
// in layout order.
// ---------------------------------------------------------------------------

inline IndexMap im2col_map(int64_t b, int64_t h, int64_t w, int64_t c, int64_t kh, int64_t kw,
                           int64_t pad) {
    static std::unordered_map<std::string, IndexMap> cache;
    static std::mutex cache_mutex;
    const std::string key = std::to_string(b) + "," + std::to_string(h) + "," + std::to_string(w) +
                            "," + std::to_string(c) + "," + std::to_string(kh) + "," +
                            std::to_string(kw) + "," + std::to_string(pad);
    {
        std::lock_guard<std::mutex> lock(cache_mutex);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }

    const int64_t oh = h + 2 * pad - kh + 1;
    const int64_t ow = w + 2 * pad - kw + 1;
    if (oh < 1 || ow < 1) throw std::invalid_argument("im2col: kernel larger than padded input");
    auto map = std::make_shared<std::vector<int32_t>>();
    map->resize(static_cast<size_t>(b * oh * ow * kh * kw * c));
    int64_t p = 0;
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox)
                for (int64_t ky = 0; ky < kh; ++ky) {
                    const int64_t iy = oy - pad + ky;
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const int64_t ix = ox - pad + kx;
                        const bool in = iy >= 0 && iy < h && ix >= 0 && ix < w;
                        const int64_t base = ((bi * h + iy) * w + ix) * c;
                        for (int64_t ci = 0; ci < c; ++ci)
                            (*map)[static_cast<size_t>(p++)] =
                                in ? static_cast<int32_t>(base + ci) : -1;
                    }
                }
    IndexMap m = map;
    std::lock_guard<std::mutex> lock(cache_mutex);
    cache.emplace(key, m);
    return m;
}

inline IndexMap gap_scatter_map(int64_t b, int64_t h, int64_t w, int64_t c) {
    static std::unordered_map<std::string, IndexMap> cache;
    static std::mutex cache_mutex;
    const std::string key = std::to_string(b) + "," + std::to_string(h) + "," + std::to_string(w) +
                            "," + std::to_string(c);
    {
        std::lock_guard<std::mutex> lock(cache_mutex);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }
    auto map = std::make_shared<std::vector<int32_t>>();
    map->resize(static_cast<size_t>(b * h * w * c));
    int64_t p = 0;
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t i = 0; i < h * w; ++i)
            for (int64_t ci = 0; ci < c; ++ci)
                (*map)[static_cast<size_t>(p++)] = static_cast<int32_t>(bi * c + ci);
    IndexMap m = map;
    std::lock_guard<std::mutex> lock(cache_mutex);
    cache.emplace(key, m);
    return m;
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

// x: [B,H,W,C], weight: [KH*KW*C, O], bias: [O] (pass Var{} to skip)
template <class S>
Var conv2d(Tape<S>& t, Var x, Var weight, Var bias, int64_t kh, int64_t kw, int64_t pad) {
    const auto& xs = t.val(x).shape;
    if (xs.size() != 4) throw std::invalid_argument("conv2d: input must be [B,H,W,C]");
    const int64_t b = xs[0], h = xs[1], w = xs[2], c = xs[3];
    const auto& ws = t.val(weight).shape;
    if (ws.size() != 2 || ws[0] != kh * kw * c)
        throw std::invalid_argument("conv2d: weight must be [KH*KW*C, O]");
    const int64_t o = ws[1];
    const int64_t oh = h + 2 * pad - kh + 1;
    const int64_t ow = w + 2 * pad - kw + 1;
    Var cols = t.gather(x, im2col_map(b, h, w, c, kh, kw, pad), {b * oh * ow, kh * kw * c});
    Var y = t.matmul(cols, weight);
    if (bias.valid()) y = t.add_rowvec(y, bias);
    return t.reshape(y, {b, oh, ow, o});
}

// 2x2 stride-2 max pool; odd trailing row/col dropped
template <class S>
Var maxpool2x2(Tape<S>& t, Var x) {
    const auto& v = t.val(x);
    const auto& xs = v.shape;
    if (xs.size() != 4) throw std::invalid_argument("maxpool2x2: input must be [B,H,W,C]");
    const int64_t b = xs[0], h = xs[1], w = xs[2], c = xs[3];
    const int64_t oh = h / 2, ow = w / 2;
    if (oh < 1 || ow < 1) throw std::invalid_argument("maxpool2x2: input too small");
    auto map = std::make_shared<std::vector<int32_t>>();
    map->resize(static_cast<size_t>(b * oh * ow * c));
    const S* px = v.data();
    int64_t p = 0;
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t oy = 0; oy < oh; ++oy)
            for (int64_t ox = 0; ox < ow; ++ox)
                for (int64_t ci = 0; ci < c; ++ci) {
                    int64_t best = ((bi * h + 2 * oy) * w + 2 * ox) * c + ci;
                    S bv = px[best];
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const int64_t idx =
                                ((bi * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ci;
                            if (px[idx] > bv) {
                                bv = px[idx];
                                best = idx;
                            }
                        }
                    (*map)[static_cast<size_t>(p++)] = static_cast<int32_t>(best);
                }
    return t.gather(x, IndexMap(map), {b, oh, ow, c});
}

// [B,H,W,C] -> [B,C]
template <class S>
Var global_avg_pool(Tape<S>& t, Var x) {
    const auto& xs = t.val(x).shape;
    if (xs.size() != 4) throw std::invalid_argument("global_avg_pool: input must be [B,H,W,C]");
    const int64_t b = xs[0], h = xs[1], w = xs[2], c = xs[3];
    Var s = t.scatter_add(x, gap_scatter_map(b, h, w, c), {b, c});
    return t.scale(s, S(1) / static_cast<S>(h * w));
}

template <class S>
Var linear(Tape<S>& t, Var x, Var weight, Var bias) {  // x [m,k] * w [k,n] + b
    Var y = t.matmul(x, weight);
    if (bias.valid()) y = t.add_rowvec(y, bias);
    return y;
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

template <class S>
struct ParamStore {
    std::vector<std::string> names;
    std::vector<Tensor<S>> values;

    int add(const std::string& name, Tensor<S> v) {
        names.push_back(name);
        values.push_back(std::move(v));
        return static_cast<int>(values.size()) - 1;
    }

    int index(const std::string& name) const {
        for (size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return static_cast<int>(i);
        throw std::out_of_range("param not found: " + name);
    }

    Tensor<S>& operator[](int i) { return values[static_cast<size_t>(i)]; }
    const Tensor<S>& operator[](int i) const { return values[static_cast<size_t>(i)]; }
    size_t size() const { return values.size(); }

    std::vector<Var> leaves(Tape<S>& t, bool requires_grad) const {
        std::vector<Var> out;
        out.reserve(values.size());
        for (const auto& v : values) out.push_back(t.leaf(v, requires_grad));
        return out;
    }

    ParamStore snapshot() const {
        ParamStore s;
        s.names = names;
        for (const auto& v : values) s.values.push_back(v.clone());
        return s;
    }

    void assign(const ParamStore& other) {
        if (other.size() != size()) throw std::invalid_argument("param store size mismatch");
        for (size_t i = 0; i < values.size(); ++i) {
            if (values[i].shape != other.values[i].shape)
                throw std::invalid_argument("param shape mismatch: " + names[i]);
            values[i] = other.values[i].clone();
        }
    }

    int64_t total_numel() const {
        int64_t n = 0;
        for (const auto& v : values) n += v.numel();
        return n;
    }
};

template <class S>
Tensor<S> he_normal(Shape shape, int64_t fan_in, Rng& rng) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.normal() * std);
    return t;
}

template <class S>
Tensor<S> gaussian_init(Shape shape, double std, Rng& rng) {
    Tensor<S> t = Tensor<S>::zeros(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(rng.normal() * std);
    return t;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

template <class S>
class Adam {
public:
    explicit Adam(const ParamStore<S>& params, S beta1 = S(0.9), S beta2 = S(0.999),
                  S eps = S(1e-8))
        : beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& v : params.values) {
            m_.push_back(Tensor<S>::zeros(v.shape));
            v_.push_back(Tensor<S>::zeros(v.shape));
        }
    }

    void step(ParamStore<S>& params, const std::vector<Tensor<S>>& grads, S lr) {
        if (grads.size() != params.size()) throw std::invalid_argument("adam: grad count mismatch");
        ++t_;
        const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1_), t_));
        const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2_), t_));
        for (size_t p = 0; p < params.size(); ++p) {
            Tensor<S>& w = params.values[p];
            const Tensor<S>& g = grads[p];
            if (g.shape != w.shape) throw std::invalid_argument("adam: grad shape mismatch");
            Tensor<S>& m = m_[p];
            Tensor<S>& v = v_[p];
            for (int64_t i = 0; i < w.numel(); ++i) {
                m[i] = beta1_ * m[i] + (S(1) - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (S(1) - beta2_) * g[i] * g[i];
                const S mh = m[i] / bc1;
                const S vh = v[i] / bc2;
                w[i] -= lr * mh / (std::sqrt(vh) + eps_);
            }
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    S beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor<S>> m_, v_;
};

}  // namespace drtl
