#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "drtl/data.hpp"
#include "drtl/errors.hpp"
#include "drtl/nn.hpp"
#include "drtl/relation_types.hpp"
#include "drtl/rng.hpp"
#include "drtl/tape.hpp"

namespace drtl::relation {

// ---------------------------------------------------------------------------
// graph building blocks (free functions so the math is testable in isolation)
// ---------------------------------------------------------------------------

// squared distances from one feature row to every bank node: [Q]
template <class S>
Var squared_distances(Tape<S>& t, Var feat, Var bank) {
    const int64_t q = t.val(bank).rows();
    Var diff = t.sub(t.broadcast_rows(feat, q), bank);
    return t.rowsum(t.mul(diff, diff));
}

// softmax over w * (-||feat - bank_q||^2) + b; one row of length Q
template <class S>
Var compute_projection_adjacency(Tape<S>& t, Var feat, Var bank, Var sigma_w, Var sigma_b) {
    if (t.val(feat).ndim() != 1 || t.val(feat).dim(0) != t.val(bank).cols())
        throw std::invalid_argument("compute_projection_adjacency: dimension mismatch");
    Var d2 = squared_distances(t, feat, bank);
    Var logits = t.add_scalar_var(t.scale_by(t.neg(d2), sigma_w), sigma_b);
    const int64_t q = t.val(bank).rows();
    return t.reshape(t.softmax_rows(t.reshape(logits, {1, q})), {q});
}

// pairwise-node affinity through the same affine; symmetric, pre-softmax
template <class S>
Var compute_memory_adjacency(Tape<S>& t, Var bank, Var sigma_w, Var sigma_b) {
    const int64_t q = t.val(bank).rows();
    Var sq = t.rowsum(t.mul(bank, bank));                       // [Q]
    Var gram = t.matmul(bank, bank, false, true);               // [Q,Q]
    Var d2 = t.sub(t.add(t.broadcast_cols(sq, q), t.broadcast_rows(sq, q)), t.scale(gram, S(2)));
    Var aff = t.add_scalar_var(t.scale_by(t.neg(d2), sigma_w), sigma_b);
    return t.scale(t.add(aff, t.transpose2d(aff)), S(0.5));  // exactly symmetric
}

// row-stochastic form used inside the assembled operator
template <class S>
Var memory_adjacency_normalized(Tape<S>& t, Var bank, Var sigma_w, Var sigma_b) {
    return t.softmax_rows(compute_memory_adjacency(t, bank, sigma_w, sigma_b));
}

template <class S>
Var concat_cols2(Tape<S>& t, Var a, Var b) {
    return t.transpose2d(t.concat_rows(t.transpose2d(a), t.transpose2d(b)));
}

// Block operator [[0, Ap],[Ap^T, Am]], symmetrized, self-loops added, then
// D^{-1/2} (A + I) D^{-1/2}. Inputs must be nonnegative (both blocks come out
// of softmaxes in the embedding path).
template <class S>
Var assemble_adjacency(Tape<S>& t, Var proj, Var mem) {
    const auto& pv = t.val(proj);
    const auto& mv = t.val(mem);
    if (pv.ndim() != 1) throw std::invalid_argument("assemble_adjacency: proj must be 1-d");
    const int64_t q = pv.dim(0);
    if (mv.ndim() != 2 || mv.rows() != q || mv.cols() != q)
        throw std::invalid_argument("assemble_adjacency: mem must be QxQ");
    for (int64_t i = 0; i < pv.numel(); ++i)
        if (pv[i] < S(0)) throw std::invalid_argument("assemble_adjacency: negative edge weight");
    for (int64_t i = 0; i < mv.numel(); ++i)
        if (mv[i] < S(0)) throw std::invalid_argument("assemble_adjacency: negative edge weight");

    Var proj_row = t.reshape(proj, {1, q});
    Var top = concat_cols2(t, t.constant(Tensor<S>::zeros({1, 1})), proj_row);   // [1, 1+Q]
    Var bottom = concat_cols2(t, t.transpose2d(proj_row), mem);                  // [Q, 1+Q]
    Var block = t.concat_rows(top, bottom);                                      // [1+Q, 1+Q]
    Var sym = t.scale(t.add(block, t.transpose2d(block)), S(0.5));

    const int64_t n = q + 1;
    Tensor<S> eye = Tensor<S>::zeros({n, n});
    for (int64_t i = 0; i < n; ++i) eye[i * n + i] = S(1);
    Var hat = t.add(sym, t.constant(std::move(eye)));
    Var dinv = t.rsqrt(t.rowsum(hat));
    return t.mul(t.mul(t.broadcast_cols(dinv, n), hat), t.broadcast_rows(dinv, n));
}

// single graph-convolution layer: relu(A * nodes * W)
template <class S>
Var gcn_forward(Tape<S>& t, Var nodes, Var adj, Var weight) {
    const auto& nv = t.val(nodes);
    const auto& av = t.val(adj);
    if (av.ndim() != 2 || av.rows() != av.cols() || av.rows() != nv.rows())
        throw std::invalid_argument("gcn_forward: adjacency/node shape mismatch");
    if (t.val(weight).rows() != nv.cols())
        throw std::invalid_argument("gcn_forward: weight shape mismatch");
    return t.relu(t.matmul(t.matmul(adj, nodes), weight));
}

// ---------------------------------------------------------------------------
// the distortion relation network
// ---------------------------------------------------------------------------

struct RelationNetConfig {
    int q = 16;  // memory bank slots
    int d = 64;  // embedding dimension (also the last extractor width)
    int channels = 3;
    int classes = synth::kNumKinds;
    bool use_memory_bank = true;
    int patch = 64;

    std::vector<int> stage_widths() const { return {16, 32, d, d}; }
};

// Conv stack (conv-relu-pool per stage, VGG-flavored) over residual inputs,
// global average pooled to a d-vector, projected through the memory bank via
// one GCN layer. A linear head on the graph output drives the
// distortion-classification training signal.
template <class S>
struct RelationNet {
    RelationNetConfig cfg;
    ParamStore<S> params;

    // parameter layout indices
    int idx_bank = -1, idx_sigma_w = -1, idx_sigma_b = -1, idx_gcn = -1, idx_head_w = -1,
        idx_head_b = -1;

    static RelationNet make(const RelationNetConfig& cfg, uint64_t seed) {
        if (cfg.q < 2) throw std::invalid_argument("relation net: Q must be >= 2");
        RelationNet net;
        net.cfg = cfg;
        Rng rng(mix_seed(seed, 0x64726eULL));
        const auto widths = cfg.stage_widths();
        int cin = cfg.channels;
        for (size_t s = 0; s < widths.size(); ++s) {
            const int cout = widths[s];
            net.params.add("stage" + std::to_string(s) + ".weight",
                           he_normal<S>({9 * cin, cout}, 9 * cin, rng));
            net.params.add("stage" + std::to_string(s) + ".bias", Tensor<S>::zeros({cout}));
            cin = cout;
        }
        net.idx_bank = net.params.add("bank.nodes",
                                      gaussian_init<S>({cfg.q, cfg.d}, 0.5, rng));
        net.idx_sigma_w = net.params.add("bank.sigma_w", Tensor<S>::from({}, {S(0.1)}));
        net.idx_sigma_b = net.params.add("bank.sigma_b", Tensor<S>::zeros({}));
        net.idx_gcn = net.params.add("gcn.weight", he_normal<S>({cfg.d, cfg.d}, cfg.d, rng));
        net.idx_head_w = net.params.add("head.weight",
                                        he_normal<S>({cfg.d, cfg.classes}, cfg.d, rng));
        net.idx_head_b = net.params.add("head.bias", Tensor<S>::zeros({cfg.classes}));
        return net;
    }

    // residual batch [B,H,W,C] -> pooled features [B,d]; H,W >= 32
    Var extract_feature(Tape<S>& t, const std::vector<Var>& p, Var residuals) const {
        const auto& xs = t.val(residuals).shape;
        if (xs.size() != 4) throw std::invalid_argument("extract_feature: input must be [B,H,W,C]");
        if (xs[1] < 32 || xs[2] < 32)
            throw std::invalid_argument("extract_feature: spatial size must be >= 32");
        Var h = residuals;
        const auto widths = cfg.stage_widths();
        for (size_t s = 0; s < widths.size(); ++s) {
            h = conv2d(t, h, p[2 * s], p[2 * s + 1], 3, 3, 1);
            h = t.relu(h);
            h = maxpool2x2(t, h);
        }
        return global_avg_pool(t, h);  // [B,d]
    }

    // distortion embedding for one pooled feature row [d]
    Var embed_feature(Tape<S>& t, const std::vector<Var>& p, Var feat) const {
        if (!cfg.use_memory_bank) return feat;  // ablation: bank bypassed
        Var bank = p[static_cast<size_t>(idx_bank)];
        Var sw = p[static_cast<size_t>(idx_sigma_w)];
        Var sb = p[static_cast<size_t>(idx_sigma_b)];
        Var ap = compute_projection_adjacency(t, feat, bank, sw, sb);
        Var am = memory_adjacency_normalized(t, bank, sw, sb);
        Var adj = assemble_adjacency(t, ap, am);
        Var nodes = t.concat_rows(t.reshape(feat, {1, cfg.d}), bank);
        Var out = gcn_forward(t, nodes, adj, p[static_cast<size_t>(idx_gcn)]);
        return t.reshape(t.slice_rows(out, 0, 1), {cfg.d});
    }

    // embeddings for a feature batch [B,d] -> [B,d]
    Var embed_batch(Tape<S>& t, const std::vector<Var>& p, Var feats) const {
        if (!cfg.use_memory_bank) return feats;
        const int64_t b = t.val(feats).rows();
        Var stacked{};
        for (int64_t i = 0; i < b; ++i) {
            Var row = t.reshape(t.slice_rows(feats, i, i + 1), {cfg.d});
            Var c = t.reshape(embed_feature(t, p, row), {1, cfg.d});
            stacked = stacked.valid() ? t.concat_rows(stacked, c) : c;
        }
        return stacked;
    }

    // classification logits from residual batch
    Var logits(Tape<S>& t, const std::vector<Var>& p, Var residuals) const {
        Var feats = extract_feature(t, p, residuals);
        Var emb = embed_batch(t, p, feats);
        return linear(t, emb, p[static_cast<size_t>(idx_head_w)],
                      p[static_cast<size_t>(idx_head_b)]);
    }
};

// ---------------------------------------------------------------------------
// training and task embedding
// ---------------------------------------------------------------------------

struct DrnTrainConfig {
    int steps = 5000;
    int batch = 32;
    double lr = 1e-4;
    double holdout_frac = 0.15;
    int eval_patches_per_kind = 64;
    uint64_t seed = 0;
};

struct DrnTrainStats {
    double final_loss = 0;
    double train_accuracy = 0;
    double holdout_accuracy = 0;
    std::vector<std::pair<int64_t, double>> loss_log;  // (step, loss)
    // per-kind holdout accuracy, aligned with the task order given to train_drn
    std::vector<double> holdout_accuracy_per_kind;
};

namespace detail {

// residual patch batch with labels, drawn from per-kind pair lists
template <class S>
std::pair<Tensor<S>, std::shared_ptr<std::vector<int>>> draw_residual_batch(
    const std::vector<const std::vector<std::pair<Image, Image>>*>& tasks, int batch, int patch,
    Rng& rng) {
    const int c = (*tasks[0])[0].first.channels;
    Tensor<S> out = Tensor<S>::zeros({batch, patch, patch, c});
    auto labels = std::make_shared<std::vector<int>>();
    const int64_t stride = static_cast<int64_t>(patch) * patch * c;
    std::vector<float> cbuf(static_cast<size_t>(stride)), dbuf(static_cast<size_t>(stride));
    for (int s = 0; s < batch; ++s) {
        const int k = static_cast<int>(rng.uniform_index(tasks.size()));
        const auto& pairs = *tasks[static_cast<size_t>(k)];
        const auto& [clean, distorted] = pairs[rng.uniform_index(pairs.size())];
        const int y0 = static_cast<int>(
            rng.uniform_index(static_cast<uint64_t>(clean.height - patch + 1)));
        const int x0 = static_cast<int>(
            rng.uniform_index(static_cast<uint64_t>(clean.width - patch + 1)));
        const bool flip = rng.bernoulli(0.5);
        const int rot = rng.uniform_int(0, 3);
        data::extract_patch(clean, y0, x0, patch, flip, rot, cbuf.data());
        data::extract_patch(distorted, y0, x0, patch, flip, rot, dbuf.data());
        for (int64_t i = 0; i < stride; ++i)
            out[s * stride + i] = static_cast<S>(cbuf[static_cast<size_t>(i)] -
                                                 dbuf[static_cast<size_t>(i)]);
        labels->push_back(k);
    }
    return {std::move(out), labels};
}

}  // namespace detail

// Joint optimization of extractor, bank, affine, GCN and head with the
// 7-way distortion-classification loss over residual patches. Items are
// split train/holdout per task before training; returns held-out accuracy.
template <class S>
DrnTrainStats train_drn(RelationNet<S>& net,
                        const std::vector<std::vector<std::pair<Image, Image>>>& tasks,
                        const DrnTrainConfig& cfg) {
    if (tasks.size() < 2)
        throw std::invalid_argument("train_drn: need at least two distinct distortions");
    for (const auto& t : tasks)
        if (t.empty()) throw std::invalid_argument("train_drn: empty task");

    // deterministic per-task train/holdout split by item
    std::vector<std::vector<std::pair<Image, Image>>> train_items(tasks.size());
    std::vector<std::vector<std::pair<Image, Image>>> hold_items(tasks.size());
    for (size_t k = 0; k < tasks.size(); ++k) {
        const int n = static_cast<int>(tasks[k].size());
        int n_hold = static_cast<int>(std::floor(cfg.holdout_frac * n));
        n_hold = std::min(std::max(n_hold, n > 1 ? 1 : 0), n - 1);
        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        Rng srng(mix_seed(cfg.seed, 0x686f6c64ULL, static_cast<uint64_t>(k)));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[srng.uniform_index(static_cast<uint64_t>(i + 1))]);
        for (int i = 0; i < n; ++i)
            (i < n - n_hold ? train_items : hold_items)[k].push_back(
                tasks[k][static_cast<size_t>(order[static_cast<size_t>(i)])]);
    }

    std::vector<const std::vector<std::pair<Image, Image>>*> train_ptrs, hold_ptrs;
    for (auto& v : train_items) train_ptrs.push_back(&v);
    for (auto& v : hold_items) hold_ptrs.push_back(&v);

    Rng rng(mix_seed(cfg.seed, 0x64726e7472ULL));
    Adam<S> opt(net.params);
    DrnTrainStats stats;

    for (int64_t step = 0; step < cfg.steps; ++step) {
        auto [batch, labels] =
            detail::draw_residual_batch<S>(train_ptrs, cfg.batch, net.cfg.patch, rng);
        Tape<S> t;
        auto p = net.params.leaves(t, true);
        Var lg = net.logits(t, p, t.leaf(std::move(batch), false));
        Var loss = t.cross_entropy_mean(lg, labels);
        const double lv = static_cast<double>(t.val(loss)[0]);
        if (!std::isfinite(lv)) throw train::TrainingError("train_drn: loss is not finite", step);
        auto grads = t.backward(loss, p);
        std::vector<Tensor<S>> gv;
        for (Var g : grads) gv.push_back(t.val(g));
        opt.step(net.params, gv, static_cast<S>(cfg.lr));
        if (step % 50 == 0 || step + 1 == cfg.steps) stats.loss_log.emplace_back(step, lv);
        stats.final_loss = lv;
    }

    // accuracy probes (deterministic eval batches, no augmentation effect on
    // label balance: one batch per kind)
    auto accuracy = [&](const std::vector<const std::vector<std::pair<Image, Image>>*>& ptrs,
                        uint64_t salt, std::vector<double>* per_kind) {
        int64_t correct = 0, total = 0;
        for (size_t k = 0; k < ptrs.size(); ++k) {
            if (ptrs[k]->empty()) continue;
            Rng erng(mix_seed(cfg.seed, salt, static_cast<uint64_t>(k)));
            std::vector<const std::vector<std::pair<Image, Image>>*> one = {ptrs[k]};
            auto [batch, labels] = detail::draw_residual_batch<S>(
                one, cfg.eval_patches_per_kind, net.cfg.patch, erng);
            Tape<S> t;
            auto p = net.params.leaves(t, false);
            Var lg = net.logits(t, p, t.leaf(std::move(batch), false));
            const auto& lv = t.val(lg);
            int64_t kc = 0;
            for (int64_t i = 0; i < lv.rows(); ++i) {
                int best = 0;
                for (int j = 1; j < net.cfg.classes; ++j)
                    if (lv[i * net.cfg.classes + j] > lv[i * net.cfg.classes + best]) best = j;
                if (best == static_cast<int>(k)) ++kc;
            }
            if (per_kind) per_kind->push_back(static_cast<double>(kc) / lv.rows());
            correct += kc;
            total += lv.rows();
        }
        return total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    };
    stats.train_accuracy = accuracy(train_ptrs, 0x7472e1ccULL, nullptr);
    stats.holdout_accuracy = accuracy(hold_ptrs, 0x65766179ULL, &stats.holdout_accuracy_per_kind);
    return stats;
}

// Mean embedding over a deterministic probe set of residual patches. The
// sample list is deduplicated by content first so repeated entries cannot
// shift the mean; probe j uses pair (j mod n) and a j-derived crop.
template <class S>
DistortionEmbedding embed_distortion(const RelationNet<S>& net,
                                     const std::vector<std::pair<Image, Image>>& samples,
                                     int probe_n, uint64_t seed, const std::string& kind = {}) {
    if (samples.empty()) throw std::invalid_argument("embed_distortion: empty sample list");
    if (probe_n < 1) throw std::invalid_argument("embed_distortion: probe_n must be >= 1");

    // content-keyed dedup, order-preserving
    std::vector<const std::pair<Image, Image>*> unique;
    std::vector<uint64_t> seen;
    for (const auto& s : samples) {
        uint64_t h = 0xcbf29ce484222325ULL;
        auto mixin = [&h](const std::vector<float>& v) {
            for (float f : v) {
                uint32_t bits;
                static_assert(sizeof(bits) == sizeof(f));
                std::memcpy(&bits, &f, sizeof(bits));
                h = (h ^ bits) * 0x100000001b3ULL;
            }
        };
        mixin(s.first.px);
        mixin(s.second.px);
        if (std::find(seen.begin(), seen.end(), h) == seen.end()) {
            seen.push_back(h);
            unique.push_back(&s);
        }
    }

    const int patch = net.cfg.patch;
    const int c = unique[0]->first.channels;
    Tensor<S> batch = Tensor<S>::zeros({probe_n, patch, patch, c});
    const int64_t stride = static_cast<int64_t>(patch) * patch * c;
    std::vector<float> cbuf(static_cast<size_t>(stride)), dbuf(static_cast<size_t>(stride));
    for (int j = 0; j < probe_n; ++j) {
        const auto& [clean, distorted] = *unique[static_cast<size_t>(j) % unique.size()];
        if (clean.height < patch || clean.width < patch)
            throw std::invalid_argument("embed_distortion: image smaller than probe patch");
        Rng prng(mix_seed(seed, 0x70726f6265ULL, static_cast<uint64_t>(j)));
        const int y0 = static_cast<int>(
            prng.uniform_index(static_cast<uint64_t>(clean.height - patch + 1)));
        const int x0 = static_cast<int>(
            prng.uniform_index(static_cast<uint64_t>(clean.width - patch + 1)));
        data::extract_patch(clean, y0, x0, patch, false, 0, cbuf.data());
        data::extract_patch(distorted, y0, x0, patch, false, 0, dbuf.data());
        for (int64_t i = 0; i < stride; ++i)
            batch[j * stride + i] =
                static_cast<S>(cbuf[static_cast<size_t>(i)] - dbuf[static_cast<size_t>(i)]);
    }

    Tape<S> t;
    auto p = net.params.leaves(t, false);
    Var feats = net.extract_feature(t, p, t.leaf(std::move(batch), false));
    Var embs = net.embed_batch(t, p, feats);  // [probe_n, d]
    const auto& ev = t.val(embs);

    DistortionEmbedding emb;
    emb.kind = kind;
    emb.probe_n = probe_n;
    emb.c.assign(static_cast<size_t>(net.cfg.d), 0.0);
    for (int64_t i = 0; i < ev.rows(); ++i)
        for (int64_t j = 0; j < ev.cols(); ++j)
            emb.c[static_cast<size_t>(j)] += static_cast<double>(ev[i * ev.cols() + j]);
    for (double& v : emb.c) v /= probe_n;
    return emb;
}

}  // namespace drtl::relation
