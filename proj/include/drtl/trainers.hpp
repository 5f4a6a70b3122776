#pragma once

#include <cmath>
#include <cstdint>
#include <type_traits>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "drtl/backbones.hpp"
#include "drtl/data.hpp"
#include "drtl/errors.hpp"
#include "drtl/metrics.hpp"
#include "drtl/nn.hpp"

namespace drtl::train {

// mean absolute error over all elements
template <class S>
Var loss_l1(Tape<S>& t, Var pred, Var target) {
    return t.mean_all(t.abs_val(t.sub(pred, target)));
}

// Per-task gradient weights. `weighted == false` is the plain (unguided)
// regime and skips the scaling op entirely; the guided path multiplies the
// loss by gamma_i before differentiation.
struct GammaWeights {
    std::vector<double> values;
    bool weighted = true;

    static GammaWeights ones(int n) {
        GammaWeights g;
        g.values.assign(static_cast<size_t>(n), 1.0);
        g.weighted = false;
        return g;
    }

    static GammaWeights from_values(std::vector<double> v) {
        for (double x : v)
            if (!(x >= 0) || !std::isfinite(x))
                throw std::invalid_argument("gamma weights must be finite and >= 0");
        GammaWeights g;
        g.values = std::move(v);
        g.weighted = true;
        return g;
    }

    size_t size() const { return values.size(); }
};

struct TrainConfig {
    double lr = 1e-4;       // alpha: pre-training / fine-tuning / inner step
    double meta_lr = 1e-4;  // beta: outer meta step
    double lr_decay = 0.8;  // fine-tuning decay factor
    int decay_every = 3000;
    int batch = 32;
    int patch = 64;
    int iters = 1000;
    int inner_steps = 1;
    bool second_order = true;
    bool sum_tasks = false;  // single summed update per iteration instead of task cycling
    bool shuffle_tasks = false;
    int eval_every = 100;
    uint64_t seed = 0;

    void validate() const {
        if (lr <= 0 || meta_lr <= 0) throw std::invalid_argument("train config: lr must be > 0");
        if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
        if (lr_decay <= 0 || lr_decay > 1)
            throw std::invalid_argument("train config: decay factor must be in (0,1]");
        if (inner_steps < 1) throw std::invalid_argument("train config: inner_steps must be >= 1");
    }
};

inline double lr_at(const TrainConfig& cfg, int64_t iter) {
    return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(iter / cfg.decay_every));
}

struct TrainLogEntry {
    int64_t step = 0;
    int task = -1;
    double loss = 0;
};

using TaskData = std::vector<std::pair<Image, Image>>;

template <class S>
using StepObserver = std::function<void(int64_t step, const ParamStore<S>& params)>;

namespace detail {

template <class S>
Tensor<S> cast_tensor(const Tensor<float>& in) {
    Tensor<S> out = Tensor<S>::zeros(in.shape);
    for (int64_t i = 0; i < in.numel(); ++i) out[i] = static_cast<S>(in[i]);
    return out;
}

template <class S>
std::pair<Tensor<S>, Tensor<S>> draw_batch(const TaskData& task, int batch, int patch, Rng& rng) {
    data::PatchBatch pb = data::sample_patch_batch(task, batch, patch, rng);
    return {cast_tensor<S>(pb.distorted), cast_tensor<S>(pb.clean)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// pre-training (guided and plain)
// ---------------------------------------------------------------------------

// per-task objective: builds the loss for one freshly drawn batch
template <class S>
using TaskLossFn = std::function<Var(Tape<S>&, const std::vector<Var>& params, Rng& rng)>;

// Core loop shared by the image pipeline and the closed-form oracles: one
// iteration cycles tasks in fixed ascending order (optionally shuffled, or
// summed into a single update), taking an Adam step on gamma_i * loss_i per
// task. With GammaWeights::ones the scaling op is skipped entirely, which is
// exactly plain multi-task pre-training.
template <class S>
std::vector<TrainLogEntry> pretrain_core(ParamStore<S>& params,
                                         const std::vector<TaskLossFn<S>>& tasks,
                                         const GammaWeights& gamma, const TrainConfig& cfg,
                                         const std::type_identity_t<StepObserver<S>>& observer = nullptr) {
    cfg.validate();
    if (tasks.empty()) throw std::invalid_argument("pretrain: need at least one task");
    if (gamma.size() != tasks.size())
        throw std::invalid_argument("pretrain: gamma length must match task count");

    Rng rng(mix_seed(cfg.seed, 0x7072657472ULL));
    Adam<S> opt(params);
    std::vector<TrainLogEntry> log;
    const int n = static_cast<int>(tasks.size());
    int64_t step = 0;

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    for (int64_t iter = 0; iter < cfg.iters; ++iter) {
        if (cfg.shuffle_tasks)
            for (int i = n - 1; i > 0; --i)
                std::swap(order[static_cast<size_t>(i)],
                          order[static_cast<size_t>(rng.uniform_index(
                              static_cast<uint64_t>(i + 1)))]);

        if (cfg.sum_tasks) {
            Tape<S> t;
            auto theta = params.leaves(t, true);
            Var total{};
            double shown = 0;
            for (int i : order) {
                Var li = tasks[static_cast<size_t>(i)](t, theta, rng);
                shown += static_cast<double>(t.val(li)[0]);
                if (gamma.weighted)
                    li = t.scale(li, static_cast<S>(gamma.values[static_cast<size_t>(i)]));
                total = total.valid() ? t.add(total, li) : li;
            }
            if (!std::isfinite(static_cast<double>(t.val(total)[0])))
                throw TrainingError("pretrain: loss is not finite", step);
            auto grads = t.backward(total, theta);
            std::vector<Tensor<S>> gv;
            for (Var g : grads) gv.push_back(t.val(g));
            opt.step(params, gv, static_cast<S>(cfg.lr));
            log.push_back({step, -1, shown / n});
            ++step;
            if (observer) observer(step, params);
        } else {
            for (int i : order) {
                Tape<S> t;
                auto theta = params.leaves(t, true);
                Var li = tasks[static_cast<size_t>(i)](t, theta, rng);
                const double shown = static_cast<double>(t.val(li)[0]);
                if (!std::isfinite(shown))
                    throw TrainingError("pretrain: loss is not finite", step);
                if (gamma.weighted)
                    li = t.scale(li, static_cast<S>(gamma.values[static_cast<size_t>(i)]));
                auto grads = t.backward(li, theta);
                std::vector<Tensor<S>> gv;
                for (Var g : grads) gv.push_back(t.val(g));
                opt.step(params, gv, static_cast<S>(cfg.lr));
                log.push_back({step, i, shown});
                ++step;
                if (observer) observer(step, params);
            }
        }
    }
    return log;
}

template <class S>
std::vector<TrainLogEntry> pretrain(models::RestorationModel<S>& model,
                                    const std::vector<TaskData>& tasks,
                                    const GammaWeights& gamma, const TrainConfig& cfg,
                                    const std::type_identity_t<StepObserver<S>>& observer = nullptr) {
    std::vector<TaskLossFn<S>> fns;
    for (const auto& task : tasks)
        fns.push_back([&model, &task, &cfg](Tape<S>& t, const std::vector<Var>& theta,
                                            Rng& rng) {
            auto [x, y] = detail::draw_batch<S>(task, cfg.batch, cfg.patch, rng);
            Var pred = model.forward_with_params(t, theta, t.leaf(std::move(x), false));
            return loss_l1(t, pred, t.leaf(std::move(y), false));
        });
    return pretrain_core(model.params, fns, gamma, cfg, observer);
}

// ---------------------------------------------------------------------------
// MAML machinery
// ---------------------------------------------------------------------------

template <class S>
using TapeLossFn = std::function<Var(Tape<S>&, const std::vector<Var>&)>;

// one plain gradient-descent look-ahead step; the model parameters backing
// `theta` are untouched. With second_order the returned vars keep the
// dependence on theta so the outer step can differentiate through them.
template <class S>
std::vector<Var> meta_inner_update(Tape<S>& t, const std::vector<Var>& theta,
                                   const TapeLossFn<S>& support_loss, S alpha,
                                   bool second_order) {
    Var ls = support_loss(t, theta);
    auto g = t.backward(ls, theta);
    std::vector<Var> out;
    out.reserve(theta.size());
    for (size_t j = 0; j < theta.size(); ++j) {
        Var gj = second_order ? g[j] : t.constant(t.val(g[j]).clone());
        out.push_back(t.sub(theta[j], t.scale(gj, alpha)));
    }
    return out;
}

template <class S>
struct MetaTaskGradient {
    std::vector<Tensor<S>> grads;  // d(query loss)/d(theta), through the inner step
    double support_loss = 0;
    double query_loss = 0;  // unscaled
};

// Gradient of L_query(theta - alpha * dL_support/dtheta) w.r.t. theta, the
// per-task term of the meta objective. `gamma` scales the query loss before
// differentiation when present.
template <class S>
MetaTaskGradient<S> meta_task_gradient(const ParamStore<S>& params,
                                       const TapeLossFn<S>& support_loss,
                                       const TapeLossFn<S>& query_loss, S alpha, int inner_steps,
                                       bool second_order, std::optional<S> gamma = std::nullopt) {
    Tape<S> t;
    auto theta = params.leaves(t, true);
    std::vector<Var> cur = theta;
    double last_support = 0;
    for (int s = 0; s < inner_steps; ++s) {
        Var ls = support_loss(t, cur);
        last_support = static_cast<double>(t.val(ls)[0]);
        auto g = t.backward(ls, cur);
        std::vector<Var> next;
        next.reserve(cur.size());
        for (size_t j = 0; j < cur.size(); ++j) {
            Var gj = second_order ? g[j] : t.constant(t.val(g[j]).clone());
            next.push_back(t.sub(cur[j], t.scale(gj, alpha)));
        }
        cur = std::move(next);
    }
    Var lq = query_loss(t, cur);
    MetaTaskGradient<S> out;
    out.support_loss = last_support;
    out.query_loss = static_cast<double>(t.val(lq)[0]);
    Var objective = gamma ? t.scale(lq, *gamma) : lq;
    auto grads = t.backward(objective, theta);
    out.grads.reserve(grads.size());
    for (Var g : grads) out.grads.push_back(t.val(g).clone());
    return out;
}

// Meta-training loop: per iteration, every task contributes a look-ahead
// gradient from an independent support/query batch pair; one Adam step with
// the summed (gamma-weighted) outer gradients follows. GammaWeights::ones
// reduces to standard second-order MAML.
template <class S>
std::vector<TrainLogEntry> meta_train(models::RestorationModel<S>& model,
                                      const std::vector<TaskData>& tasks,
                                      const GammaWeights& gamma, const TrainConfig& cfg,
                                      const std::type_identity_t<StepObserver<S>>& observer = nullptr) {
    cfg.validate();
    if (tasks.empty()) throw std::invalid_argument("meta_train: need at least one task");
    if (gamma.size() != tasks.size())
        throw std::invalid_argument("meta_train: gamma length must match task count");

    Rng rng(mix_seed(cfg.seed, 0x6d65746174ULL));
    Adam<S> opt(model.params);
    std::vector<TrainLogEntry> log;
    const int n = static_cast<int>(tasks.size());

    for (int64_t iter = 0; iter < cfg.iters; ++iter) {
        std::vector<Tensor<S>> accum;
        for (const auto& p : model.params.values) accum.push_back(Tensor<S>::zeros(p.shape));

        for (int i = 0; i < n; ++i) {
            auto support =
                detail::draw_batch<S>(tasks[static_cast<size_t>(i)], cfg.batch, cfg.patch, rng);
            auto query =
                detail::draw_batch<S>(tasks[static_cast<size_t>(i)], cfg.batch, cfg.patch, rng);
            Var sx{}, sy{}, qx{}, qy{};

            TapeLossFn<S> sup = [&](Tape<S>& t, const std::vector<Var>& p) {
                if (!sx.valid()) {
                    sx = t.leaf(support.first, false);
                    sy = t.leaf(support.second, false);
                }
                return loss_l1(t, model.forward_with_params(t, p, sx), sy);
            };
            TapeLossFn<S> qry = [&](Tape<S>& t, const std::vector<Var>& p) {
                if (!qx.valid()) {
                    qx = t.leaf(query.first, false);
                    qy = t.leaf(query.second, false);
                }
                return loss_l1(t, model.forward_with_params(t, p, qx), qy);
            };

            std::optional<S> gi;
            if (gamma.weighted) gi = static_cast<S>(gamma.values[static_cast<size_t>(i)]);
            auto task_grad = meta_task_gradient<S>(model.params, sup, qry, static_cast<S>(cfg.lr),
                                                   cfg.inner_steps, cfg.second_order, gi);
            if (!std::isfinite(task_grad.query_loss))
                throw TrainingError("meta_train: loss is not finite", iter);
            for (size_t p = 0; p < accum.size(); ++p)
                for (int64_t e = 0; e < accum[p].numel(); ++e)
                    accum[p][e] += task_grad.grads[p][e];
            log.push_back({iter, i, task_grad.query_loss});
        }
        opt.step(model.params, accum, static_cast<S>(cfg.meta_lr));
        if (observer) observer(iter + 1, model.params);
    }
    return log;
}

// ---------------------------------------------------------------------------
// fine-tuning / baseline
// ---------------------------------------------------------------------------

struct MetricPoint {
    int64_t iteration = 0;
    double lr = 0;
    double train_loss = 0;
    double eval_psnr = 0;
    double eval_ssim = 0;
};

struct FinetuneResult {
    std::vector<MetricPoint> trace;
    int64_t best_iteration = 0;
    double best_psnr = 0;
};

// Adam on L1 over target patches with the 0.8-every-3000 learning-rate decay;
// the model is left holding the best-eval-PSNR parameters seen.
template <class S>
FinetuneResult finetune(models::RestorationModel<S>& model, const TaskData& train_pairs,
                        const TaskData& eval_pairs, const TrainConfig& cfg) {
    cfg.validate();
    if (train_pairs.empty()) throw std::invalid_argument("finetune: empty target training set");

    Rng rng(mix_seed(cfg.seed, 0x66696e65ULL));
    Adam<S> opt(model.params);
    FinetuneResult res;
    ParamStore<S> best = model.params.snapshot();
    res.best_psnr = -1;
    res.best_iteration = 0;

    auto evaluate = [&](int64_t iter, double mean_loss) {
        MetricPoint pt;
        pt.iteration = iter;
        pt.lr = lr_at(cfg, iter > 0 ? iter - 1 : 0);
        pt.train_loss = mean_loss;
        if (!eval_pairs.empty()) {
            auto rep = eval::evaluate_restorer(
                [&](const Image& d) { return model.restore_image(d); }, eval_pairs);
            pt.eval_psnr = rep.mean_psnr;
            pt.eval_ssim = rep.mean_ssim;
            if (rep.mean_psnr > res.best_psnr) {
                res.best_psnr = rep.mean_psnr;
                res.best_iteration = iter;
                best = model.params.snapshot();
            }
        } else {
            best = model.params.snapshot();
            res.best_iteration = iter;
        }
        res.trace.push_back(pt);
    };

    double loss_sum = 0;
    int64_t loss_count = 0;
    for (int64_t iter = 0; iter < cfg.iters; ++iter) {
        Tape<S> t;
        auto theta = model.params.leaves(t, true);
        auto [x, y] = detail::draw_batch<S>(train_pairs, cfg.batch, cfg.patch, rng);
        Var pred = model.forward_with_params(t, theta, t.leaf(std::move(x), false));
        Var loss = loss_l1(t, pred, t.leaf(std::move(y), false));
        const double lv = static_cast<double>(t.val(loss)[0]);
        if (!std::isfinite(lv)) throw TrainingError("finetune: loss is not finite", iter);
        loss_sum += lv;
        ++loss_count;
        auto grads = t.backward(loss, theta);
        std::vector<Tensor<S>> gv;
        for (Var g : grads) gv.push_back(t.val(g));
        opt.step(model.params, gv, static_cast<S>(lr_at(cfg, iter)));

        const bool last = iter + 1 == cfg.iters;
        if ((cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0) || last) {
            evaluate(iter + 1, loss_sum / static_cast<double>(loss_count));
            loss_sum = 0;
            loss_count = 0;
        }
    }
    model.params.assign(best);
    return res;
}

// fine-tuning from a fresh (seeded) initialization
template <class S>
FinetuneResult train_baseline(models::RestorationModel<S>& model, const TaskData& train_pairs,
                              const TaskData& eval_pairs, const TrainConfig& cfg) {
    model = models::RestorationModel<S>::make(model.arch, model.channels,
                                              mix_seed(cfg.seed, 0x62617365ULL), model.depth,
                                              model.width);
    return finetune(model, train_pairs, eval_pairs, cfg);
}

}  // namespace drtl::train
