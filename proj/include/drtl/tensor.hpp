#pragma once

#include <cblas.h>

#include <cstdint>
#include <cstdlib>
#include <initializer_list>
#include <memory>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <vector>

extern "C" void openblas_set_num_threads(int);

namespace drtl {

// The OpenBLAS thread pool loses badly on small GEMM shapes at low core
// counts and adds run-to-run timing jitter, so BLAS is pinned to one thread
// unless the caller overrides via OPENBLAS_NUM_THREADS. Concurrency belongs
// at the run level (independent seeds in parallel), where it is deterministic.
inline void ensure_blas_threads() {
    static std::once_flag flag;
    std::call_once(flag, [] {
        if (std::getenv("OPENBLAS_NUM_THREADS") == nullptr) openblas_set_num_threads(1);
    });
}

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

// Dense row-major tensor. The buffer is shared so reshapes are zero-copy;
// ownership of writes follows the single-writer convention (whoever creates
// the buffer fills it, afterwards it is treated as read-only).
template <class S>
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<S>> buf;

    Tensor() = default;

    static Tensor zeros(Shape s) {
        Tensor t;
        t.shape = std::move(s);
        t.buf = std::make_shared<std::vector<S>>(shape_numel(t.shape), S(0));
        return t;
    }

    static Tensor from(Shape s, std::vector<S> data) {
        if (shape_numel(s) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("tensor: shape does not match data size");
        Tensor t;
        t.shape = std::move(s);
        t.buf = std::make_shared<std::vector<S>>(std::move(data));
        return t;
    }

    static Tensor scalar(S v) { return from({}, {v}); }

    int64_t numel() const { return buf ? static_cast<int64_t>(buf->size()) : 0; }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    S* data() { return buf->data(); }
    const S* data() const { return buf->data(); }

    S& operator[](int64_t i) { return (*buf)[static_cast<size_t>(i)]; }
    const S& operator[](int64_t i) const { return (*buf)[static_cast<size_t>(i)]; }

    // shares the buffer
    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw std::invalid_argument("tensor: reshape changes element count");
        Tensor t;
        t.shape = std::move(s);
        t.buf = buf;
        return t;
    }

    Tensor clone() const {
        Tensor t;
        t.shape = shape;
        t.buf = std::make_shared<std::vector<S>>(*buf);
        return t;
    }

    // 2-d helpers
    int64_t rows() const { return shape.at(0); }
    int64_t cols() const { return shape.at(1); }
};

// C = alpha * op(A) * op(B) + beta * C, row-major, 2-d
template <class S>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, S alpha, const S* a,
          const S* b, S beta, S* c);

template <>
inline void gemm<float>(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
                        const float* a, const float* b, float beta, float* c) {
    ensure_blas_threads();
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
                static_cast<int>(n));
}

template <>
inline void gemm<double>(bool ta, bool tb, int64_t m, int64_t n, int64_t k, double alpha,
                         const double* a, const double* b, double beta, double* c) {
    ensure_blas_threads();
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
                static_cast<int>(n));
}

}  // namespace drtl
