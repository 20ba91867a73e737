// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "a2f/parallel.hpp"
#include "a2f/rng.hpp"

namespace a2f {
namespace nn {

// Dense row-major tensor, rank 1 or 2. Rank-1 tensors behave as a single row
// in every binary op.
template <typename T>
struct TensorT {
    std::vector<size_t> shape;
    std::vector<T> data;

    TensorT() = default;

    static TensorT zeros(size_t r, size_t c) {
        TensorT t;
        t.shape = {r, c};
        t.data.assign(r * c, T(0));
        return t;
    }

    static TensorT zeros_like(const TensorT& o) {
        TensorT t;
        t.shape = o.shape;
        t.data.assign(o.data.size(), T(0));
        return t;
    }

    static TensorT full(size_t r, size_t c, T v) {
        TensorT t = zeros(r, c);
        for (auto& x : t.data) x = v;
        return t;
    }

    static TensorT from_rows(size_t r, size_t c, std::vector<T> values) {
        if (values.size() != r * c) {
            throw std::runtime_error("tensor: data length " +
                                     std::to_string(values.size()) +
                                     " does not match shape [" + std::to_string(r) +
                                     "x" + std::to_string(c) + "]");
        }
        TensorT t;
        t.shape = {r, c};
        t.data = std::move(values);
        return t;
    }

    static TensorT randn(size_t r, size_t c, T stddev, Rng& rng) {
        TensorT t = zeros(r, c);
        for (auto& x : t.data) x = static_cast<T>(rng.normal() * stddev);
        return t;
    }

    size_t rank() const { return shape.size(); }
    size_t rows() const { return rank() == 2 ? shape[0] : 1; }
    size_t cols() const { return rank() == 0 ? 0 : shape.back(); }
    size_t numel() const { return data.size(); }
    bool is_scalar() const { return numel() == 1; }

    T* row(size_t i) { return data.data() + i * cols(); }
    const T* row(size_t i) const { return data.data() + i * cols(); }
    T& at(size_t i, size_t j) { return data[i * cols() + j]; }
    T at(size_t i, size_t j) const { return data[i * cols() + j]; }
    T scalar() const { return data[0]; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }
};

namespace detail {

// Every kernel partitions work over disjoint OUTPUT rows and keeps each
// element's accumulation order fixed, so results are bit-identical for any
// thread count. Single-row products stay serial: pool dispatch costs more
// than the multiply at these sizes.

// C[M x N] += A[M x K] * B[K x N], ikj order with a vectorizable inner loop.
template <typename T>
void gemm_nn_acc(const T* A, const T* B, T* C, size_t M, size_t K, size_t N) {
    parallel_for(M, (2048 / (N + 1)) + 1, [=](size_t r0, size_t r1) {
        for (size_t i = r0; i < r1; ++i) {
            const T* a = A + i * K;
            T* c = C + i * N;
            for (size_t k = 0; k < K; ++k) {
                const T ak = a[k];
                const T* b = B + k * N;
                for (size_t j = 0; j < N; ++j) c[j] += ak * b[j];
            }
        }
    });
}

// C[K x N] += A^T * D, with A stored [M x K], D stored [M x N]. The m-sum is
// the accumulation axis; it stays sequential per thread by partitioning over
// output rows k.
template <typename T>
void gemm_tn_acc(const T* A, const T* D, T* C, size_t M, size_t K, size_t N) {
    parallel_for(K, (2048 / (N + 1)) + 1, [=](size_t k0, size_t k1) {
        for (size_t m = 0; m < M; ++m) {
            const T* a = A + m * K;
            const T* d = D + m * N;
            for (size_t k = k0; k < k1; ++k) {
                const T ak = a[k];
                T* c = C + k * N;
                for (size_t j = 0; j < N; ++j) c[j] += ak * d[j];
            }
        }
    });
}

}  // namespace detail

template <typename T>
void check_matmul_shapes(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.cols() != b.rows()) {
        throw std::runtime_error("matmul: shape mismatch " + a.shape_str() +
                                 " vs " + b.shape_str());
    }
}

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    check_matmul_shapes(a, b);
    TensorT<T> c = TensorT<T>::zeros(a.rows(), b.cols());
    detail::gemm_nn_acc(a.data.data(), b.data.data(), c.data.data(), a.rows(),
                        a.cols(), b.cols());
    return c;
}

}  // namespace nn
}  // namespace a2f
