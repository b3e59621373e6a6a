#pragma once

#include <cstddef>

// Row-major dense kernels shared by the forward and backward passes.
namespace lrf::kernels {

// C[n x p] += A[n x k] * B[k x p]
template <typename T>
void mm_acc(std::size_t n, std::size_t k, std::size_t p, const T* a, const T* b, T* c) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        T* c0 = c + i * p;
        T* c1 = c0 + p;
        T* c2 = c1 + p;
        T* c3 = c2 + p;
        const T* a0 = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T v0 = a0[kk], v1 = a0[k + kk], v2 = a0[2 * k + kk], v3 = a0[3 * k + kk];
            const T* brow = b + kk * p;
            for (std::size_t j = 0; j < p; ++j) {
                const T bv = brow[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
            }
        }
    }
    for (; i < n; ++i) {
        T* crow = c + i * p;
        const T* arow = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            const T* brow = b + kk * p;
            for (std::size_t j = 0; j < p; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C[n x k] += A[n x p] * B[k x p]^T
template <typename T>
void mm_bt_acc(std::size_t n, std::size_t k, std::size_t p, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < n; ++i) {
        const T* arow = a + i * p;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T* brow = b + kk * p;
            T s0{}, s1{}, s2{}, s3{};
            std::size_t j = 0;
            for (; j + 4 <= p; j += 4) {
                s0 += arow[j] * brow[j];
                s1 += arow[j + 1] * brow[j + 1];
                s2 += arow[j + 2] * brow[j + 2];
                s3 += arow[j + 3] * brow[j + 3];
            }
            for (; j < p; ++j) {
                s0 += arow[j] * brow[j];
            }
            c[i * k + kk] += (s0 + s1) + (s2 + s3);
        }
    }
}

// C[k x p] += A[n x k]^T * B[n x p]
template <typename T>
void mm_at_acc(std::size_t n, std::size_t k, std::size_t p, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < n; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * p;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T av = arow[kk];
            T* crow = c + kk * p;
            for (std::size_t j = 0; j < p; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace lrf::kernels
