#pragma once

#include <cblas.h>

#include <vector>

#include "nusg/tensor.hpp"

namespace nusg::detail {

/// Grad buffer of input `i` if it takes part in differentiation, else null.
template <typename T>
std::vector<T>* input_grad(TensorImpl<T>& node, size_t i) {
    TensorImpl<T>* in = node.inputs[i].get();
    if (!in->requires_grad) return nullptr;
    return &in->ensure_grad();
}

// Row-major C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda, const float* b,
                 int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a,
                lda, b, ldb, beta, c, ldc);
}

inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
                 int ldb, double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a,
                lda, b, ldb, beta, c, ldc);
}

}  // namespace nusg::detail
