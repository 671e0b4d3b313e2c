// SPDX-License-Identifier: Apache-2.0
//
// Low-level dense kernels shared by the graph ops and the cached forward
// evaluator. Keeping one implementation guarantees both paths produce
// bit-identical values for the same inputs.
#pragma once

#include <cmath>
#include <cstddef>

namespace mozolab::kernels {

// C[m,n] = A[m,k] * B[k,n]
inline void matmul(double* c, const double* a, const double* b,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// C[m,n] = A[m,k] * B[n,k]^T
inline void matmul_nt(double* c, const double* a, const double* b,
                      std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      cr[j] = acc;
    }
  }
}

// C[k,n] += A[m,k]^T * B[m,n]
inline void matmul_tn_acc(double* c, const double* a, const double* b,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    const double* br = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      double* cr = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// C[m,k] += A[m,n] * B[k,n]^T
inline void matmul_nt_acc(double* c, const double* a, const double* b,
                          std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * n;
    double* cr = c + i * k;
    for (std::size_t j = 0; j < k; ++j) {
      const double* br = b + j * n;
      double acc = 0.0;
      for (std::size_t p = 0; p < n; ++p) acc += ar[p] * br[p];
      cr[j] += acc;
    }
  }
}

// C[m,n] += A[m,k] * B[k,n]
inline void matmul_nn_acc(double* c, const double* a, const double* b,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

inline void add(double* out, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

inline void mul(double* out, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

inline void tanh_vec(double* out, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(x[i]);
}

inline void relu_vec(double* out, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

inline void log_vec(double* out, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::log(x[i]);
}

// Row-wise softmax with max subtraction.
inline void softmax_rows(double* out, const double* x,
                         std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = x + i * cols;
    double* outr = out + i * cols;
    double mx = xr[0];
    for (std::size_t j = 1; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
    double denom = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      outr[j] = std::exp(xr[j] - mx);
      denom += outr[j];
    }
    for (std::size_t j = 0; j < cols; ++j) outr[j] /= denom;
  }
}

constexpr double kNormFloor = 1e-12;

// Row-wise L2 normalization; writes clamped norms into `norms` (size rows).
inline void l2_normalize_rows(double* out, double* norms, const double* x,
                              std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = x + i * cols;
    double* outr = out + i * cols;
    double sq = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sq += xr[j] * xr[j];
    double n = std::sqrt(sq);
    if (n < kNormFloor) n = kNormFloor;
    norms[i] = n;
    for (std::size_t j = 0; j < cols; ++j) outr[j] = xr[j] / n;
  }
}

}  // namespace mozolab::kernels
