#include "multipar/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace multipar::kernels {

namespace {

std::atomic<std::size_t> g_threshold{64 * 1024};

#ifdef _OPENMP
bool use_parallel(std::size_t work) {
  return work >= g_threshold.load(std::memory_order_relaxed) &&
         omp_get_max_threads() > 1 && !omp_in_parallel();
}
#endif

// One output row of C = A * B; ikj order keeps the B walk contiguous.
inline void matmul_row(const double* a_row, const double* b, double* c_row,
                       std::size_t n, std::size_t p) {
  std::fill(c_row, c_row + p, 0.0);
  for (std::size_t l = 0; l < n; ++l) {
    const double av = a_row[l];
    const double* b_row = b + l * p;
    for (std::size_t j = 0; j < p; ++j) c_row[j] += av * b_row[j];
  }
}

inline void matmul_nt_row(const double* a_row, const double* b, double* c_row,
                          std::size_t n, std::size_t p) {
  for (std::size_t j = 0; j < p; ++j) {
    const double* b_row = b + j * n;
    double acc = 0.0;
    for (std::size_t l = 0; l < n; ++l) acc += a_row[l] * b_row[l];
    c_row[j] += acc;
  }
}

// Row i of C[n x p] += A^T B accumulates a[.][i] * b[.][.]; serial over m.
inline void matmul_tn_row(const double* a, const double* b, double* c_row,
                          std::size_t m, std::size_t n, std::size_t p,
                          std::size_t i) {
  for (std::size_t l = 0; l < m; ++l) {
    const double av = a[l * n + i];
    const double* b_row = b + l * p;
    for (std::size_t j = 0; j < p; ++j) c_row[j] += av * b_row[j];
  }
}

inline void conv1d_row(const double* x, const double* kernel,
                       const double* bias, double* out_row, std::size_t k,
                       std::size_t f, std::size_t d, std::size_t w,
                       std::size_t t) {
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(w / 2);
  std::copy(bias, bias + d, out_row);
  for (std::size_t j = 0; j < w; ++j) {
    const std::ptrdiff_t src =
        static_cast<std::ptrdiff_t>(t + j) - half;
    if (src < 0 || src >= static_cast<std::ptrdiff_t>(k)) continue;
    const double* x_row = x + static_cast<std::size_t>(src) * f;
    const double* k_plane = kernel + j * f * d;
    for (std::size_t c = 0; c < f; ++c) {
      const double xv = x_row[c];
      const double* k_row = k_plane + c * d;
      for (std::size_t o = 0; o < d; ++o) out_row[o] += xv * k_row[o];
    }
  }
}

// Returns false on a fully-masked row.
inline bool softmax_row(const double* x_row, const unsigned char* mask_row,
                        double* out_row, std::size_t c) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < c; ++j) {
    if (mask_row && !mask_row[j]) continue;
    mx = std::max(mx, x_row[j]);
  }
  if (!std::isfinite(mx)) return false;
  double denom = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    if (mask_row && !mask_row[j]) {
      out_row[j] = 0.0;
    } else {
      out_row[j] = std::exp(x_row[j] - mx);
      denom += out_row[j];
    }
  }
  const double inv = 1.0 / denom;
  for (std::size_t j = 0; j < c; ++j) out_row[j] *= inv;
  return true;
}

}  // namespace

std::size_t parallel_threshold() {
  return g_threshold.load(std::memory_order_relaxed);
}

void set_parallel_threshold(std::size_t flops) {
  g_threshold.store(flops, std::memory_order_relaxed);
}

void matmul_serial(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i)
    matmul_row(a + i * n, b, c + i * p, n, p);
}

void matmul_omp(const double* a, const double* b, double* c, std::size_t m,
                std::size_t n, std::size_t p) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
    matmul_row(a + i * n, b, c + i * p, n, p);
}

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t n, std::size_t p) {
#ifdef _OPENMP
  if (use_parallel(m * n * p)) {
    matmul_omp(a, b, c, m, n, p);
    return;
  }
#endif
  matmul_serial(a, b, c, m, n, p);
}

void matmul_nt_acc_serial(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i)
    matmul_nt_row(a + i * n, b, c + i * p, n, p);
}

void matmul_nt_acc_omp(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t n, std::size_t p) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i)
    matmul_nt_row(a + i * n, b, c + i * p, n, p);
}

void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t n, std::size_t p) {
#ifdef _OPENMP
  if (use_parallel(m * n * p)) {
    matmul_nt_acc_omp(a, b, c, m, n, p);
    return;
  }
#endif
  matmul_nt_acc_serial(a, b, c, m, n, p);
}

void matmul_tn_acc_serial(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < n; ++i)
    matmul_tn_row(a, b, c + i * p, m, n, p, i);
}

void matmul_tn_acc_omp(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t n, std::size_t p) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    matmul_tn_row(a, b, c + i * p, m, n, p, i);
}

void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t n, std::size_t p) {
#ifdef _OPENMP
  if (use_parallel(m * n * p)) {
    matmul_tn_acc_omp(a, b, c, m, n, p);
    return;
  }
#endif
  matmul_tn_acc_serial(a, b, c, m, n, p);
}

void conv1d_serial(const double* x, const double* kernel, const double* bias,
                   double* out, std::size_t k, std::size_t f, std::size_t d,
                   std::size_t w) {
  for (std::size_t t = 0; t < k; ++t)
    conv1d_row(x, kernel, bias, out + t * d, k, f, d, w, t);
}

void conv1d_omp(const double* x, const double* kernel, const double* bias,
                double* out, std::size_t k, std::size_t f, std::size_t d,
                std::size_t w) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(k); ++t)
    conv1d_row(x, kernel, bias, out + t * d, k, f, d, w,
               static_cast<std::size_t>(t));
}

void conv1d(const double* x, const double* kernel, const double* bias,
            double* out, std::size_t k, std::size_t f, std::size_t d,
            std::size_t w) {
#ifdef _OPENMP
  if (use_parallel(k * f * d * w)) {
    conv1d_omp(x, kernel, bias, out, k, f, d, w);
    return;
  }
#endif
  conv1d_serial(x, kernel, bias, out, k, f, d, w);
}

bool softmax_rows_serial(const double* x, const unsigned char* mask,
                         double* out, std::size_t r, std::size_t c) {
  bool ok = true;
  for (std::size_t i = 0; i < r; ++i)
    ok &= softmax_row(x + i * c, mask ? mask + i * c : nullptr, out + i * c, c);
  return ok;
}

bool softmax_rows_omp(const double* x, const unsigned char* mask, double* out,
                      std::size_t r, std::size_t c) {
  // Failures may be observed in any order; the flag only ever goes false.
  std::atomic<bool> ok{true};
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(r); ++i) {
    if (!softmax_row(x + i * c, mask ? mask + i * c : nullptr, out + i * c, c))
      ok.store(false, std::memory_order_relaxed);
  }
  return ok.load();
}

bool softmax_rows(const double* x, const unsigned char* mask, double* out,
                  std::size_t r, std::size_t c) {
#ifdef _OPENMP
  if (use_parallel(r * c * 4)) return softmax_rows_omp(x, mask, out, r, c);
#endif
  return softmax_rows_serial(x, mask, out, r, c);
}

}  // namespace multipar::kernels
