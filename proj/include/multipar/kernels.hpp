#pragma once

#include <cstddef>

// Dense kernels behind the tensor ops. Every kernel comes in two flavors:
// a serial reference (*_serial) and an OpenMP version (*_omp) that splits
// work by output row so each element is produced by exactly one thread with
// the same inner-loop order. The two are therefore bit-identical, which the
// kernel tests assert and tools/bench_kernels measures.
//
// The unsuffixed entry points dispatch: OpenMP when the problem is large
// enough to amortize the fork, serial otherwise.

namespace multipar::kernels {

// Work threshold (in multiply-adds) below which dispatch stays serial.
std::size_t parallel_threshold();
void set_parallel_threshold(std::size_t flops);

// c[m x p] = a[m x n] * b[n x p], all row-major. c is overwritten.
void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t n, std::size_t p);
void matmul_omp(const double* a, const double* b, double* c,
                std::size_t m, std::size_t n, std::size_t p);
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t n, std::size_t p);

// c[m x p] += a[m x n] * b[p x n]^T   (B stored row-major, used transposed)
void matmul_nt_acc_serial(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t n, std::size_t p);
void matmul_nt_acc_omp(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t n, std::size_t p);
void matmul_nt_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t n, std::size_t p);

// c[n x p] += a[m x n]^T * b[m x p]
void matmul_tn_acc_serial(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t n, std::size_t p);
void matmul_tn_acc_omp(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t n, std::size_t p);
void matmul_tn_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t n, std::size_t p);

// Temporal 1-D convolution with zero "same" padding.
//   x[k x f], kernel[w x f x d], bias[d] -> out[k x d], w odd.
//   out[t, o] = bias[o] + sum_{j, c} x[t + j - w/2, c] * kernel[j, c, o]
void conv1d_serial(const double* x, const double* kernel, const double* bias,
                   double* out, std::size_t k, std::size_t f, std::size_t d,
                   std::size_t w);
void conv1d_omp(const double* x, const double* kernel, const double* bias,
                double* out, std::size_t k, std::size_t f, std::size_t d,
                std::size_t w);
void conv1d(const double* x, const double* kernel, const double* bias,
            double* out, std::size_t k, std::size_t f, std::size_t d,
            std::size_t w);

// Row-wise masked softmax with row-max stabilization. mask may be null
// (all entries permitted) or r*c bytes of 0/1. Masked outputs are exactly 0.
// Returns false if some row has no permitted entry (out left unspecified).
bool softmax_rows_serial(const double* x, const unsigned char* mask,
                         double* out, std::size_t r, std::size_t c);
bool softmax_rows_omp(const double* x, const unsigned char* mask, double* out,
                      std::size_t r, std::size_t c);
bool softmax_rows(const double* x, const unsigned char* mask, double* out,
                  std::size_t r, std::size_t c);

}  // namespace multipar::kernels
