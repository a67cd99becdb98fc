// Compares the serial reference kernels against their OpenMP versions:
// wall time, effective GFLOP/s, and the max absolute difference (expected
// to be exactly 0 -- the parallel split preserves per-element arithmetic).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "multipar/kernels.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

double max_abs_diff(const std::vector<double>& a,
                    const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename F>
double time_best_of(int reps, F&& fn) {
  double best = 1e100;
  for (int r = 0; r < reps; ++r) {
    const auto start = Clock::now();
    fn();
    best = std::min(best, seconds_since(start));
  }
  return best;
}

void bench_matmul(std::size_t n, std::mt19937_64& rng) {
  const std::vector<double> a = random_vec(n * n, rng);
  const std::vector<double> b = random_vec(n * n, rng);
  std::vector<double> c_serial(n * n), c_omp(n * n);
  const double flops = 2.0 * static_cast<double>(n) * n * n;

  const double t_serial = time_best_of(3, [&] {
    multipar::kernels::matmul_serial(a.data(), b.data(), c_serial.data(), n, n,
                                     n);
  });
  const double t_omp = time_best_of(3, [&] {
    multipar::kernels::matmul_omp(a.data(), b.data(), c_omp.data(), n, n, n);
  });
  std::printf("matmul   %4zu^3   serial %8.3f ms (%6.2f GF/s)   omp %8.3f ms "
              "(%6.2f GF/s)   speedup %5.2fx   max|diff| %.1e\n",
              n, t_serial * 1e3, flops / t_serial * 1e-9, t_omp * 1e3,
              flops / t_omp * 1e-9, t_serial / t_omp,
              max_abs_diff(c_serial, c_omp));
}

void bench_conv(std::size_t k, std::size_t f, std::size_t d,
                std::mt19937_64& rng) {
  const std::size_t w = 3;
  const std::vector<double> x = random_vec(k * f, rng);
  const std::vector<double> kernel = random_vec(w * f * d, rng);
  const std::vector<double> bias = random_vec(d, rng);
  std::vector<double> out_serial(k * d), out_omp(k * d);
  const double flops = 2.0 * static_cast<double>(k) * w * f * d;

  const double t_serial = time_best_of(3, [&] {
    multipar::kernels::conv1d_serial(x.data(), kernel.data(), bias.data(),
                                     out_serial.data(), k, f, d, w);
  });
  const double t_omp = time_best_of(3, [&] {
    multipar::kernels::conv1d_omp(x.data(), kernel.data(), bias.data(),
                                  out_omp.data(), k, f, d, w);
  });
  std::printf("conv1d   k=%4zu F=%zu d=%zu   serial %8.3f ms (%6.2f GF/s)   "
              "omp %8.3f ms (%6.2f GF/s)   speedup %5.2fx   max|diff| %.1e\n",
              k, f, d, t_serial * 1e3, flops / t_serial * 1e-9, t_omp * 1e3,
              flops / t_omp * 1e-9, t_serial / t_omp,
              max_abs_diff(out_serial, out_omp));
}

void bench_softmax(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  const std::vector<double> x = random_vec(r * c, rng);
  std::vector<double> out_serial(r * c), out_omp(r * c);

  const double t_serial = time_best_of(3, [&] {
    multipar::kernels::softmax_rows_serial(x.data(), nullptr,
                                           out_serial.data(), r, c);
  });
  const double t_omp = time_best_of(3, [&] {
    multipar::kernels::softmax_rows_omp(x.data(), nullptr, out_omp.data(), r,
                                        c);
  });
  std::printf("softmax  %4zu x %-4zu          serial %8.3f ms             "
              "omp %8.3f ms             speedup %5.2fx   max|diff| %.1e\n",
              r, c, t_serial * 1e3, t_omp * 1e3, t_serial / t_omp,
              max_abs_diff(out_serial, out_omp));
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP enabled, max threads = %d\n\n", omp_get_max_threads());
#else
  std::printf("built without OpenMP; omp variants run serially\n\n");
#endif
  std::mt19937_64 rng(7);
  for (std::size_t n : {64, 128, 256, 512}) bench_matmul(n, rng);
  std::printf("\n");
  for (std::size_t k : {64, 256, 1024}) bench_conv(k, 64, 100, rng);
  std::printf("\n");
  for (std::size_t r : {64, 256, 1024}) bench_softmax(r, r, rng);
  return 0;
}
