#include <random>
#include <array>

#include "doctest.h"
#include "multipar/kernels.hpp"

using namespace multipar::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

}  // namespace

TEST_CASE("omp kernels are bit-identical to the serial reference") {
  std::mt19937_64 rng(11);
  for (auto [m, n, p] : {std::array<std::size_t, 3>{1, 1, 1},
                         {3, 5, 7},
                         {17, 9, 33},
                         {64, 64, 64},
                         {130, 70, 50}}) {
    const auto a = random_vec(m * n, rng);
    const auto b = random_vec(n * p, rng);
    std::vector<double> serial(m * p), omp(m * p);
    matmul_serial(a.data(), b.data(), serial.data(), m, n, p);
    matmul_omp(a.data(), b.data(), omp.data(), m, n, p);
    CHECK(serial == omp);

    std::vector<double> acc_serial(m * p, 0.5), acc_omp(m * p, 0.5);
    const auto bt = random_vec(p * n, rng);
    matmul_nt_acc_serial(a.data(), bt.data(), acc_serial.data(), m, n, p);
    matmul_nt_acc_omp(a.data(), bt.data(), acc_omp.data(), m, n, p);
    CHECK(acc_serial == acc_omp);

    std::vector<double> tn_serial(n * p, -0.25), tn_omp(n * p, -0.25);
    const auto b2 = random_vec(m * p, rng);
    matmul_tn_acc_serial(a.data(), b2.data(), tn_serial.data(), m, n, p);
    matmul_tn_acc_omp(a.data(), b2.data(), tn_omp.data(), m, n, p);
    CHECK(tn_serial == tn_omp);
  }
}

TEST_CASE("conv1d and softmax omp variants match serial bit-exactly") {
  std::mt19937_64 rng(12);
  for (auto [k, f, d] :
       {std::array<std::size_t, 3>{1, 1, 1}, {9, 4, 6}, {64, 16, 20}}) {
    const std::size_t w = 3;
    const auto x = random_vec(k * f, rng);
    const auto kernel = random_vec(w * f * d, rng);
    const auto bias = random_vec(d, rng);
    std::vector<double> serial(k * d), omp(k * d);
    conv1d_serial(x.data(), kernel.data(), bias.data(), serial.data(), k, f, d,
                  w);
    conv1d_omp(x.data(), kernel.data(), bias.data(), omp.data(), k, f, d, w);
    CHECK(serial == omp);
  }

  for (auto [r, c] : {std::array<std::size_t, 2>{1, 3}, {8, 8}, {50, 20}}) {
    const auto x = random_vec(r * c, rng);
    std::vector<unsigned char> mask(r * c, 1);
    mask[0] = 0;  // keep at least one permitted entry per row
    std::vector<double> serial(r * c), omp(r * c);
    CHECK(softmax_rows_serial(x.data(), mask.data(), serial.data(), r, c));
    CHECK(softmax_rows_omp(x.data(), mask.data(), omp.data(), r, c));
    CHECK(serial == omp);
  }
}

TEST_CASE("softmax kernel reports fully-masked rows") {
  const std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
  std::vector<unsigned char> mask = {0, 0, 1, 1};
  std::vector<double> out(4);
  CHECK_FALSE(softmax_rows_serial(x.data(), mask.data(), out.data(), 2, 2));
  mask = {1, 0, 0, 1};
  CHECK(softmax_rows_serial(x.data(), mask.data(), out.data(), 2, 2));
}

TEST_CASE("dispatch threshold is adjustable") {
  const std::size_t old = parallel_threshold();
  set_parallel_threshold(1);
  CHECK(parallel_threshold() == 1);
  std::mt19937_64 rng(13);
  const auto a = random_vec(6 * 6, rng);
  const auto b = random_vec(6 * 6, rng);
  std::vector<double> via_dispatch(36), serial(36);
  matmul(a.data(), b.data(), via_dispatch.data(), 6, 6, 6);
  matmul_serial(a.data(), b.data(), serial.data(), 6, 6, 6);
  CHECK(via_dispatch == serial);
  set_parallel_threshold(old);
}
