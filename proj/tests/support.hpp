#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "multipar/tensor.hpp"

namespace test_support {

inline multipar::Tensor random_tensor(multipar::Shape shape,
                                      std::mt19937_64& rng,
                                      bool requires_grad = true,
                                      double scale = 1.0) {
  return multipar::Tensor::uniform(std::move(shape), scale, rng,
                                   requires_grad);
}

// Central finite differences against the tape gradients.
//
// `loss_fn` rebuilds the forward pass from scratch on every call (the
// checked tensors are perturbed in place between calls), so it must read
// the checked tensors' current data.
inline void check_gradients(const std::function<multipar::Tensor()>& loss_fn,
                            const std::vector<multipar::Tensor>& checked,
                            double rtol = 1e-4, double atol = 1e-6,
                            double eps = 1e-5) {
  using namespace multipar;

  Tape tape;
  GradStore analytic = [&] {
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    return tape.gradients(loss);
  }();

  for (const Tensor& t : checked) {
    const std::vector<double>* grad = analytic.find(t.impl());
    REQUIRE_MESSAGE(grad != nullptr, "no gradient reached a checked tensor");
    Tensor mutable_t = t;
    auto data = mutable_t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double plus = loss_fn().value();
      data[i] = saved - eps;
      const double minus = loss_fn().value();
      data[i] = saved;
      const double fd = (plus - minus) / (2.0 * eps);
      const double got = (*grad)[i];
      const double tol = atol + rtol * std::abs(fd);
      CHECK_MESSAGE(std::abs(got - fd) <= tol,
                    "gradient mismatch at flat index ", i, ": analytic ", got,
                    " vs finite difference ", fd);
    }
  }
}

// Random-weight readout so gradient checks see a generic downstream
// direction instead of the all-ones one.
inline multipar::Tensor weighted_readout(const multipar::Tensor& out,
                                         const multipar::Tensor& weights) {
  return multipar::sum(multipar::mul(out, weights));
}

}  // namespace test_support
