#ifndef MCIBI_TESTS_TEST_UTIL_HPP_
#define MCIBI_TESTS_TEST_UTIL_HPP_

#include <cmath>
#include <functional>

#include "mcibi/autograd.hpp"
#include "mcibi/rng.hpp"

namespace mcibi_test {

using mcibi::Rng;
using mcibi::Tensor;
namespace ag = mcibi::ag;

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (int i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

// Central finite differences against the analytic gradient stored in `leaf`
// after backward(). `eval` must rebuild the forward pass from current leaf
// values and return the scalar loss.
inline double max_grad_mismatch(const ag::Var& leaf,
                                const std::function<double()>& eval,
                                double eps = 1e-5) {
  double worst = 0.0;
  for (int i = 0; i < leaf->value.numel(); ++i) {
    double orig = leaf->value[i];
    leaf->value[i] = orig + eps;
    double up = eval();
    leaf->value[i] = orig - eps;
    double down = eval();
    leaf->value[i] = orig;
    double numeric = (up - down) / (2.0 * eps);
    double analytic = leaf->grad.empty() ? 0.0 : leaf->grad[i];
    worst = std::max(worst, rel_err(analytic, numeric));
  }
  return worst;
}

}  // namespace mcibi_test

#endif  // MCIBI_TESTS_TEST_UTIL_HPP_
