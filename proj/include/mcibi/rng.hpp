#ifndef MCIBI_RNG_HPP_
#define MCIBI_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <random>

namespace mcibi {

// Deterministic RNG wrapper. Gaussian draws use an explicit Box-Muller
// transform so sampled values are reproducible independent of the standard
// library's normal_distribution implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t raw() { return engine_(); }

  // uniform in [0, 1)
  double uniform() {
    return std::generate_canonical<double, 53>(engine_);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    std::uniform_int_distribution<int> d(0, n - 1);
    return d(engine_);
  }

  double normal(double mean, double stddev) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

  // derive an independent stream, e.g. per image or per class
  Rng fork(uint64_t salt) {
    uint64_t s = engine_();
    return Rng(s ^ (salt * 0x9e3779b97f4a7c15ULL));
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mcibi

#endif  // MCIBI_RNG_HPP_
