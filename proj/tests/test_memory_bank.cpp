#include <doctest.h>


#include "mcibi/memory_bank.hpp"
#include "test_util.hpp"

using namespace mcibi_test;
using mcibi::ClassStats;
using mcibi::ClassSumAccumulator;
using mcibi::MemoryBank;

namespace {

// Independent brute-force reference: average representation per class,
// then channel mean and population std of that average vector.
ClassStats brute_force_stats(const Tensor& features, const std::vector<int>& labels,
                             int num_classes, int ignore_index) {
  const int z = features.dim(0), h = features.dim(1), w = features.dim(2);
  ClassStats out;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<double> avg(z, 0.0);
    int count = 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (labels[y * w + x] != c) continue;
        ++count;
        for (int ch = 0; ch < z; ++ch) avg[ch] += features.at(ch, y, x);
      }
    if (count == 0) continue;
    for (double& v : avg) v /= count;
    double mean = 0.0;
    for (double v : avg) mean += v;
    mean /= z;
    double var = 0.0;
    for (double v : avg) var += (v - mean) * (v - mean);
    var /= z;  // population variance over channels
    out.per_class[c] = {mean, std::sqrt(var)};
  }
  (void)ignore_index;
  return out;
}

std::vector<int> random_labels(int n, int num_classes, Rng& rng, double ignore_frac) {
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    if (rng.uniform() < ignore_frac)
      labels[i] = 255;
    else
      labels[i] = rng.uniform_int(num_classes);
  }
  return labels;
}

}  // namespace

TEST_CASE("class stats match brute-force oracle on random instances") {
  Rng meta(7);
  for (int trial = 0; trial < 40; ++trial) {
    int k = 2 + meta.uniform_int(7);
    int z = 1 + meta.uniform_int(16);
    int h = 1 + meta.uniform_int(16);
    int w = 1 + meta.uniform_int(16);
    Rng rng(1000 + trial);
    Tensor features = random_tensor({z, h, w}, rng, 2.0);
    auto labels = random_labels(h * w, k, rng, 0.2);

    auto got = mcibi::compute_class_stats(features, labels, k);
    auto want = brute_force_stats(features, labels, k, 255);

    CHECK(got.per_class.size() == want.per_class.size());
    for (const auto& [c, e] : want.per_class) {
      REQUIRE(got.has(c));
      CHECK(rel_err(got.per_class.at(c).mean, e.mean) < 1e-9);
      CHECK(rel_err(got.per_class.at(c).stddev, e.stddev) < 1e-9);
    }
  }
}

TEST_CASE("class stats worked example") {
  // one class, 2 pixels, 2 channels; avg = (2, 4): mean 3, pop std 1
  Tensor f({2, 1, 2});
  f.at(0, 0, 0) = 1.0;
  f.at(0, 0, 1) = 3.0;
  f.at(1, 0, 0) = 5.0;
  f.at(1, 0, 1) = 3.0;
  std::vector<int> labels = {0, 0};
  auto s = mcibi::compute_class_stats(f, labels, 3);
  REQUIRE(s.has(0));
  CHECK(s.per_class[0].mean == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(s.per_class[0].stddev == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_FALSE(s.has(1));
  CHECK_FALSE(s.has(2));
}

TEST_CASE("stats reject out-of-range labels but allow the ignore index") {
  Tensor f({2, 1, 2}, 1.0);
  std::vector<int> ok = {0, 255};
  CHECK_NOTHROW(mcibi::compute_class_stats(f, ok, 2));
  std::vector<int> bad = {0, 9};
  CHECK_THROWS(mcibi::compute_class_stats(f, bad, 2));
}

TEST_CASE("ema update blends and adopts first-touch classes wholesale") {
  MemoryBank bank(3, 8, 0.1);
  bank.set_row(0, 1.0, 2.0, true);

  ClassStats batch;
  batch.per_class[0] = {3.0, 4.0};
  batch.per_class[1] = {5.0, 6.0};
  bank.ema_update(batch);

  CHECK(bank.mean_of(0) == doctest::Approx(0.9 * 1.0 + 0.1 * 3.0).epsilon(1e-12));
  CHECK(bank.std_of(0) == doctest::Approx(0.9 * 2.0 + 0.1 * 4.0).epsilon(1e-12));
  // class 1 was uninitialized: adopted wholesale, not blended with the prior
  CHECK(bank.mean_of(1) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(bank.std_of(1) == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(bank.is_initialized(1));
  CHECK_FALSE(bank.is_initialized(2));
}

TEST_CASE("ema update leaves absent classes untouched") {
  MemoryBank bank(2, 4, 0.5);
  bank.set_row(0, -1.0, 0.5, true);
  bank.set_row(1, 7.0, 0.25, true);
  ClassStats batch;
  batch.per_class[1] = {1.0, 0.75};
  bank.ema_update(batch);
  CHECK(bank.mean_of(0) == -1.0);
  CHECK(bank.std_of(0) == 0.5);
  CHECK(bank.mean_of(1) == doctest::Approx(0.5 * 7.0 + 0.5 * 1.0).epsilon(1e-12));
}

TEST_CASE("momentum zero keeps the bank fixed, momentum one replaces it") {
  ClassStats batch;
  batch.per_class[0] = {9.0, 3.0};

  MemoryBank frozen(1, 4, 0.0);
  frozen.set_row(0, 1.0, 1.0, true);
  frozen.ema_update(batch);
  CHECK(frozen.mean_of(0) == 1.0);
  CHECK(frozen.std_of(0) == 1.0);

  MemoryBank replace(1, 4, 1.0);
  replace.set_row(0, 1.0, 1.0, true);
  replace.ema_update(batch);
  CHECK(replace.mean_of(0) == 9.0);
  CHECK(replace.std_of(0) == 3.0);
}

TEST_CASE("sampling is deterministic in the seed and respects the std floor") {
  MemoryBank bank(4, 16, 0.1);
  bank.set_row(0, 0.0, 1.0, true);
  bank.set_row(1, 5.0, 0.0, true);  // degenerate row, clamp applies
  bank.set_row(2, -2.0, 0.5, true);
  bank.set_row(3, 1.0, 2.0, true);

  auto a = mcibi::sample_representations(bank, 42);
  auto b = mcibi::sample_representations(bank, 42);
  auto c = mcibi::sample_representations(bank, 43);
  CHECK(a.data.vec() == b.data.vec());
  CHECK(a.data.vec() != c.data.vec());

  // std 0 clamped to epsilon: draws hug the mean but need not equal it exactly
  for (int j = 0; j < 16; ++j) {
    CHECK(std::fabs(a.data.at(1, j) - 5.0) < 5e-3);
  }

  auto mean_only = mcibi::sample_representations(bank, 42, 1e-4, true);
  for (int j = 0; j < 16; ++j) {
    CHECK(mean_only.data.at(0, j) == 0.0);
    CHECK(mean_only.data.at(3, j) == 1.0);
  }
}

TEST_CASE("sampling moments approach the stored distribution") {
  MemoryBank bank(1, 20000, 0.1);
  bank.set_row(0, 2.0, 3.0, true);
  auto reps = mcibi::sample_representations(bank, 9);
  double mean = 0.0;
  for (int j = 0; j < 20000; ++j) mean += reps.data.at(0, j);
  mean /= 20000;
  double var = 0.0;
  for (int j = 0; j < 20000; ++j)
    var += (reps.data.at(0, j) - mean) * (reps.data.at(0, j) - mean);
  var /= 20000;
  CHECK(std::fabs(mean - 2.0) < 0.1);
  CHECK(std::fabs(std::sqrt(var) - 3.0) < 0.1);
}

TEST_CASE("init from sample picks a labeled pixel and defaults absent rows") {
  Rng rng(3);
  Tensor features = random_tensor({6, 2, 2}, rng);  // stride-8 grid 2x2
  // full-res 16x16 labels: left half class 0, right half class 1; class 2 absent
  int lh = 16, lw = 16;
  std::vector<int> labels(lh * lw);
  for (int y = 0; y < lh; ++y)
    for (int x = 0; x < lw; ++x) labels[y * lw + x] = x < lw / 2 ? 0 : 1;

  auto bank = mcibi::init_bank_from_sample(features, labels, lh, lw, 3, 0.1, 5);
  CHECK(bank.is_initialized(0));
  CHECK(bank.is_initialized(1));
  CHECK_FALSE(bank.is_initialized(2));
  CHECK(bank.mean_of(2) == 0.0);
  CHECK(bank.std_of(2) == 1.0);
  CHECK(bank.std_of(0) >= 0.0);
  // deterministic in the seed
  auto again = mcibi::init_bank_from_sample(features, labels, lh, lw, 3, 0.1, 5);
  CHECK(again.mean_of(0) == bank.mean_of(0));
  CHECK(again.std_of(1) == bank.std_of(1));
}

TEST_CASE("batch accumulator reduces to per-image stats for one image") {
  Rng rng(17);
  Tensor features = random_tensor({5, 6, 7}, rng);
  auto labels = random_labels(42, 4, rng, 0.1);
  ClassSumAccumulator acc(4, 5);
  acc.add(features, labels);
  auto pooled = acc.finalize();
  auto single = mcibi::compute_class_stats(features, labels, 4);
  REQUIRE(pooled.per_class.size() == single.per_class.size());
  for (const auto& [c, e] : single.per_class) {
    CHECK(rel_err(pooled.per_class.at(c).mean, e.mean) < 1e-12);
    CHECK(rel_err(pooled.per_class.at(c).stddev, e.stddev) < 1e-12);
  }
}

TEST_CASE("batch accumulator pools pixels across images") {
  // two one-pixel images of the same class pool to the average representation
  Tensor f1({2, 1, 1});
  f1[0] = 1.0;
  f1[1] = 3.0;
  Tensor f2({2, 1, 1});
  f2[0] = 3.0;
  f2[1] = 9.0;
  std::vector<int> lab = {0};
  ClassSumAccumulator acc(1, 2);
  acc.add(f1, lab);
  acc.add(f2, lab);
  auto s = acc.finalize();
  // pooled avg representation = (2, 6): mean 4, pop std 2
  CHECK(s.per_class.at(0).mean == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(s.per_class.at(0).stddev == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("randomize fills every row with finite values and nonneg std") {
  MemoryBank bank(6, 8, 0.1);
  Rng rng(99);
  bank.randomize(rng);
  CHECK(bank.all_finite());
  for (int c = 0; c < 6; ++c) {
    CHECK(bank.is_initialized(c));
    CHECK(bank.std_of(c) >= 0.0);
  }
}

TEST_CASE("upsample_features preserves constants and shape") {
  Tensor f({3, 2, 2}, 1.5);
  auto up = mcibi::upsample_features(f, 16, 16);
  CHECK(up.dim(0) == 3);
  CHECK(up.dim(1) == 16);
  CHECK(up.dim(2) == 16);
  for (int i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(1.5).epsilon(1e-12));
}
