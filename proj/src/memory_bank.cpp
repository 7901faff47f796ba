#include "mcibi/memory_bank.hpp"

#include <cmath>
#include <stdexcept>

#include "mcibi/autograd.hpp"

namespace mcibi {

MemoryBank::MemoryBank(int num_classes, int feature_dim, double momentum)
    : num_classes_(num_classes),
      feature_dim_(feature_dim),
      momentum_(momentum),
      stats_({num_classes, 2}),
      initialized_(static_cast<size_t>(num_classes), 0) {
  if (num_classes <= 0) throw std::invalid_argument("MemoryBank: num_classes must be > 0");
  if (momentum < 0.0 || momentum > 1.0)
    throw std::invalid_argument("MemoryBank: momentum outside [0,1]");
  for (int c = 0; c < num_classes; ++c) {
    stats_.at(c, 0) = 0.0;
    stats_.at(c, 1) = 1.0;
  }
}

void MemoryBank::set_row(int c, double mean, double stddev, bool initialized) {
  stats_.at(c, 0) = mean;
  stats_.at(c, 1) = stddev;
  initialized_[static_cast<size_t>(c)] = initialized ? 1 : 0;
}

void MemoryBank::ema_update(const ClassStats& batch_stats) {
  for (const auto& [c, entry] : batch_stats.per_class) {
    if (c < 0 || c >= num_classes_)
      throw std::invalid_argument("ema_update: class id out of range");
    if (!is_initialized(c)) {
      set_row(c, entry.mean, entry.stddev, true);
      continue;
    }
    stats_.at(c, 0) = (1.0 - momentum_) * stats_.at(c, 0) + momentum_ * entry.mean;
    stats_.at(c, 1) = (1.0 - momentum_) * stats_.at(c, 1) + momentum_ * entry.stddev;
  }
  if (!stats_.all_finite())
    throw std::runtime_error("ema_update produced non-finite statistics");
}

void MemoryBank::randomize(Rng& rng) {
  for (int c = 0; c < num_classes_; ++c) {
    stats_.at(c, 0) = rng.normal(0.0, 1.0);
    stats_.at(c, 1) = std::fabs(rng.normal(0.0, 1.0));
    initialized_[static_cast<size_t>(c)] = 1;
  }
}

Tensor upsample_features(const Tensor& features, int out_h, int out_w) {
  auto v = ag::constant(features);
  return ag::resize_bilinear(v, out_h, out_w)->value;
}

namespace {

// channel mean and population std (divisor Z) of one Z-vector
ClassStats::Entry channel_moments(const double* vec, int z) {
  double mean = 0.0;
  for (int i = 0; i < z; ++i) mean += vec[i];
  mean /= z;
  double var = 0.0;
  for (int i = 0; i < z; ++i) {
    double d = vec[i] - mean;
    var += d * d;
  }
  return {mean, std::sqrt(var / z)};
}

}  // namespace

ClassSumAccumulator::ClassSumAccumulator(int num_classes, int feature_dim,
                                         int ignore_index)
    : num_classes_(num_classes), feature_dim_(feature_dim), ignore_index_(ignore_index) {}

void ClassSumAccumulator::add(const Tensor& features, const std::vector<int>& labels) {
  const int z = features.dim(0);
  const int hw = features.dim(1) * features.dim(2);
  if (z != feature_dim_)
    throw std::invalid_argument("ClassSumAccumulator: feature dim mismatch");
  if (static_cast<int>(labels.size()) != hw)
    throw std::invalid_argument("ClassSumAccumulator: label size mismatch");
  for (int i = 0; i < hw; ++i) {
    int lab = labels[static_cast<size_t>(i)];
    if (lab == ignore_index_) continue;
    if (lab < 0 || lab >= num_classes_)
      throw std::invalid_argument("ClassSumAccumulator: label id out of range");
    auto& [sum, count] = sums_[lab];
    if (sum.empty()) sum.assign(static_cast<size_t>(z), 0.0);
    for (int c = 0; c < z; ++c) sum[static_cast<size_t>(c)] += features[c * hw + i];
    ++count;
  }
}

ClassStats ClassSumAccumulator::finalize() const {
  ClassStats out;
  std::vector<double> avg(static_cast<size_t>(feature_dim_));
  for (const auto& [cls, entry] : sums_) {
    const auto& [sum, count] = entry;
    for (int c = 0; c < feature_dim_; ++c)
      avg[static_cast<size_t>(c)] = sum[static_cast<size_t>(c)] / static_cast<double>(count);
    out.per_class[cls] = channel_moments(avg.data(), feature_dim_);
  }
  return out;
}

ClassStats compute_class_stats(const Tensor& features, const std::vector<int>& labels,
                               int num_classes, int ignore_index) {
  const int z = features.dim(0);
  const int hw = features.dim(1) * features.dim(2);
  if (static_cast<int>(labels.size()) != hw)
    throw std::invalid_argument("compute_class_stats: label/feature size mismatch");

  std::map<int, std::pair<std::vector<double>, int>> sums;  // class -> (sum vec, count)
  for (int i = 0; i < hw; ++i) {
    int lab = labels[static_cast<size_t>(i)];
    if (lab == ignore_index) continue;
    if (lab < 0 || lab >= num_classes)
      throw std::invalid_argument("compute_class_stats: label id out of range");
    auto& [sum, count] = sums[lab];
    if (sum.empty()) sum.assign(static_cast<size_t>(z), 0.0);
    for (int c = 0; c < z; ++c) sum[static_cast<size_t>(c)] += features[c * hw + i];
    ++count;
  }

  ClassStats out;
  std::vector<double> avg(static_cast<size_t>(z));
  for (const auto& [cls, entry] : sums) {
    const auto& [sum, count] = entry;
    for (int c = 0; c < z; ++c) avg[static_cast<size_t>(c)] = sum[static_cast<size_t>(c)] / count;
    out.per_class[cls] = channel_moments(avg.data(), z);
  }
  return out;
}

MemoryBank init_bank_from_sample(const Tensor& features, const std::vector<int>& labels,
                                 int label_h, int label_w, int num_classes,
                                 double momentum, uint64_t seed, int ignore_index) {
  Tensor full = upsample_features(features, label_h, label_w);
  const int z = full.dim(0);
  const int hw = label_h * label_w;
  if (static_cast<int>(labels.size()) != hw)
    throw std::invalid_argument("init_bank_from_sample: label size mismatch");

  std::map<int, std::vector<int>> pixels_per_class;
  for (int i = 0; i < hw; ++i) {
    int lab = labels[static_cast<size_t>(i)];
    if (lab == ignore_index) continue;
    if (lab < 0 || lab >= num_classes)
      throw std::invalid_argument("init_bank_from_sample: label id out of range");
    pixels_per_class[lab].push_back(i);
  }

  MemoryBank bank(num_classes, z, momentum);
  Rng rng(seed);
  std::vector<double> vec(static_cast<size_t>(z));
  for (const auto& [cls, pixels] : pixels_per_class) {
    int pick = pixels[static_cast<size_t>(rng.uniform_int(static_cast<int>(pixels.size())))];
    for (int c = 0; c < z; ++c) vec[static_cast<size_t>(c)] = full[c * hw + pick];
    double mean = 0.0;
    for (double v : vec) mean += v;
    mean /= z;
    double var = 0.0;
    for (double v : vec) var += (v - mean) * (v - mean);
    bank.set_row(cls, mean, std::sqrt(var / z), true);
  }
  return bank;
}

DatasetLevelReps sample_representations(const MemoryBank& bank, uint64_t seed,
                                        double epsilon_std, bool mean_mode) {
  const int k = bank.num_classes();
  const int z = bank.feature_dim();
  DatasetLevelReps reps;
  reps.seed = seed;
  reps.data = Tensor({k, z});
  Rng rng(seed);
  for (int c = 0; c < k; ++c) {
    double mean = bank.mean_of(c);
    double stddev = std::max(bank.std_of(c), epsilon_std);
    for (int i = 0; i < z; ++i)
      reps.data.at(c, i) = mean_mode ? mean : rng.normal(mean, stddev);
  }
  return reps;
}

}  // namespace mcibi
