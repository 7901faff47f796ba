#ifndef MCIBI_MEMORY_BANK_HPP_
#define MCIBI_MEMORY_BANK_HPP_

#include <cstdint>
#include <map>
#include <vector>

#include "mcibi/rng.hpp"
#include "mcibi/tensor.hpp"

namespace mcibi {

inline constexpr int kDefaultIgnoreIndex = 255;
inline constexpr double kDefaultEpsilonStd = 1e-4;

// Per-class distribution statistics extracted from one batch.
// Only classes with at least one labeled pixel appear.
struct ClassStats {
  struct Entry {
    double mean = 0.0;
    double stddev = 0.0;
  };
  std::map<int, Entry> per_class;

  bool has(int c) const { return per_class.count(c) != 0; }
};

// Dataset-level distribution memory: one (mean, std) row per class,
// updated by exponential moving average, never by gradients.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(int num_classes, int feature_dim, double momentum);

  int num_classes() const { return num_classes_; }
  int feature_dim() const { return feature_dim_; }
  double momentum() const { return momentum_; }
  void set_momentum(double m) { momentum_ = m; }

  const Tensor& stats() const { return stats_; }
  Tensor& mutable_stats() { return stats_; }
  double mean_of(int c) const { return stats_.at(c, 0); }
  double std_of(int c) const { return stats_.at(c, 1); }

  const std::vector<uint8_t>& initialized_mask() const { return initialized_; }
  bool is_initialized(int c) const { return initialized_[static_cast<size_t>(c)] != 0; }
  void set_row(int c, double mean, double stddev, bool initialized);

  // EMA update (Eq. style: new = (1-m)*old + m*batch). Classes absent from
  // batch_stats keep their rows. A class seen for the first time adopts the
  // batch statistics wholesale.
  void ema_update(const ClassStats& batch_stats);

  // Fill every row with Normal(0,1)-drawn mean and |Normal(0,1)| std.
  // Used by the frozen-memory ablation.
  void randomize(Rng& rng);

  bool all_finite() const { return stats_.all_finite(); }

 private:
  int num_classes_ = 0;
  int feature_dim_ = 0;
  double momentum_ = 0.1;
  Tensor stats_;  // {K, 2}: column 0 mean, column 1 std
  std::vector<uint8_t> initialized_;
};

// Sampled dataset-level category representations, one row per class.
struct DatasetLevelReps {
  Tensor data;  // {K, Z}
  uint64_t seed = 0;
};

// Channel mean / population std (divisor Z) of per-class average pixel
// representations. `features` must be at full label resolution {Z, H, W}.
// Pixels labeled ignore_index are excluded; labels >= K (other than the
// ignore index) are rejected.
ClassStats compute_class_stats(const Tensor& features, const std::vector<int>& labels,
                               int num_classes, int ignore_index = kDefaultIgnoreIndex);

// Build a bank from one sample: for each present class, pick one pixel
// representation at random and store its channel mean/std. Absent classes
// get (0, 1) with initialized_mask false. `features` at stride 8; labels at
// full resolution.
MemoryBank init_bank_from_sample(const Tensor& features, const std::vector<int>& labels,
                                 int label_h, int label_w, int num_classes,
                                 double momentum, uint64_t seed,
                                 int ignore_index = kDefaultIgnoreIndex);

// Draw a {K, Z} matrix; row c ~ Normal(mean_c, max(std_c, epsilon_std)) i.i.d.
// per channel. mean_mode substitutes the degenerate row (mean repeated).
DatasetLevelReps sample_representations(const MemoryBank& bank, uint64_t seed,
                                        double epsilon_std = kDefaultEpsilonStd,
                                        bool mean_mode = false);

// Bilinear channel-wise upsample of a value tensor (no autograd involved).
Tensor upsample_features(const Tensor& features, int out_h, int out_w);

// Pools labeled pixels across a batch before taking class moments; a single
// image reduces exactly to compute_class_stats.
class ClassSumAccumulator {
 public:
  ClassSumAccumulator(int num_classes, int feature_dim,
                      int ignore_index = kDefaultIgnoreIndex);
  // features at full label resolution {Z,H,W}
  void add(const Tensor& features, const std::vector<int>& labels);
  ClassStats finalize() const;

 private:
  int num_classes_;
  int feature_dim_;
  int ignore_index_;
  std::map<int, std::pair<std::vector<double>, int64_t>> sums_;
};

}  // namespace mcibi

#endif  // MCIBI_MEMORY_BANK_HPP_
