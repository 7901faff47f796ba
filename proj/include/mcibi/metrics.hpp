#ifndef MCIBI_METRICS_HPP_
#define MCIBI_METRICS_HPP_

#include <string>
#include <vector>

namespace mcibi {

struct MetricReport {
  std::vector<double> per_class_iou;  // -1 for classes absent from GT and prediction
  double miou = 0.0;                  // mean over classes with nonzero union
  double pixel_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
  std::vector<int64_t> confusion;     // K*K row-major, row = GT, col = prediction
  int num_classes = 0;
  int64_t evaluated_pixels = 0;

  std::string to_table() const;
};

// Streaming confusion-matrix accumulation; associative, so per-image
// accumulation equals whole-set accumulation.
class ConfusionAccumulator {
 public:
  ConfusionAccumulator(int num_classes, int ignore_index);
  void add(const std::vector<int>& predictions, const std::vector<int>& labels);
  void merge(const ConfusionAccumulator& other);
  MetricReport report() const;  // throws if nothing was accumulated

 private:
  int num_classes_;
  int ignore_index_;
  std::vector<int64_t> confusion_;
};

MetricReport evaluate(const std::vector<std::vector<int>>& predictions,
                      const std::vector<std::vector<int>>& labels, int num_classes,
                      int ignore_index);

}  // namespace mcibi

#endif  // MCIBI_METRICS_HPP_
