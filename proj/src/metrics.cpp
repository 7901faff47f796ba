#include "mcibi/metrics.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace mcibi {

ConfusionAccumulator::ConfusionAccumulator(int num_classes, int ignore_index)
    : num_classes_(num_classes),
      ignore_index_(ignore_index),
      confusion_(static_cast<size_t>(num_classes) * num_classes, 0) {
  if (num_classes <= 0) throw std::invalid_argument("ConfusionAccumulator: bad K");
}

void ConfusionAccumulator::add(const std::vector<int>& predictions,
                               const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("ConfusionAccumulator::add: size mismatch");
  for (size_t i = 0; i < labels.size(); ++i) {
    int gt = labels[i];
    if (gt == ignore_index_) continue;
    int pr = predictions[i];
    if (gt < 0 || gt >= num_classes_ || pr < 0 || pr >= num_classes_)
      throw std::invalid_argument("ConfusionAccumulator::add: class id out of range");
    ++confusion_[static_cast<size_t>(gt * num_classes_ + pr)];
  }
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  if (other.num_classes_ != num_classes_)
    throw std::invalid_argument("ConfusionAccumulator::merge: K mismatch");
  for (size_t i = 0; i < confusion_.size(); ++i) confusion_[i] += other.confusion_[i];
}

MetricReport ConfusionAccumulator::report() const {
  int64_t total = 0;
  for (int64_t v : confusion_) total += v;
  if (total == 0) throw std::runtime_error("metrics: empty evaluation set");

  MetricReport r;
  r.num_classes = num_classes_;
  r.confusion = confusion_;
  r.evaluated_pixels = total;
  r.per_class_iou.assign(static_cast<size_t>(num_classes_), -1.0);

  int64_t correct = 0;
  double iou_sum = 0.0;
  int iou_classes = 0;
  double acc_sum = 0.0;
  int acc_classes = 0;
  for (int c = 0; c < num_classes_; ++c) {
    int64_t tp = confusion_[static_cast<size_t>(c * num_classes_ + c)];
    correct += tp;
    int64_t gt = 0, pred = 0;
    for (int j = 0; j < num_classes_; ++j) {
      gt += confusion_[static_cast<size_t>(c * num_classes_ + j)];
      pred += confusion_[static_cast<size_t>(j * num_classes_ + c)];
    }
    int64_t uni = gt + pred - tp;
    if (uni > 0) {
      r.per_class_iou[static_cast<size_t>(c)] = static_cast<double>(tp) / uni;
      iou_sum += r.per_class_iou[static_cast<size_t>(c)];
      ++iou_classes;
    }
    if (gt > 0) {
      acc_sum += static_cast<double>(tp) / gt;
      ++acc_classes;
    }
  }
  r.miou = iou_classes > 0 ? iou_sum / iou_classes : 0.0;
  r.pixel_accuracy = static_cast<double>(correct) / total;
  r.mean_class_accuracy = acc_classes > 0 ? acc_sum / acc_classes : 0.0;
  return r;
}

MetricReport evaluate(const std::vector<std::vector<int>>& predictions,
                      const std::vector<std::vector<int>>& labels, int num_classes,
                      int ignore_index) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("evaluate: image count mismatch");
  ConfusionAccumulator acc(num_classes, ignore_index);
  for (size_t i = 0; i < predictions.size(); ++i) acc.add(predictions[i], labels[i]);
  return acc.report();
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "class  iou\n";
  for (int c = 0; c < num_classes; ++c) {
    os << std::setw(5) << c << "  ";
    if (per_class_iou[static_cast<size_t>(c)] < 0.0)
      os << "   n/a\n";
    else
      os << per_class_iou[static_cast<size_t>(c)] << "\n";
  }
  os << "mIoU            " << miou << "\n";
  os << "pixel accuracy  " << pixel_accuracy << "\n";
  os << "class accuracy  " << mean_class_accuracy << "\n";
  os << "pixels          " << evaluated_pixels << "\n";
  return os.str();
}

}  // namespace mcibi
