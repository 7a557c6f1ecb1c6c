#include "dpp/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace dpp {

ConfusionMatrix::ConfusionMatrix(int classes) : num_classes(classes) {
  if (classes < 1) throw ValidationError("ConfusionMatrix: class count below 1");
  counts.assign(static_cast<std::size_t>(classes) * classes, 0);
}

std::uint64_t& ConfusionMatrix::at(int gt, int pred) {
  return counts[static_cast<std::size_t>(gt) * num_classes + pred];
}

std::uint64_t ConfusionMatrix::at(int gt, int pred) const {
  return counts[static_cast<std::size_t>(gt) * num_classes + pred];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (std::uint64_t v : counts) t += v;
  return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) {
    throw ShapeMismatch("ConfusionMatrix::merge: class counts differ");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

void accumulate(ConfusionMatrix& cm, const Tensor& pred, const Tensor& gt,
                int ignore_index) {
  if (pred.rank() != 2 || !pred.same_shape(gt)) {
    throw ShapeMismatch("accumulate: pred " + pred.shape_str() + " vs gt " +
                        gt.shape_str());
  }
  const int c = cm.num_classes;
  if (c < 1) throw EmptyMatrix("accumulate: uninitialized confusion matrix");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const long g = std::lround(gt.data()[i]);
    if (g == ignore_index) continue;
    const long p = std::lround(pred.data()[i]);
    if (g < 0 || g >= c) {
      throw LabelOutOfRange("accumulate: ground-truth label " + std::to_string(g));
    }
    if (p < 0 || p >= c) {
      throw LabelOutOfRange("accumulate: predicted label " + std::to_string(p));
    }
    ++cm.at(static_cast<int>(g), static_cast<int>(p));
  }
}

MiouResult miou(const ConfusionMatrix& cm) {
  if (cm.num_classes < 1 || cm.total() == 0) {
    throw EmptyMatrix("miou: empty confusion matrix");
  }
  const int c = cm.num_classes;
  MiouResult r;
  r.per_class.assign(static_cast<std::size_t>(c),
                     std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int counted = 0;
  for (int k = 0; k < c; ++k) {
    std::uint64_t tp = cm.at(k, k);
    std::uint64_t fp = 0, fn = 0;
    for (int j = 0; j < c; ++j) {
      if (j == k) continue;
      fp += cm.at(j, k);
      fn += cm.at(k, j);
    }
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) continue;  // class absent from both gt and pred
    const double iou = 100.0 * static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class[static_cast<std::size_t>(k)] = iou;
    sum += iou;
    ++counted;
  }
  r.mean = counted > 0 ? sum / counted : 0.0;
  return r;
}

}  // namespace dpp
