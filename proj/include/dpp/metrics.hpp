#pragma once

#include <cstdint>
#include <vector>

#include "dpp/errors.hpp"
#include "dpp/tensor.hpp"

namespace dpp {

// Rows index ground truth, columns index the prediction.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::uint64_t> counts;  // row-major C x C

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int classes);

  std::uint64_t& at(int gt, int pred);
  std::uint64_t at(int gt, int pred) const;
  std::uint64_t total() const;

  // Elementwise addition; shards from parallel evaluation merge this way.
  void merge(const ConfusionMatrix& other);
};

void accumulate(ConfusionMatrix& cm, const Tensor& pred, const Tensor& gt,
                int ignore_index = 255);

struct MiouResult {
  std::vector<double> per_class;  // IoU percent; NaN for zero-union classes
  double mean = 0.0;              // percent, zero-union classes excluded
};

MiouResult miou(const ConfusionMatrix& cm);

}  // namespace dpp
