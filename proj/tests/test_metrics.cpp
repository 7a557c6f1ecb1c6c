#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "dpp/metrics.hpp"
#include "dpp/rng.hpp"

using namespace dpp;

namespace {

// Independent per-pixel tally used as the oracle.
std::vector<std::uint64_t> brute_counts(const Tensor& pred, const Tensor& gt, int classes,
                                        int ignore) {
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(classes) * classes, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = static_cast<int>(gt[i]);
    if (g == ignore) continue;
    const int p = static_cast<int>(pred[i]);
    counts[static_cast<std::size_t>(g) * classes + p] += 1;
  }
  return counts;
}

}  // namespace

TEST_CASE("perfect predictions produce a diagonal matrix and 100 mIoU") {
  Rng rng(1);
  Tensor gt({8, 8});
  for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = rng.uniform_int(4);
  ConfusionMatrix cm(4);
  accumulate(cm, gt, gt);
  for (int g = 0; g < 4; ++g)
    for (int p = 0; p < 4; ++p)
      if (g != p) CHECK(cm.at(g, p) == 0);
  CHECK(cm.total() == 64);
  MiouResult r = miou(cm);
  CHECK(r.mean == 100.0);
  for (double v : r.per_class) CHECK(v == 100.0);
}

TEST_CASE("fully ignored input leaves the matrix unchanged") {
  ConfusionMatrix cm(3);
  Tensor pred({4, 4}, 1.0);
  Tensor gt({4, 4}, 255.0);
  accumulate(cm, pred, gt);
  CHECK(cm.total() == 0);
  CHECK_THROWS_AS(miou(cm), EmptyMatrix);
}

TEST_CASE("accumulation matches the brute-force tally on random instances") {
  Rng rng(2);
  for (int inst = 0; inst < 20; ++inst) {
    const int classes = 2 + rng.uniform_int(5);
    Tensor pred({16, 16});
    Tensor gt({16, 16});
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = rng.uniform_int(classes);
      gt[i] = rng.uniform() < 0.1 ? 255 : rng.uniform_int(classes);
    }
    ConfusionMatrix cm(classes);
    accumulate(cm, pred, gt);
    const auto oracle = brute_counts(pred, gt, classes, 255);
    for (int g = 0; g < classes; ++g)
      for (int p = 0; p < classes; ++p)
        CHECK(cm.at(g, p) == oracle[static_cast<std::size_t>(g) * classes + p]);
  }
}

TEST_CASE("two-class toy IoU: 50 TP, 25 FP, 25 FN gives 50 percent") {
  ConfusionMatrix cm(2);
  cm.at(1, 1) = 50;  // TP for class 1
  cm.at(0, 1) = 25;  // FP
  cm.at(1, 0) = 25;  // FN
  cm.at(0, 0) = 100;
  MiouResult r = miou(cm);
  CHECK(r.per_class[1] == 50.0);
}

TEST_CASE("zero-union classes are excluded from the mean") {
  ConfusionMatrix cm(3);
  cm.at(0, 0) = 10;  // class 0 perfect
  cm.at(1, 1) = 5;   // class 1 perfect
  // class 2 never predicted and never present
  MiouResult r = miou(cm);
  CHECK(std::isnan(r.per_class[2]));
  CHECK(r.mean == 100.0);

  cm.at(1, 2) = 5;  // five class-1 pixels mispredicted as class 2
  MiouResult r2 = miou(cm);
  CHECK(r2.per_class[1] == 50.0);  // 5 TP / (5 TP + 5 FN)
  CHECK(r2.per_class[2] == 0.0);   // class 2 gained false positives
  CHECK(std::abs(r2.mean - (100.0 + 50.0 + 0.0) / 3) < 1e-12);
}

TEST_CASE("labels out of range are rejected for pred and gt") {
  ConfusionMatrix cm(3);
  Tensor ok({2, 2}, 1.0);
  Tensor bad({2, 2}, 3.0);
  CHECK_THROWS_AS(accumulate(cm, bad, ok), LabelOutOfRange);
  CHECK_THROWS_AS(accumulate(cm, ok, bad), LabelOutOfRange);
  Tensor neg({2, 2}, -2.0);
  CHECK_THROWS_AS(accumulate(cm, ok, neg), LabelOutOfRange);
}

TEST_CASE("accumulation order does not matter and shards merge") {
  Rng rng(3);
  Tensor pred({8, 8});
  Tensor gt({8, 8});
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred[i] = rng.uniform_int(3);
    gt[i] = rng.uniform_int(3);
  }
  // Single pass over the whole image.
  ConfusionMatrix whole(3);
  accumulate(whole, pred, gt);

  // Two shards: top and bottom halves, accumulated in the opposite order.
  Tensor pt({4, 8}), gtt({4, 8}), pb({4, 8}), gtb({4, 8});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 8; ++j) {
      pt(i, j) = pred(i, j);
      gtt(i, j) = gt(i, j);
      pb(i, j) = pred(i + 4, j);
      gtb(i, j) = gt(i + 4, j);
    }
  // Reversed accumulation order.
  ConfusionMatrix reversed(3);
  accumulate(reversed, pb, gtb);
  accumulate(reversed, pt, gtt);

  // Parallel-style shards merged elementwise.
  ConfusionMatrix top(3), bottom(3);
  accumulate(top, pt, gtt);
  accumulate(bottom, pb, gtb);
  top.merge(bottom);

  for (int g = 0; g < 3; ++g)
    for (int p = 0; p < 3; ++p) {
      CHECK(reversed.at(g, p) == whole.at(g, p));
      CHECK(top.at(g, p) == whole.at(g, p));
    }
}

TEST_CASE("IoU bounds hold on random matrices") {
  Rng rng(4);
  for (int inst = 0; inst < 50; ++inst) {
    const int classes = 2 + rng.uniform_int(4);
    ConfusionMatrix cm(classes);
    for (int g = 0; g < classes; ++g)
      for (int p = 0; p < classes; ++p)
        cm.at(g, p) = static_cast<std::uint64_t>(rng.uniform_int(20));
    if (cm.total() == 0) cm.at(0, 0) = 1;
    MiouResult r = miou(cm);
    double best = 0.0;
    for (double v : r.per_class)
      if (!std::isnan(v)) {
        CHECK(v >= 0.0);
        CHECK(v <= 100.0);
        best = std::max(best, v);
      }
    CHECK(r.mean <= best + 1e-12);
  }
}

TEST_CASE("merge rejects mismatched class counts") {
  ConfusionMatrix a(3), b(4);
  CHECK_THROWS_AS(a.merge(b), ShapeMismatch);
}

TEST_CASE("accumulate rejects an uninitialized matrix and mismatched shapes") {
  ConfusionMatrix cm;
  Tensor t({2, 2}, 0.0);
  CHECK_THROWS_AS(accumulate(cm, t, t), EmptyMatrix);
  ConfusionMatrix ok(3);
  Tensor other({2, 3}, 0.0);
  CHECK_THROWS_AS(accumulate(ok, t, other), ShapeMismatch);
}
