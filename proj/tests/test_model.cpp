#include <cmath>
#include <cstdint>

#include "doctest.h"
#include "dpp/model.hpp"
#include "dpp/rng.hpp"
#include "test_util.hpp"

using namespace dpp;
using dpptest::bit_equal;
using dpptest::random_tensor;

namespace {

void zero_params(ModelParams& p) {
  for (auto& l : p.convs) {
    l.weight.fill(0.0);
    l.bias.fill(0.0);
  }
  p.head_weight.fill(0.0);
  p.head_bias.fill(0.0);
  ++p.revision;
}

// Order-independent digest of a tensor's exact bits.
std::uint64_t fnv1a(const Tensor& t, std::uint64_t h = 1469598103934665603ULL) {
  const unsigned char* bytes = reinterpret_cast<const unsigned char*>(t.data());
  for (std::size_t i = 0; i < t.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

TEST_CASE("zero weights on a zero image give zero logits and features") {
  ModelParams params = init_model(5, 77);
  zero_params(params);
  Tensor image({8, 8, 3}, 0.0);
  ForwardOutputs out = model_forward(params, image, PadMode::zero);
  for (std::size_t i = 0; i < out.logits.size(); ++i) CHECK(out.logits[i] == 0.0);
  for (std::size_t i = 0; i < out.features.size(); ++i) CHECK(out.features[i] == 0.0);
}

TEST_CASE("output shape algebra follows the stride rule") {
  ModelParams params = init_model(5, 1);
  ForwardOutputs out = model_forward(params, Tensor({64, 128, 3}, 0.1), PadMode::zero);
  CHECK(out.features.shape() == std::vector<int>{16, 32, 32});
  CHECK(out.logits.shape() == std::vector<int>{64, 128, 5});

  Rng rng(2);
  for (int t = 0; t < 6; ++t) {
    const int h = 4 * (1 + rng.uniform_int(8));
    const int w = 4 * (1 + rng.uniform_int(8));
    ForwardOutputs o = model_forward(params, Tensor({h, w, 3}, 0.05), PadMode::zero);
    CHECK(o.features.shape() == std::vector<int>{h / 4, w / 4, 32});
    CHECK(o.logits.shape() == std::vector<int>{h, w, 5});
  }
}

TEST_CASE("forward rejects dimensions not divisible by four") {
  ModelParams params = init_model(5, 1);
  CHECK_THROWS_AS(model_forward(params, Tensor({10, 16, 3}), PadMode::zero),
                  DimensionError);
  CHECK_THROWS_AS(model_forward(params, Tensor({16, 10, 3}), PadMode::zero),
                  DimensionError);
  CHECK_THROWS_AS(model_forward(params, Tensor({16, 16}), PadMode::zero), DimensionError);
}

TEST_CASE("golden forward digest for seed 42 on a fixed 8x8 input") {
  ModelParams params = init_model(5, 42);
  Tensor image({8, 8, 3});
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      for (int k = 0; k < 3; ++k)
        image(i, j, k) = (i * 64 + j * 8 + k) / 256.0;
  ForwardOutputs out = model_forward(params, image, PadMode::zero);
  const std::uint64_t digest = fnv1a(out.features, fnv1a(out.logits));
  // Frozen on first run; any change to init, conv, upsample or head
  // arithmetic shows up here.
  CHECK(digest == 0x3130f0f2744a35eeULL);
}

TEST_CASE("initialization is seed-keyed and deterministic") {
  ModelParams a = init_model(5, 123);
  ModelParams b = init_model(5, 123);
  ModelParams c = init_model(5, 124);
  REQUIRE(a.convs.size() == b.convs.size());
  for (std::size_t i = 0; i < a.convs.size(); ++i) {
    CHECK(bit_equal(a.convs[i].weight, b.convs[i].weight));
    CHECK(bit_equal(a.convs[i].bias, b.convs[i].bias));
  }
  CHECK(bit_equal(a.head_weight, b.head_weight));
  CHECK_FALSE(bit_equal(a.convs[0].weight, c.convs[0].weight));
}

TEST_CASE("parameter count matches the architecture arithmetic") {
  ModelParams params = init_model(5, 9);
  // 3 convs: 3x3x3x16+16, 3x3x16x32+32, 3x3x32x32+32; head: 32*5+5.
  const std::size_t expect = (9 * 3 * 16 + 16) + (9 * 16 * 32 + 32) +
                             (9 * 32 * 32 + 32) + (32 * 5 + 5);
  CHECK(parameter_count(params) == expect);
  ClassifierParams cls = init_classifier(32, 9);
  CHECK(parameter_count(cls) == 9u * 32 * 8 + 8 + 8 + 1);
}

TEST_CASE("width-periodic convolutions are translation covariant") {
  ModelParams params = init_model(4, 31);
  Rng rng(32);
  const int h = 16, w = 32, shift = 8;  // multiple of the total stride
  Tensor image = random_tensor({h, w, 3}, rng, 0.0, 1.0);
  Tensor shifted({h, w, 3});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int k = 0; k < 3; ++k) shifted(i, (j + shift) % w, k) = image(i, j, k);

  ForwardOutputs base = model_forward(params, image, PadMode::periodic_width);
  ForwardOutputs moved = model_forward(params, shifted, PadMode::periodic_width);

  // Features live at stride 4: a shift of 8 input columns is 2 feature columns.
  const int fw = w / 4, fshift = shift / 4;
  for (int i = 0; i < h / 4; ++i)
    for (int j = 0; j < fw; ++j)
      for (int k = 0; k < 32; ++k)
        CHECK(moved.features(i, (j + fshift) % fw, k) == base.features(i, j, k));

  // Upsampling clamps at the left/right borders, so logit covariance holds on
  // interior columns only.
  for (int i = 0; i < h; ++i)
    for (int j = 2; j < w - 2; ++j) {
      const int js = (j + shift) % w;
      if (js < 2 || js >= w - 2) continue;
      for (int k = 0; k < 4; ++k) CHECK(moved.logits(i, js, k) == base.logits(i, j, k));
    }
}

TEST_CASE("zero output gradients produce zero parameter gradients") {
  ModelParams params = init_model(4, 5);
  ForwardState state;
  Tensor image({8, 8, 3}, 0.3);
  ForwardOutputs out = model_forward(params, image, PadMode::zero, &state);
  ModelGrads grads = model_backward(params, state, Tensor::zeros_like(out.logits),
                                    Tensor::zeros_like(out.features));
  for (const auto& g : grads.conv_w)
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
  for (std::size_t i = 0; i < grads.head_w.size(); ++i) CHECK(grads.head_w[i] == 0.0);
  for (std::size_t i = 0; i < grads.input.size(); ++i) CHECK(grads.input[i] == 0.0);
}

TEST_CASE("dead ReLU units stop gradient flow") {
  ModelParams params = init_model(4, 6);
  // A very negative first-layer bias silences every first-layer activation.
  params.convs[0].bias.fill(-100.0);
  ++params.revision;
  ForwardState state;
  Tensor image({8, 8, 3}, 0.5);
  ForwardOutputs out = model_forward(params, image, PadMode::zero, &state);
  Tensor dlogits(out.logits.shape(), 1.0);
  ModelGrads grads =
      model_backward(params, state, dlogits, Tensor::zeros_like(out.features));
  for (std::size_t i = 0; i < grads.conv_w[0].size(); ++i)
    CHECK(grads.conv_w[0][i] == 0.0);
  for (std::size_t i = 0; i < grads.conv_b[0].size(); ++i)
    CHECK(grads.conv_b[0][i] == 0.0);
  for (std::size_t i = 0; i < grads.input.size(); ++i) CHECK(grads.input[i] == 0.0);
}

TEST_CASE("full-chain gradients match finite differences on an 8x16 input") {
  // Loss = sum of logits; check a sampled subset of parameters per layer.
  ModelParams params = init_model(3, 7);
  Tensor image({8, 16, 3});
  Rng rng(8);
  for (std::size_t i = 0; i < image.size(); ++i) image[i] = rng.uniform();

  auto loss = [&]() {
    ForwardOutputs o = model_forward(params, image, PadMode::periodic_width);
    double s = 0.0;
    for (std::size_t i = 0; i < o.logits.size(); ++i) s += o.logits[i];
    return s;
  };

  ForwardState state;
  ForwardOutputs out = model_forward(params, image, PadMode::periodic_width, &state);
  Tensor dlogits(out.logits.shape(), 1.0);
  ModelGrads grads =
      model_backward(params, state, dlogits, Tensor::zeros_like(out.features));

  double worst = 0.0;
  auto probe = [&](Tensor& param, const Tensor& grad, std::size_t idx) {
    const double x = param[idx];
    const double h = 1e-6 * std::max(1.0, std::abs(x));
    param[idx] = x + h;
    ++params.revision;
    const double fp = loss();
    param[idx] = x - h;
    ++params.revision;
    const double fm = loss();
    param[idx] = x;
    ++params.revision;
    const double fd = (fp - fm) / (2 * h);
    const double den = std::max({std::abs(fd), std::abs(grad[idx]), 1e-8});
    worst = std::max(worst, std::abs(fd - grad[idx]) / den);
  };

  for (std::size_t l = 0; l < params.convs.size(); ++l) {
    for (int t = 0; t < 6; ++t)
      probe(params.convs[l].weight, grads.conv_w[l],
            static_cast<std::size_t>(rng.uniform_int(
                static_cast<int>(params.convs[l].weight.size()))));
    probe(params.convs[l].bias, grads.conv_b[l],
          static_cast<std::size_t>(rng.uniform_int(
              static_cast<int>(params.convs[l].bias.size()))));
  }
  for (int t = 0; t < 6; ++t)
    probe(params.head_weight, grads.head_w,
          static_cast<std::size_t>(
              rng.uniform_int(static_cast<int>(params.head_weight.size()))));
  probe(params.head_bias, grads.head_b, 0);

  // Input gradients through the whole chain.
  for (int t = 0; t < 8; ++t) {
    const std::size_t idx =
        static_cast<std::size_t>(rng.uniform_int(static_cast<int>(image.size())));
    const double x = image[idx];
    const double h = 1e-6 * std::max(1.0, std::abs(x));
    image[idx] = x + h;
    const double fp = loss();
    image[idx] = x - h;
    const double fm = loss();
    image[idx] = x;
    const double fd = (fp - fm) / (2 * h);
    const double den = std::max({std::abs(fd), std::abs(grads.input[idx]), 1e-8});
    worst = std::max(worst, std::abs(fd - grads.input[idx]) / den);
  }

  CHECK(worst < 1e-5);
}

TEST_CASE("backward rejects stale forward caches") {
  ModelParams params = init_model(4, 10);
  ForwardState state;
  ForwardOutputs out = model_forward(params, Tensor({8, 8, 3}, 0.2), PadMode::zero, &state);
  ++params.revision;  // simulate an in-place update after the forward
  CHECK_THROWS_AS(model_backward(params, state, Tensor::zeros_like(out.logits),
                                 Tensor::zeros_like(out.features)),
                  StaleCache);
}

TEST_CASE("classifier outputs one half for zero weights and zero features") {
  ClassifierParams cls = init_classifier(32, 3);
  cls.conv_w.fill(0.0);
  cls.conv_b.fill(0.0);
  cls.lin_w.fill(0.0);
  cls.lin_b = 0.0;
  ++cls.revision;
  CHECK(classifier_forward(cls, Tensor({6, 6, 32}, 0.0)) == 0.5);
}

TEST_CASE("classifier output is monotone in the final linear weight") {
  ClassifierParams cls = init_classifier(8, 4);
  // Positive conv weights + positive features guarantee positive pooling.
  for (std::size_t i = 0; i < cls.conv_w.size(); ++i)
    cls.conv_w[i] = std::abs(cls.conv_w[i]);
  ++cls.revision;
  Tensor features({6, 6, 8}, 0.5);
  const double base = classifier_forward(cls, features);
  cls.lin_w(0) += 0.5;
  ++cls.revision;
  CHECK(classifier_forward(cls, features) > base);
}

TEST_CASE("classifier gradients match finite differences") {
  ClassifierParams cls = init_classifier(8, 11);
  Rng rng(12);
  Tensor features = random_tensor({5, 7, 8}, rng, -1.0, 1.0);
  ClassifierState state;
  classifier_forward(cls, features, &state);
  ClassifierGrads grads = classifier_backward(cls, state, 1.0);

  double worst = 0.0;
  auto fd_for = [&](auto setter, auto getter) {
    const double x = getter();
    const double h = 1e-6 * std::max(1.0, std::abs(x));
    setter(x + h);
    ++cls.revision;
    const double fp = classifier_forward(cls, features);
    setter(x - h);
    ++cls.revision;
    const double fm = classifier_forward(cls, features);
    setter(x);
    ++cls.revision;
    return (fp - fm) / (2 * h);
  };

  for (int t = 0; t < 10; ++t) {
    const std::size_t wi =
        static_cast<std::size_t>(rng.uniform_int(static_cast<int>(cls.conv_w.size())));
    const double fd = fd_for([&](double v) { cls.conv_w[wi] = v; },
                             [&] { return cls.conv_w[wi]; });
    const double den = std::max({std::abs(fd), std::abs(grads.conv_w[wi]), 1e-8});
    worst = std::max(worst, std::abs(fd - grads.conv_w[wi]) / den);
  }
  for (int k = 0; k < 8; ++k) {
    const double fd =
        fd_for([&](double v) { cls.lin_w(k) = v; }, [&] { return cls.lin_w(k); });
    const double den = std::max({std::abs(fd), std::abs(grads.lin_w(k)), 1e-8});
    worst = std::max(worst, std::abs(fd - grads.lin_w(k)) / den);
  }
  {
    const double fd = fd_for([&](double v) { cls.lin_b = v; }, [&] { return cls.lin_b; });
    const double den = std::max({std::abs(fd), std::abs(grads.lin_b), 1e-8});
    worst = std::max(worst, std::abs(fd - grads.lin_b) / den);
  }
  for (int t = 0; t < 10; ++t) {
    const std::size_t fi =
        static_cast<std::size_t>(rng.uniform_int(static_cast<int>(features.size())));
    const double x = features[fi];
    const double h = 1e-6 * std::max(1.0, std::abs(x));
    features[fi] = x + h;
    const double fp = classifier_forward(cls, features);
    features[fi] = x - h;
    const double fm = classifier_forward(cls, features);
    features[fi] = x;
    const double fd = (fp - fm) / (2 * h);
    const double den = std::max({std::abs(fd), std::abs(grads.features[fi]), 1e-8});
    worst = std::max(worst, std::abs(fd - grads.features[fi]) / den);
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("classifier probability stays inside (0, 1)") {
  ClassifierParams cls = init_classifier(8, 13);
  Rng rng(14);
  for (int t = 0; t < 20; ++t) {
    Tensor features = random_tensor({4, 4, 8}, rng, -5.0, 5.0);
    const double p = classifier_forward(cls, features);
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}
