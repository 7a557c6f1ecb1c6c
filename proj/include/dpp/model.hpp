#pragma once

#include <cstdint>
#include <vector>

#include "dpp/errors.hpp"
#include "dpp/tensor.hpp"

namespace dpp {

// Convolution padding: tangent patches use zero padding, ERP images wrap in
// width (the panorama is horizontally periodic) and zero-pad in height.
enum class PadMode { zero, periodic_width };

struct ConvLayer {
  int in_ch = 0;
  int out_ch = 0;
  int stride = 1;
  Tensor weight;  // [3][3][in][out]
  Tensor bias;    // [out]
};

// Encoder/decoder parameters for one path. `revision` is bumped whenever the
// parameters are mutated in place so stale forward caches can be detected.
struct ModelParams {
  std::vector<ConvLayer> convs;
  Tensor head_weight;  // [F][C], a 1x1 conv
  Tensor head_bias;    // [C]
  std::uint64_t init_seed = 0;
  std::uint64_t revision = 0;

  int num_classes() const { return head_weight.dim(1); }
  int feature_channels() const { return head_weight.dim(0); }
};

// 3 -> 16 -> 32 -> 32 with strides 1,2,2; He-normal weights, zero biases.
ModelParams init_model(int num_classes, std::uint64_t seed);

struct ForwardOutputs {
  Tensor logits;    // H x W x C
  Tensor features;  // (H/4) x (W/4) x F, the pre-head activations
};

// Activation cache for the backward pass.
struct ForwardState {
  PadMode pad = PadMode::zero;
  std::uint64_t revision = 0;
  Tensor input;
  std::vector<Tensor> pre;  // pre-activation per conv layer
  std::vector<Tensor> act;  // post-ReLU per conv layer; act.back() = features
  Tensor upsampled;         // H x W x F
};

ForwardOutputs model_forward(const ModelParams& params, const Tensor& image, PadMode pad,
                             ForwardState* state = nullptr);

struct ModelGrads {
  std::vector<Tensor> conv_w;
  std::vector<Tensor> conv_b;
  Tensor head_w;
  Tensor head_b;
  Tensor input;  // gradient w.r.t. the image
};

// Exact reverse-mode gradients. Both output gradients feed in: dlogits through
// the head and upsampling, dfeatures directly into the feature map (losses on
// features and on logits may both be active). Throws StaleCache if the
// parameters changed since the cached forward.
ModelGrads model_backward(const ModelParams& params, const ForwardState& state,
                          const Tensor& dlogits, const Tensor& dfeatures);

// Domain classifier: 3x3 conv F->8 stride 2, ReLU, global average pool,
// linear 8->1, sigmoid.
struct ClassifierParams {
  Tensor conv_w;  // [3][3][F][8]
  Tensor conv_b;  // [8]
  Tensor lin_w;   // [8]
  double lin_b = 0.0;
  std::uint64_t revision = 0;
};

ClassifierParams init_classifier(int feature_channels, std::uint64_t seed);

struct ClassifierState {
  std::uint64_t revision = 0;
  Tensor features;
  Tensor pre;
  Tensor act;
  std::vector<double> pooled;
  double prob = 0.0;
};

double classifier_forward(const ClassifierParams& params, const Tensor& features,
                          ClassifierState* state = nullptr);

struct ClassifierGrads {
  Tensor conv_w;
  Tensor conv_b;
  Tensor lin_w;
  double lin_b = 0.0;
  Tensor features;
};

ClassifierGrads classifier_backward(const ClassifierParams& params,
                                    const ClassifierState& state, double dprob);

std::size_t parameter_count(const ModelParams& params);
std::size_t parameter_count(const ClassifierParams& params);

}  // namespace dpp
