#pragma once

#include "dpp/tensor.hpp"

namespace dpp {

// Loss hyper-parameters. alpha weights the intra-projection adversarial term
// and beta the prediction-consistency term in the combined objective; the
// defaults are the best trade-off weights.
struct LossConfig {
  double tau = 0.07;        // contrastive temperature
  double alpha = 0.02;      // adversarial weight
  double beta = 50.0;       // consistency weight
  int num_classes = 5;
  double kl_epsilon = 1e-6; // probability floor for the KL term

  void validate() const;
};

// Domain convention for the binary classifier: panoramic/target features
// carry label 1, pinhole/source features label 0.
struct DomainLabels {
  static constexpr double d_t = 1.0;
  static constexpr double d_s = 0.0;
};

// Tangent-wise feature contrastive loss over two index-aligned sequences of
// per-patch pooled feature vectors (N x C each). Vectors are L2-normalized
// internally; similarity is the dot product of normalized vectors. Every one
// of the 2N vectors serves as an anchor; its index-matched partner in the
// other sequence is the positive, all other 2N-2 vectors are negatives. No
// storage beyond the current batch is used.
struct TfctResult {
  double loss = 0.0;
  Tensor grad_erp;  // d loss / d erp_feats (un-normalized inputs)
  Tensor grad_tp;
};
TfctResult tfct_loss(const Tensor& erp_feats, const Tensor& tp_feats, double tau);

// Per-pixel KL divergence between the tangent-projected ERP-path logits
// (teacher position, P) and the TP-path logits (Q), both given as raw logits
// P x h x w x C. Probabilities are floored at kl_epsilon and renormalized.
// Pixel KLs are averaged within each patch and summed over patches. Gradients
// flow to both inputs unless stop_gradient_erp is set.
struct ConsistencyResult {
  double loss = 0.0;
  Tensor grad_erp;
  Tensor grad_tp;
};
ConsistencyResult prediction_consistency_loss(const Tensor& erp_logits_tangent,
                                              const Tensor& tp_logits, double kl_epsilon,
                                              bool stop_gradient_erp = false);

// Binary cross-entropy for the domain classifier (labels: target=1, source=0)
// and its label-swapped adversarial counterpart for the encoder. Inputs are
// probabilities, clamped into [1e-7, 1-1e-7]. d_dt/d_ds are the derivatives
// w.r.t. the (pre-clamp) probabilities.
struct DomainBceResult {
  double loss = 0.0;
  double d_dt = 0.0;
  double d_ds = 0.0;
};
DomainBceResult domain_classifier_loss(double prob_target, double prob_source);
DomainBceResult domain_adversarial_loss(double prob_target, double prob_source);

// Pixel-wise softmax cross-entropy, mean over non-ignored pixels.
// grad = (softmax - onehot) / n_valid at valid pixels, zero elsewhere.
struct CeResult {
  double loss = 0.0;
  Tensor grad;
};
CeResult segmentation_ce_loss(const Tensor& logits, const Tensor& labels,
                              int ignore_index = 255);

// Combined objective: ls + alpha*ld + beta*lpc + lfc.
double total_loss(double ls, double ld, double lpc, double lfc, double alpha, double beta);

}  // namespace dpp
