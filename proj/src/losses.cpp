#include "dpp/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace dpp {

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw ValidationError("LossConfig: tau must be positive");
  if (!(kl_epsilon > 0.0 && kl_epsilon <= 1e-3)) {
    throw ValidationError("LossConfig: kl_epsilon must lie in (0, 1e-3]");
  }
  if (num_classes < 2) throw ValidationError("LossConfig: num_classes below 2");
  if (alpha < 0.0 || beta < 0.0) throw ValidationError("LossConfig: negative loss weight");
}

TfctResult tfct_loss(const Tensor& erp_feats, const Tensor& tp_feats, double tau) {
  if (erp_feats.rank() != 2 || !erp_feats.same_shape(tp_feats)) {
    throw ShapeMismatch("tfct_loss: feature sequences " + erp_feats.shape_str() + " vs " +
                        tp_feats.shape_str());
  }
  if (!(tau > 0.0)) throw ValidationError("tfct_loss: tau must be positive");
  const int n = erp_feats.dim(0);
  const int c = erp_feats.dim(1);
  const int m = 2 * n;  // all patch vectors in the batch
  if (n < 2) throw ShapeMismatch("tfct_loss: need at least 2 patches");

  // Normalize all vectors; row a < n comes from the ERP side, a >= n from TP.
  std::vector<double> z(static_cast<std::size_t>(m) * c);
  std::vector<double> norm(static_cast<std::size_t>(m));
  auto src = [&](int a, int k) {
    return a < n ? erp_feats(a, k) : tp_feats(a - n, k);
  };
  for (int a = 0; a < m; ++a) {
    double s = 0.0;
    for (int k = 0; k < c; ++k) s += src(a, k) * src(a, k);
    const double r = std::sqrt(s);
    if (r < 1e-12) {
      throw ZeroVector("tfct_loss: feature vector " + std::to_string(a) +
                       " has near-zero norm");
    }
    norm[static_cast<std::size_t>(a)] = r;
    for (int k = 0; k < c; ++k) z[static_cast<std::size_t>(a) * c + k] = src(a, k) / r;
  }

  // Pairwise cosine similarities.
  std::vector<double> sim(static_cast<std::size_t>(m) * m);
  for (int a = 0; a < m; ++a) {
    for (int b = a; b < m; ++b) {
      double s = 0.0;
      const double* za = z.data() + static_cast<std::size_t>(a) * c;
      const double* zb = z.data() + static_cast<std::size_t>(b) * c;
      for (int k = 0; k < c; ++k) s += za[k] * zb[k];
      sim[static_cast<std::size_t>(a) * m + b] = s;
      sim[static_cast<std::size_t>(b) * m + a] = s;
    }
  }

  // InfoNCE over every anchor; candidates are all other vectors in the batch,
  // the positive being the index-matched partner from the other sequence.
  double loss = 0.0;
  std::vector<double> dz(static_cast<std::size_t>(m) * c, 0.0);
  std::vector<double> p(static_cast<std::size_t>(m));
  for (int a = 0; a < m; ++a) {
    const int pos = a < n ? a + n : a - n;
    double mx = -1e300;
    for (int b = 0; b < m; ++b) {
      if (b == a) continue;
      mx = std::max(mx, sim[static_cast<std::size_t>(a) * m + b] / tau);
    }
    double denom = 0.0;
    for (int b = 0; b < m; ++b) {
      if (b == a) continue;
      const double e = std::exp(sim[static_cast<std::size_t>(a) * m + b] / tau - mx);
      p[static_cast<std::size_t>(b)] = e;
      denom += e;
    }
    loss += -(sim[static_cast<std::size_t>(a) * m + pos] / tau) + mx + std::log(denom);
    // d loss_a / d sim(a,b) = (softmax_b - [b==pos]) / tau, then mean over anchors.
    for (int b = 0; b < m; ++b) {
      if (b == a) continue;
      double g = (p[static_cast<std::size_t>(b)] / denom - (b == pos ? 1.0 : 0.0)) /
                 (tau * m);
      const double* za = z.data() + static_cast<std::size_t>(a) * c;
      const double* zb = z.data() + static_cast<std::size_t>(b) * c;
      double* da = dz.data() + static_cast<std::size_t>(a) * c;
      double* db = dz.data() + static_cast<std::size_t>(b) * c;
      for (int k = 0; k < c; ++k) {
        da[k] += g * zb[k];
        db[k] += g * za[k];
      }
    }
  }
  loss /= m;

  // Back through the L2 normalization: dv = (dz - z (z . dz)) / |v|.
  TfctResult out;
  out.loss = loss;
  out.grad_erp = Tensor({n, c});
  out.grad_tp = Tensor({n, c});
  for (int a = 0; a < m; ++a) {
    const double* za = z.data() + static_cast<std::size_t>(a) * c;
    const double* da = dz.data() + static_cast<std::size_t>(a) * c;
    double dot = 0.0;
    for (int k = 0; k < c; ++k) dot += za[k] * da[k];
    Tensor& g = a < n ? out.grad_erp : out.grad_tp;
    const int row = a < n ? a : a - n;
    for (int k = 0; k < c; ++k) {
      g(row, k) = (da[k] - za[k] * dot) / norm[static_cast<std::size_t>(a)];
    }
  }
  return out;
}

namespace {

// Softmax, floor at eps, renormalize. Returns the floored distribution and
// the raw softmax (needed for the floor mask on the way back).
void floored_softmax(const double* logits, int c, double eps, double* prob,
                     double* raw) {
  double mx = logits[0];
  for (int k = 1; k < c; ++k) mx = std::max(mx, logits[k]);
  double sum = 0.0;
  for (int k = 0; k < c; ++k) {
    raw[k] = std::exp(logits[k] - mx);
    sum += raw[k];
  }
  double fsum = 0.0;
  for (int k = 0; k < c; ++k) {
    raw[k] /= sum;
    prob[k] = std::max(raw[k], eps);
    fsum += prob[k];
  }
  for (int k = 0; k < c; ++k) prob[k] /= fsum;
}

// d(loss)/d(logits) given d(loss)/d(floored prob), for one pixel.
void floored_softmax_backward(const double* dprob, const double* prob, const double* raw,
                              int c, double eps, double scale, double* dlogits) {
  // prob = f / s with f_k = max(raw_k, eps), s = sum f.
  double mean = 0.0;
  for (int k = 0; k < c; ++k) mean += dprob[k] * prob[k];
  double s = 0.0;
  for (int k = 0; k < c; ++k) s += std::max(raw[k], eps);
  // d/df, then through the floor, then through the softmax.
  double dot = 0.0;
  std::vector<double> draw(static_cast<std::size_t>(c));
  for (int k = 0; k < c; ++k) {
    const double df = (dprob[k] - mean) / s;
    draw[static_cast<std::size_t>(k)] = raw[k] > eps ? df : 0.0;
    dot += draw[static_cast<std::size_t>(k)] * raw[k];
  }
  for (int k = 0; k < c; ++k) {
    dlogits[k] += scale * raw[k] * (draw[static_cast<std::size_t>(k)] - dot);
  }
}

}  // namespace

ConsistencyResult prediction_consistency_loss(const Tensor& erp_logits_tangent,
                                              const Tensor& tp_logits, double kl_epsilon,
                                              bool stop_gradient_erp) {
  if (erp_logits_tangent.rank() != 4 || !erp_logits_tangent.same_shape(tp_logits)) {
    throw ShapeMismatch("prediction_consistency_loss: " + erp_logits_tangent.shape_str() +
                        " vs " + tp_logits.shape_str());
  }
  if (!(kl_epsilon > 0.0 && kl_epsilon <= 1e-3)) {
    throw ValidationError("prediction_consistency_loss: kl_epsilon outside (0, 1e-3]");
  }
  const int planes = erp_logits_tangent.dim(0);
  const int h = erp_logits_tangent.dim(1);
  const int w = erp_logits_tangent.dim(2);
  const int c = erp_logits_tangent.dim(3);

  ConsistencyResult out;
  out.grad_erp = Tensor::zeros_like(erp_logits_tangent);
  out.grad_tp = Tensor::zeros_like(tp_logits);

  std::vector<double> pprob(static_cast<std::size_t>(c)), praw(static_cast<std::size_t>(c));
  std::vector<double> qprob(static_cast<std::size_t>(c)), qraw(static_cast<std::size_t>(c));
  std::vector<double> dp(static_cast<std::size_t>(c)), dq(static_cast<std::size_t>(c));

  const double pixel_scale = 1.0 / (static_cast<double>(h) * w);  // mean within a patch
  double loss = 0.0;
  const std::size_t stride_px = static_cast<std::size_t>(c);
  const double* pe = erp_logits_tangent.data();
  const double* pt = tp_logits.data();
  double* ge = out.grad_erp.data();
  double* gt = out.grad_tp.data();

  const std::size_t npix = static_cast<std::size_t>(planes) * h * w;
  for (std::size_t px = 0; px < npix; ++px) {
    const double* la = pe + px * stride_px;
    const double* lb = pt + px * stride_px;
    floored_softmax(la, c, kl_epsilon, pprob.data(), praw.data());
    floored_softmax(lb, c, kl_epsilon, qprob.data(), qraw.data());
    double kl = 0.0;
    for (int k = 0; k < c; ++k) {
      const double lr = std::log(pprob[static_cast<std::size_t>(k)]) -
                        std::log(qprob[static_cast<std::size_t>(k)]);
      kl += pprob[static_cast<std::size_t>(k)] * lr;
      dp[static_cast<std::size_t>(k)] = lr + 1.0;
      dq[static_cast<std::size_t>(k)] =
          -pprob[static_cast<std::size_t>(k)] / qprob[static_cast<std::size_t>(k)];
    }
    loss += kl * pixel_scale;
    if (!stop_gradient_erp) {
      floored_softmax_backward(dp.data(), pprob.data(), praw.data(), c, kl_epsilon,
                               pixel_scale, ge + px * stride_px);
    }
    floored_softmax_backward(dq.data(), qprob.data(), qraw.data(), c, kl_epsilon,
                             pixel_scale, gt + px * stride_px);
  }
  out.loss = loss;
  return out;
}

namespace {

constexpr double kProbClamp = 1e-7;

double clamp_prob(double p) {
  return std::min(1.0 - kProbClamp, std::max(kProbClamp, p));
}

bool in_clamp_range(double p) { return p > kProbClamp && p < 1.0 - kProbClamp; }

}  // namespace

DomainBceResult domain_classifier_loss(double prob_target, double prob_source) {
  const double dt = clamp_prob(prob_target);
  const double ds = clamp_prob(prob_source);
  DomainBceResult r;
  r.loss = -std::log(dt) - std::log(1.0 - ds);
  r.d_dt = in_clamp_range(prob_target) ? -1.0 / dt : 0.0;
  r.d_ds = in_clamp_range(prob_source) ? 1.0 / (1.0 - ds) : 0.0;
  return r;
}

DomainBceResult domain_adversarial_loss(double prob_target, double prob_source) {
  const double dt = clamp_prob(prob_target);
  const double ds = clamp_prob(prob_source);
  DomainBceResult r;
  r.loss = -std::log(ds) - std::log(1.0 - dt);
  r.d_dt = in_clamp_range(prob_target) ? 1.0 / (1.0 - dt) : 0.0;
  r.d_ds = in_clamp_range(prob_source) ? -1.0 / ds : 0.0;
  return r;
}

CeResult segmentation_ce_loss(const Tensor& logits, const Tensor& labels, int ignore_index) {
  if (logits.rank() != 3 || labels.rank() != 2 || logits.dim(0) != labels.dim(0) ||
      logits.dim(1) != labels.dim(1)) {
    throw ShapeMismatch("segmentation_ce_loss: logits " + logits.shape_str() +
                        " vs labels " + labels.shape_str());
  }
  const int h = logits.dim(0);
  const int w = logits.dim(1);
  const int c = logits.dim(2);

  CeResult out;
  out.grad = Tensor::zeros_like(logits);
  std::vector<double> prob(static_cast<std::size_t>(c));
  double loss = 0.0;
  std::size_t n_valid = 0;

  const double* lp = logits.data();
  double* gp = out.grad.data();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const long lab = std::lround(labels(y, x));
      if (lab == ignore_index) continue;
      if (lab < 0 || lab >= c) {
        throw LabelOutOfRange("segmentation_ce_loss: label " + std::to_string(lab) +
                              " outside [0, " + std::to_string(c) + ")");
      }
      const std::size_t px = (static_cast<std::size_t>(y) * w + x) * c;
      double mx = lp[px];
      for (int k = 1; k < c; ++k) mx = std::max(mx, lp[px + k]);
      double sum = 0.0;
      for (int k = 0; k < c; ++k) {
        prob[static_cast<std::size_t>(k)] = std::exp(lp[px + k] - mx);
        sum += prob[static_cast<std::size_t>(k)];
      }
      loss += -(lp[px + lab] - mx - std::log(sum));
      for (int k = 0; k < c; ++k) {
        gp[px + k] = prob[static_cast<std::size_t>(k)] / sum - (k == lab ? 1.0 : 0.0);
      }
      ++n_valid;
    }
  }
  if (n_valid == 0) throw AllIgnored("segmentation_ce_loss: no valid pixels");
  out.loss = loss / static_cast<double>(n_valid);
  const double inv = 1.0 / static_cast<double>(n_valid);
  for (std::size_t i = 0; i < out.grad.size(); ++i) gp[i] *= inv;
  return out;
}

double total_loss(double ls, double ld, double lpc, double lfc, double alpha, double beta) {
  const double terms[4] = {ls, ld, lpc, lfc};
  const char* names[4] = {"L_s", "L_d", "L_pc", "L_fc"};
  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(terms[i])) {
      throw NonFiniteTerm(std::string("total_loss: ") + names[i] + " is not finite");
    }
  }
  const double total = ls + alpha * ld + beta * lpc + lfc;
  if (!std::isfinite(total)) throw NonFiniteTerm("total_loss: combined value is not finite");
  return total;
}

}  // namespace dpp
