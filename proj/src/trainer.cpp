#include "dpp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace dpp {

namespace {

constexpr double kAdamEps = 1e-8;

void adam_tensor(Tensor& p, const Tensor& g, MomentPair& mp, double lr, double b1,
                 double b2, double wd, long t) {
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g.data()[i] + wd * p.data()[i];
    const double m = b1 * mp.m.data()[i] + (1.0 - b1) * gi;
    const double v = b2 * mp.v.data()[i] + (1.0 - b2) * gi * gi;
    mp.m.data()[i] = m;
    mp.v.data()[i] = v;
    p.data()[i] -= lr * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps);
  }
}

void sgd_tensor(Tensor& p, const Tensor& g, double lr, double wd) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    p.data()[i] -= lr * (g.data()[i] + wd * p.data()[i]);
  }
}

MomentPair zero_moments(const Tensor& like) {
  return {Tensor::zeros_like(like), Tensor::zeros_like(like)};
}

ModelOptState zero_model_opt(const ModelParams& m) {
  ModelOptState o;
  for (const ConvLayer& l : m.convs) {
    o.conv_w.push_back(zero_moments(l.weight));
    o.conv_b.push_back(zero_moments(l.bias));
  }
  o.head_w = zero_moments(m.head_weight);
  o.head_b = zero_moments(m.head_bias);
  return o;
}

ClassifierOptState zero_classifier_opt(const ClassifierParams& c) {
  ClassifierOptState o;
  o.conv_w = zero_moments(c.conv_w);
  o.conv_b = zero_moments(c.conv_b);
  o.lin_w = zero_moments(c.lin_w);
  return o;
}

// Parameter-gradient accumulators, zero-initialized to the model's shapes.
struct ModelAccum {
  std::vector<Tensor> conv_w;
  std::vector<Tensor> conv_b;
  Tensor head_w;
  Tensor head_b;

  explicit ModelAccum(const ModelParams& m) {
    for (const ConvLayer& l : m.convs) {
      conv_w.push_back(Tensor::zeros_like(l.weight));
      conv_b.push_back(Tensor::zeros_like(l.bias));
    }
    head_w = Tensor::zeros_like(m.head_weight);
    head_b = Tensor::zeros_like(m.head_bias);
  }

  void add(const ModelGrads& g) {
    for (std::size_t l = 0; l < conv_w.size(); ++l) {
      for (std::size_t i = 0; i < conv_w[l].size(); ++i) {
        conv_w[l].data()[i] += g.conv_w[l].data()[i];
      }
      for (std::size_t i = 0; i < conv_b[l].size(); ++i) {
        conv_b[l].data()[i] += g.conv_b[l].data()[i];
      }
    }
    for (std::size_t i = 0; i < head_w.size(); ++i) head_w.data()[i] += g.head_w.data()[i];
    for (std::size_t i = 0; i < head_b.size(); ++i) head_b.data()[i] += g.head_b.data()[i];
  }
};

struct ClassifierAccum {
  Tensor conv_w;
  Tensor conv_b;
  Tensor lin_w;
  double lin_b = 0.0;

  explicit ClassifierAccum(const ClassifierParams& c)
      : conv_w(Tensor::zeros_like(c.conv_w)),
        conv_b(Tensor::zeros_like(c.conv_b)),
        lin_w(Tensor::zeros_like(c.lin_w)) {}

  void add(const ClassifierGrads& g) {
    for (std::size_t i = 0; i < conv_w.size(); ++i) conv_w.data()[i] += g.conv_w.data()[i];
    for (std::size_t i = 0; i < conv_b.size(); ++i) conv_b.data()[i] += g.conv_b.data()[i];
    for (std::size_t i = 0; i < lin_w.size(); ++i) lin_w.data()[i] += g.lin_w.data()[i];
    lin_b += g.lin_b;
  }
};

void update_model(ModelParams& m, const ModelAccum& g, ModelOptState& opt,
                  const TrainConfig& cfg) {
  ++opt.t;
  if (cfg.optimizer == "adam") {
    for (std::size_t l = 0; l < m.convs.size(); ++l) {
      adam_tensor(m.convs[l].weight, g.conv_w[l], opt.conv_w[l], cfg.lr, cfg.beta1,
                  cfg.beta2, cfg.weight_decay, opt.t);
      adam_tensor(m.convs[l].bias, g.conv_b[l], opt.conv_b[l], cfg.lr, cfg.beta1,
                  cfg.beta2, cfg.weight_decay, opt.t);
    }
    adam_tensor(m.head_weight, g.head_w, opt.head_w, cfg.lr, cfg.beta1, cfg.beta2,
                cfg.weight_decay, opt.t);
    adam_tensor(m.head_bias, g.head_b, opt.head_b, cfg.lr, cfg.beta1, cfg.beta2,
                cfg.weight_decay, opt.t);
  } else {
    for (std::size_t l = 0; l < m.convs.size(); ++l) {
      sgd_tensor(m.convs[l].weight, g.conv_w[l], cfg.lr, cfg.weight_decay);
      sgd_tensor(m.convs[l].bias, g.conv_b[l], cfg.lr, cfg.weight_decay);
    }
    sgd_tensor(m.head_weight, g.head_w, cfg.lr, cfg.weight_decay);
    sgd_tensor(m.head_bias, g.head_b, cfg.lr, cfg.weight_decay);
  }
  ++m.revision;
}

void update_classifier(ClassifierParams& c, const ClassifierAccum& g,
                       ClassifierOptState& opt, const TrainConfig& cfg) {
  ++opt.t;
  if (cfg.optimizer == "adam") {
    adam_tensor(c.conv_w, g.conv_w, opt.conv_w, cfg.lr, cfg.beta1, cfg.beta2,
                cfg.weight_decay, opt.t);
    adam_tensor(c.conv_b, g.conv_b, opt.conv_b, cfg.lr, cfg.beta1, cfg.beta2,
                cfg.weight_decay, opt.t);
    adam_tensor(c.lin_w, g.lin_w, opt.lin_w, cfg.lr, cfg.beta1, cfg.beta2,
                cfg.weight_decay, opt.t);
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.t));
    const double gb = g.lin_b + cfg.weight_decay * c.lin_b;
    opt.m_b = cfg.beta1 * opt.m_b + (1.0 - cfg.beta1) * gb;
    opt.v_b = cfg.beta2 * opt.v_b + (1.0 - cfg.beta2) * gb * gb;
    c.lin_b -= cfg.lr * (opt.m_b / bc1) / (std::sqrt(opt.v_b / bc2) + kAdamEps);
  } else {
    sgd_tensor(c.conv_w, g.conv_w, cfg.lr, cfg.weight_decay);
    sgd_tensor(c.conv_b, g.conv_b, cfg.lr, cfg.weight_decay);
    sgd_tensor(c.lin_w, g.lin_w, cfg.lr, cfg.weight_decay);
    c.lin_b -= cfg.lr * (g.lin_b + cfg.weight_decay * c.lin_b);
  }
  ++c.revision;
}

Tensor crop_image(const Tensor& img, int r0, int c0, int p) {
  Tensor out({p, p, 3});
  for (int y = 0; y < p; ++y) {
    for (int x = 0; x < p; ++x) {
      for (int k = 0; k < 3; ++k) out(y, x, k) = img(r0 + y, c0 + x, k);
    }
  }
  return out;
}

Tensor crop_labels(const Tensor& lab, int r0, int c0, int p) {
  Tensor out({p, p});
  for (int y = 0; y < p; ++y) {
    for (int x = 0; x < p; ++x) out(y, x) = lab(r0 + y, c0 + x);
  }
  return out;
}

Tensor slice_plane(const Tensor& stacked, int k) {
  const int r = stacked.dim(1), c = stacked.dim(2), ch = stacked.dim(3);
  Tensor out({r, c, ch});
  const std::size_t n = out.size();
  const double* src = stacked.data() + static_cast<std::size_t>(k) * n;
  std::copy(src, src + n, out.data());
  return out;
}

// Mean over the spatial grid of each plane: P x r x r x F -> P x F.
Tensor gap_pool(const Tensor& feats) {
  const int p = feats.dim(0), r = feats.dim(1), c = feats.dim(2), f = feats.dim(3);
  Tensor out({p, f});
  const double inv = 1.0 / (static_cast<double>(r) * c);
  for (int k = 0; k < p; ++k) {
    for (int y = 0; y < r; ++y) {
      for (int x = 0; x < c; ++x) {
        for (int j = 0; j < f; ++j) out(k, j) += feats(k, y, x, j) * inv;
      }
    }
  }
  return out;
}

Tensor softmax_pixels(const Tensor& logits) {
  const int c = logits.dim(logits.rank() - 1);
  Tensor out = logits;
  const std::size_t npix = logits.size() / static_cast<std::size_t>(c);
  for (std::size_t px = 0; px < npix; ++px) {
    double* v = out.data() + px * c;
    double mx = v[0];
    for (int k = 1; k < c; ++k) mx = std::max(mx, v[k]);
    double sum = 0.0;
    for (int k = 0; k < c; ++k) {
      v[k] = std::exp(v[k] - mx);
      sum += v[k];
    }
    for (int k = 0; k < c; ++k) v[k] /= sum;
  }
  return out;
}

Tensor argmax_map(const Tensor& scores) {
  const int h = scores.dim(0), w = scores.dim(1), c = scores.dim(2);
  Tensor out({h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int best = 0;
      double bv = scores(y, x, 0);
      for (int k = 1; k < c; ++k) {
        if (scores(y, x, k) > bv) {
          bv = scores(y, x, k);
          best = k;
        }
      }
      out(y, x) = best;
    }
  }
  return out;
}

// One (target features, source features) pair for the domain classifier, with
// the gradient sinks the adversarial pass writes into.
struct AdvPair {
  const Tensor* tgt_feats;
  const Tensor* src_feats;
  Tensor* d_tgt;
  Tensor* d_src;
  double scale;
};

// Classifier step: minimize the classification BCE over the pairs, one
// optimizer update. Returns the (unweighted) loss value.
double classifier_step(ClassifierParams& cls, ClassifierOptState& opt,
                       const std::vector<AdvPair>& pairs, const TrainConfig& cfg) {
  ClassifierAccum acc(cls);
  double loss = 0.0;
  for (const AdvPair& pr : pairs) {
    ClassifierState st_t, st_s;
    const double dt = classifier_forward(cls, *pr.tgt_feats, &st_t);
    const double ds = classifier_forward(cls, *pr.src_feats, &st_s);
    const DomainBceResult r = domain_classifier_loss(dt, ds);
    loss += r.loss * pr.scale;
    acc.add(classifier_backward(cls, st_t, r.d_dt * pr.scale));
    acc.add(classifier_backward(cls, st_s, r.d_ds * pr.scale));
  }
  update_classifier(cls, acc, opt, cfg);
  return loss;
}

// Encoder side: label-swapped BCE through the (already updated) classifier.
// Feature gradients are written into the pair sinks, weighted by alpha.
double encoder_adversarial(const ClassifierParams& cls, const std::vector<AdvPair>& pairs,
                           double alpha) {
  double loss = 0.0;
  for (const AdvPair& pr : pairs) {
    ClassifierState st_t, st_s;
    const double dt = classifier_forward(cls, *pr.tgt_feats, &st_t);
    const double ds = classifier_forward(cls, *pr.src_feats, &st_s);
    const DomainBceResult r = domain_adversarial_loss(dt, ds);
    loss += r.loss * pr.scale;
    if (alpha != 0.0) {
      const ClassifierGrads gt = classifier_backward(cls, st_t, r.d_dt * pr.scale * alpha);
      const ClassifierGrads gs = classifier_backward(cls, st_s, r.d_ds * pr.scale * alpha);
      for (std::size_t i = 0; i < pr.d_tgt->size(); ++i) {
        pr.d_tgt->data()[i] += gt.features.data()[i];
      }
      for (std::size_t i = 0; i < pr.d_src->size(); ++i) {
        pr.d_src->data()[i] += gs.features.data()[i];
      }
    }
  }
  return loss;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("config: lr must be positive");
  if (steps < 1) throw ValidationError("config: steps must be >= 1");
  if (optimizer != "adam" && optimizer != "sgd") {
    throw ValidationError("config: optimizer must be adam or sgd");
  }
  if (patch_size < 16 || patch_size > 512 || patch_size % 4 != 0) {
    throw ValidationError("config: patch_size must be in [16, 512] and divisible by 4");
  }
  if (erp_height % 4 != 0 || erp_width % 4 != 0 || erp_height < 16 || erp_width < 16) {
    throw ValidationError("config: ERP dims must be multiples of 4, at least 16");
  }
  if (erp_height < patch_size || erp_width < patch_size) {
    throw ValidationError("config: ERP smaller than the crop patch size");
  }
  if (batch_source < 1 || batch_target < 1) {
    throw ValidationError("config: batch sizes must be >= 1");
  }
  if (batch_source != batch_target) {
    throw ValidationError("config: batch_source must equal batch_target");
  }
  if (source_count < 1 || target_count < 1 || eval_count < 1) {
    throw ValidationError("config: dataset counts must be >= 1");
  }
  if (num_objects < 4) throw ValidationError("config: num_objects must be >= 4");
  if (eval_every < 0 || log_every < 1 || ablate_seeds < 1) {
    throw ValidationError("config: bad cadence/seed-count value");
  }
  if (!(fov > 0.0 && fov < M_PI)) throw ValidationError("config: fov outside (0, 180)");
  loss.validate();
}

std::string LossMask::name() const {
  std::string s = "L_s";
  if (use_ld) s += "+L_d";
  if (use_pc) s += "+L_pc";
  if (use_fc) s += "+L_fc";
  return s;
}

TrainState init_train_state(const TrainConfig& config) {
  config.validate();
  TrainState st;
  st.config = config;
  st.erp_model = init_model(config.loss.num_classes, mix_seed(config.seed, 0));
  st.tp_model = init_model(config.loss.num_classes, mix_seed(config.seed, 1));
  const int f = st.erp_model.feature_channels();
  st.erp_classifier = init_classifier(f, mix_seed(config.seed, 2));
  st.tp_classifier = init_classifier(f, mix_seed(config.seed, 3));
  st.erp_opt = zero_model_opt(st.erp_model);
  st.tp_opt = zero_model_opt(st.tp_model);
  st.erp_cls_opt = zero_classifier_opt(st.erp_classifier);
  st.tp_cls_opt = zero_classifier_opt(st.tp_classifier);
  st.grid = build_grid(default_layout_18(config.fov, config.patch_size),
                       config.erp_height, config.erp_width);
  st.rng = Rng(mix_seed(config.seed, 4));
  return st;
}

LossReport train_step(TrainState& state, const std::vector<SynthImage>& source_batch,
                      const std::vector<SynthImage>& target_batch,
                      const TrainConfig& config, const LossMask& mask) {
  const int b = static_cast<int>(source_batch.size());
  if (b < 1 || static_cast<int>(target_batch.size()) != b) {
    throw ValidationError("train_step: empty or mismatched batches");
  }
  const int h = config.erp_height, w = config.erp_width;
  const int p = config.patch_size;
  const int planes = state.grid.num_planes();
  for (const SynthImage& si : source_batch) {
    if (si.image.dim(0) != h || si.image.dim(1) != w) {
      throw ValidationError("train_step: source image dims do not match config");
    }
  }
  for (const SynthImage& ti : target_batch) {
    if (ti.image.dim(0) != h || ti.image.dim(1) != w) {
      throw ValidationError("train_step: target image dims do not match config");
    }
  }
  const bool adapt = mask.use_ld || mask.use_pc || mask.use_fc;
  const bool need_crops = config.supervise_tp || mask.use_ld;

  // (1) Stochastic choices, in frozen order: per source image, `planes` crop
  // positions (row, then col). Drawn unconditionally to keep the rng stream
  // identical across loss-mask configurations.
  std::vector<std::vector<std::pair<int, int>>> crop_pos(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) {
    for (int k = 0; k < planes; ++k) {
      const int r0 = state.rng.uniform_int(h - p + 1);
      const int c0 = state.rng.uniform_int(w - p + 1);
      crop_pos[static_cast<std::size_t>(i)].emplace_back(r0, c0);
    }
  }

  // (2) Forward passes. Source ERP through the ERP path; source crops
  // (pseudo tangent) through the TP path; target ERP through the ERP path;
  // target tangent patches through the TP path.
  std::vector<ForwardState> src_erp_st(static_cast<std::size_t>(b));
  std::vector<ForwardOutputs> src_erp_out(static_cast<std::size_t>(b));
  std::vector<Tensor> d_src_logits, d_src_feats;
  for (int i = 0; i < b; ++i) {
    src_erp_out[static_cast<std::size_t>(i)] =
        model_forward(state.erp_model, source_batch[static_cast<std::size_t>(i)].image,
                      PadMode::periodic_width, &src_erp_st[static_cast<std::size_t>(i)]);
    d_src_logits.push_back(Tensor::zeros_like(src_erp_out[static_cast<std::size_t>(i)].logits));
    d_src_feats.push_back(Tensor::zeros_like(src_erp_out[static_cast<std::size_t>(i)].features));
  }

  std::vector<std::vector<Tensor>> crop_img(static_cast<std::size_t>(b)),
      crop_lab(static_cast<std::size_t>(b));
  std::vector<std::vector<ForwardState>> crop_st(static_cast<std::size_t>(b));
  std::vector<std::vector<ForwardOutputs>> crop_out(static_cast<std::size_t>(b));
  std::vector<std::vector<Tensor>> d_crop_logits(static_cast<std::size_t>(b)),
      d_crop_feats(static_cast<std::size_t>(b));
  if (need_crops) {
    for (int i = 0; i < b; ++i) {
      crop_st[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(planes));
      for (int k = 0; k < planes; ++k) {
        const auto [r0, c0] = crop_pos[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
        crop_img[static_cast<std::size_t>(i)].push_back(
            crop_image(source_batch[static_cast<std::size_t>(i)].image, r0, c0, p));
        crop_lab[static_cast<std::size_t>(i)].push_back(
            crop_labels(source_batch[static_cast<std::size_t>(i)].labels, r0, c0, p));
        crop_out[static_cast<std::size_t>(i)].push_back(model_forward(
            state.tp_model, crop_img[static_cast<std::size_t>(i)].back(), PadMode::zero,
            &crop_st[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]));
        d_crop_logits[static_cast<std::size_t>(i)].push_back(
            Tensor::zeros_like(crop_out[static_cast<std::size_t>(i)].back().logits));
        d_crop_feats[static_cast<std::size_t>(i)].push_back(
            Tensor::zeros_like(crop_out[static_cast<std::size_t>(i)].back().features));
      }
    }
  }

  std::vector<ForwardState> tgt_erp_st(static_cast<std::size_t>(b));
  std::vector<ForwardOutputs> tgt_erp_out(static_cast<std::size_t>(b));
  std::vector<Tensor> d_tgt_logits, d_tgt_feats;
  std::vector<std::vector<Tensor>> tgt_patch_img(static_cast<std::size_t>(b));
  std::vector<std::vector<ForwardState>> tgt_tp_st(static_cast<std::size_t>(b));
  std::vector<std::vector<ForwardOutputs>> tgt_tp_out(static_cast<std::size_t>(b));
  std::vector<std::vector<Tensor>> d_tpatch_logits(static_cast<std::size_t>(b)),
      d_tpatch_feats(static_cast<std::size_t>(b));
  if (adapt) {
    for (int i = 0; i < b; ++i) {
      tgt_erp_out[static_cast<std::size_t>(i)] =
          model_forward(state.erp_model, target_batch[static_cast<std::size_t>(i)].image,
                        PadMode::periodic_width, &tgt_erp_st[static_cast<std::size_t>(i)]);
      d_tgt_logits.push_back(Tensor::zeros_like(tgt_erp_out[static_cast<std::size_t>(i)].logits));
      d_tgt_feats.push_back(Tensor::zeros_like(tgt_erp_out[static_cast<std::size_t>(i)].features));
      const Tensor patches =
          sample_erp(target_batch[static_cast<std::size_t>(i)].image, state.grid);
      tgt_tp_st[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(planes));
      for (int k = 0; k < planes; ++k) {
        tgt_patch_img[static_cast<std::size_t>(i)].push_back(slice_plane(patches, k));
        tgt_tp_out[static_cast<std::size_t>(i)].push_back(model_forward(
            state.tp_model, tgt_patch_img[static_cast<std::size_t>(i)].back(), PadMode::zero,
            &tgt_tp_st[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]));
        d_tpatch_logits[static_cast<std::size_t>(i)].push_back(
            Tensor::zeros_like(tgt_tp_out[static_cast<std::size_t>(i)].back().logits));
        d_tpatch_feats[static_cast<std::size_t>(i)].push_back(
            Tensor::zeros_like(tgt_tp_out[static_cast<std::size_t>(i)].back().features));
      }
    }
  }

  const double inv_b = 1.0 / b;
  const double inv_bk = 1.0 / (static_cast<double>(b) * planes);
  LossReport rep;

  // (3) Source supervision on both paths.
  for (int i = 0; i < b; ++i) {
    const CeResult ce = segmentation_ce_loss(src_erp_out[static_cast<std::size_t>(i)].logits,
                                             source_batch[static_cast<std::size_t>(i)].labels);
    rep.l_s += ce.loss * inv_b;
    for (std::size_t j = 0; j < ce.grad.size(); ++j) {
      d_src_logits[static_cast<std::size_t>(i)].data()[j] += ce.grad.data()[j] * inv_b;
    }
  }
  if (config.supervise_tp) {
    for (int i = 0; i < b; ++i) {
      for (int k = 0; k < planes; ++k) {
        const CeResult ce = segmentation_ce_loss(
            crop_out[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].logits,
            crop_lab[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
        rep.l_s += ce.loss * inv_bk;
        Tensor& sink = d_crop_logits[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
        for (std::size_t j = 0; j < ce.grad.size(); ++j) {
          sink.data()[j] += ce.grad.data()[j] * inv_bk;
        }
      }
    }
  }

  // (4) Cross-projection prediction consistency, weighted by beta.
  if (mask.use_pc) {
    for (int i = 0; i < b; ++i) {
      const Tensor proj =
          sample_erp(tgt_erp_out[static_cast<std::size_t>(i)].logits, state.grid);
      Tensor tp_stack({planes, p, p, config.loss.num_classes});
      for (int k = 0; k < planes; ++k) {
        const Tensor& lg =
            tgt_tp_out[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].logits;
        std::copy(lg.data(), lg.data() + lg.size(),
                  tp_stack.data() + static_cast<std::size_t>(k) * lg.size());
      }
      const ConsistencyResult pc = prediction_consistency_loss(
          proj, tp_stack, config.loss.kl_epsilon, config.stop_gradient_erp);
      rep.l_pc += pc.loss * inv_b;
      if (config.loss.beta != 0.0) {
        const double s = config.loss.beta * inv_b;
        Tensor d_proj = pc.grad_erp;
        for (std::size_t j = 0; j < d_proj.size(); ++j) d_proj.data()[j] *= s;
        const Tensor d_erp = sample_erp_backward(d_proj, state.grid);
        for (std::size_t j = 0; j < d_erp.size(); ++j) {
          d_tgt_logits[static_cast<std::size_t>(i)].data()[j] += d_erp.data()[j];
        }
        for (int k = 0; k < planes; ++k) {
          Tensor& sink =
              d_tpatch_logits[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
          const double* src = pc.grad_tp.data() + static_cast<std::size_t>(k) * sink.size();
          for (std::size_t j = 0; j < sink.size(); ++j) sink.data()[j] += src[j] * s;
        }
      }
    }
  }

  // (5) Tangent-wise feature contrastive term.
  if (mask.use_fc) {
    const int fr = strided_patch_res(state.grid, 4);
    const int fh = tgt_erp_out.empty() ? 0 : tgt_erp_out[0].features.dim(0);
    const int fw = tgt_erp_out.empty() ? 0 : tgt_erp_out[0].features.dim(1);
    for (int i = 0; i < b; ++i) {
      const Tensor ftan =
          sample_features(tgt_erp_out[static_cast<std::size_t>(i)].features, state.grid, 4);
      const Tensor pooled_e = gap_pool(ftan);
      // Pool the TP-path features per patch.
      const int tr = tgt_tp_out[static_cast<std::size_t>(i)][0].features.dim(0);
      const int tc = tgt_tp_out[static_cast<std::size_t>(i)][0].features.dim(1);
      const int f = tgt_tp_out[static_cast<std::size_t>(i)][0].features.dim(2);
      Tensor pooled_t({planes, f});
      const double inv_sp = 1.0 / (static_cast<double>(tr) * tc);
      for (int k = 0; k < planes; ++k) {
        const Tensor& ft =
            tgt_tp_out[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].features;
        for (int y = 0; y < tr; ++y) {
          for (int x = 0; x < tc; ++x) {
            for (int j = 0; j < f; ++j) pooled_t(k, j) += ft(y, x, j) * inv_sp;
          }
        }
      }
      const TfctResult fc = tfct_loss(pooled_e, pooled_t, config.loss.tau);
      rep.l_fc += fc.loss * inv_b;
      // Broadcast pooled gradients back over the spatial grids.
      Tensor dftan({planes, fr, fr, f});
      const double inv_er = inv_b / (static_cast<double>(fr) * fr);
      for (int k = 0; k < planes; ++k) {
        for (int y = 0; y < fr; ++y) {
          for (int x = 0; x < fr; ++x) {
            for (int j = 0; j < f; ++j) dftan(k, y, x, j) = fc.grad_erp(k, j) * inv_er;
          }
        }
      }
      const Tensor d_ef = sample_features_backward(dftan, state.grid, 4, fh, fw);
      for (std::size_t j = 0; j < d_ef.size(); ++j) {
        d_tgt_feats[static_cast<std::size_t>(i)].data()[j] += d_ef.data()[j];
      }
      const double inv_tp = inv_b * inv_sp;
      for (int k = 0; k < planes; ++k) {
        Tensor& sink = d_tpatch_feats[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
        for (int y = 0; y < tr; ++y) {
          for (int x = 0; x < tc; ++x) {
            for (int j = 0; j < f; ++j) sink(y, x, j) += fc.grad_tp(k, j) * inv_tp;
          }
        }
      }
    }
  }

  // (6) Alternating adversarial optimization per path: one classifier step
  // on the classification objective, then the encoder gradient through the
  // updated classifier on the label-swapped objective.
  if (mask.use_ld) {
    std::vector<AdvPair> erp_pairs, tp_pairs;
    for (int i = 0; i < b; ++i) {
      erp_pairs.push_back({&tgt_erp_out[static_cast<std::size_t>(i)].features,
                           &src_erp_out[static_cast<std::size_t>(i)].features,
                           &d_tgt_feats[static_cast<std::size_t>(i)],
                           &d_src_feats[static_cast<std::size_t>(i)], inv_b});
      for (int k = 0; k < planes; ++k) {
        tp_pairs.push_back(
            {&tgt_tp_out[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].features,
             &crop_out[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].features,
             &d_tpatch_feats[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)],
             &d_crop_feats[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)],
             inv_bk});
      }
    }
    if (config.shared_classifier) {
      std::vector<AdvPair> all = erp_pairs;
      all.insert(all.end(), tp_pairs.begin(), tp_pairs.end());
      classifier_step(state.erp_classifier, state.erp_cls_opt, all, config);
      rep.l_d += encoder_adversarial(state.erp_classifier, all, config.loss.alpha);
    } else {
      classifier_step(state.erp_classifier, state.erp_cls_opt, erp_pairs, config);
      rep.l_d += encoder_adversarial(state.erp_classifier, erp_pairs, config.loss.alpha);
      classifier_step(state.tp_classifier, state.tp_cls_opt, tp_pairs, config);
      rep.l_d += encoder_adversarial(state.tp_classifier, tp_pairs, config.loss.alpha);
    }
  }

  // (7) Combined update: backpropagate the accumulated output gradients
  // through every cached forward, in fixed order, then one optimizer step
  // per path.
  ModelAccum erp_acc(state.erp_model);
  ModelAccum tp_acc(state.tp_model);
  for (int i = 0; i < b; ++i) {
    erp_acc.add(model_backward(state.erp_model, src_erp_st[static_cast<std::size_t>(i)],
                               d_src_logits[static_cast<std::size_t>(i)],
                               d_src_feats[static_cast<std::size_t>(i)]));
  }
  if (need_crops) {
    for (int i = 0; i < b; ++i) {
      for (int k = 0; k < planes; ++k) {
        tp_acc.add(model_backward(
            state.tp_model, crop_st[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)],
            d_crop_logits[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)],
            d_crop_feats[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]));
      }
    }
  }
  if (adapt) {
    for (int i = 0; i < b; ++i) {
      erp_acc.add(model_backward(state.erp_model, tgt_erp_st[static_cast<std::size_t>(i)],
                                 d_tgt_logits[static_cast<std::size_t>(i)],
                                 d_tgt_feats[static_cast<std::size_t>(i)]));
      for (int k = 0; k < planes; ++k) {
        tp_acc.add(model_backward(
            state.tp_model, tgt_tp_st[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)],
            d_tpatch_logits[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)],
            d_tpatch_feats[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]));
      }
    }
  }
  update_model(state.erp_model, erp_acc, state.erp_opt, config);
  update_model(state.tp_model, tp_acc, state.tp_opt, config);
  ++state.step;

  if (!std::isfinite(rep.l_s) || !std::isfinite(rep.l_d) || !std::isfinite(rep.l_pc) ||
      !std::isfinite(rep.l_fc)) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "train_step: non-finite loss at step %ld: L_s=%g L_d=%g L_pc=%g L_fc=%g",
                  state.step, rep.l_s, rep.l_d, rep.l_pc, rep.l_fc);
    throw NonFiniteLoss(buf);
  }
  rep.total = total_loss(rep.l_s, rep.l_d, rep.l_pc, rep.l_fc, config.loss.alpha,
                         config.loss.beta);
  return rep;
}

Tensor predict_map(const TrainState& state, const Tensor& image, EvalMode mode) {
  if (mode == EvalMode::erp_only) {
    // Single ERP-path forward; by design this touches no resampling code.
    const ForwardOutputs out = model_forward(state.erp_model, image, PadMode::periodic_width);
    return argmax_map(out.logits);
  }
  const ForwardOutputs out = model_forward(state.erp_model, image, PadMode::periodic_width);
  Tensor prob = softmax_pixels(out.logits);
  const int planes = state.grid.num_planes();
  const int p = state.grid.patch_res;
  const int c = prob.dim(2);
  const Tensor patches = sample_erp(image, state.grid);
  Tensor tp_stack({planes, p, p, c});
  for (int k = 0; k < planes; ++k) {
    const ForwardOutputs po =
        model_forward(state.tp_model, slice_plane(patches, k), PadMode::zero);
    const Tensor sp = softmax_pixels(po.logits);
    std::copy(sp.data(), sp.data() + sp.size(),
              tp_stack.data() + static_cast<std::size_t>(k) * sp.size());
  }
  const auto [assembled, coverage] = assemble_t2e(tp_stack, state.grid);
  const int h = prob.dim(0), w = prob.dim(1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (coverage(y, x) > 0.0) {
        for (int k = 0; k < c; ++k) {
          prob(y, x, k) = 0.5 * (prob(y, x, k) + assembled(y, x, k));
        }
      }
    }
  }
  return argmax_map(prob);
}

MiouResult evaluate(const TrainState& state, const std::vector<SynthImage>& eval_set,
                    EvalMode mode) {
  if (eval_set.empty()) throw EmptyEvalSet("evaluate: no evaluation images");
  ConfusionMatrix cm(state.config.loss.num_classes);
  for (const SynthImage& si : eval_set) {
    accumulate(cm, predict_map(state, si.image, mode), si.labels);
  }
  return miou(cm);
}

MiouResult evaluate_maps(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts,
                         int num_classes, int ignore_index) {
  if (preds.empty() || preds.size() != gts.size()) {
    throw EmptyEvalSet("evaluate_maps: empty or mismatched prediction set");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    accumulate(cm, preds[i], gts[i], ignore_index);
  }
  return miou(cm);
}

TrainState run_training(const TrainConfig& config, const std::vector<SynthImage>& source,
                        const std::vector<SynthImage>& target, std::ostream* log,
                        const LossMask& mask, const std::vector<SynthImage>* eval_set) {
  config.validate();
  if (source.empty() || target.empty()) {
    throw ValidationError("run_training: empty dataset");
  }
  TrainState state = init_train_state(config);
  std::vector<SynthImage> sb(static_cast<std::size_t>(config.batch_source));
  std::vector<SynthImage> tb(static_cast<std::size_t>(config.batch_target));
  char line[256];
  for (int step = 1; step <= config.steps; ++step) {
    for (int i = 0; i < config.batch_source; ++i) {
      sb[static_cast<std::size_t>(i)] =
          source[static_cast<std::size_t>(state.rng.uniform_int(static_cast<int>(source.size())))];
    }
    for (int i = 0; i < config.batch_target; ++i) {
      tb[static_cast<std::size_t>(i)] =
          target[static_cast<std::size_t>(state.rng.uniform_int(static_cast<int>(target.size())))];
    }
    const LossReport rep = train_step(state, sb, tb, config, mask);
    if (log && (step % config.log_every == 0 || step == config.steps)) {
      std::snprintf(line, sizeof(line),
                    "step=%d L_s=%.9g L_d=%.9g L_pc=%.9g L_fc=%.9g total=%.9g\n", step,
                    rep.l_s, rep.l_d, rep.l_pc, rep.l_fc, rep.total);
      (*log) << line;
    }
    if (log && eval_set && config.eval_every > 0 && step % config.eval_every == 0) {
      const MiouResult m = evaluate(state, *eval_set, EvalMode::erp_only);
      std::snprintf(line, sizeof(line), "# eval step=%d miou=%.6g\n", step, m.mean);
      (*log) << line;
    }
  }
  return state;
}

BenchmarkData make_benchmark(const TrainConfig& config) {
  SceneSpec src_spec;
  src_spec.seed = mix_seed(config.data_seed, 0xA);
  src_spec.num_objects = config.num_objects;
  src_spec.style = config.source_style;
  src_spec.polar_bias = false;

  SceneSpec tgt_spec;
  tgt_spec.seed = mix_seed(config.data_seed, 0xB);
  tgt_spec.num_objects = config.num_objects;
  tgt_spec.polar_bias = config.polar_bias;

  SceneSpec eval_spec = tgt_spec;
  eval_spec.seed = mix_seed(config.data_seed, 0xC);

  BenchmarkData d;
  d.source = generate(src_spec, config.erp_height, config.erp_width, config.source_count);
  d.target = generate(tgt_spec, config.erp_height, config.erp_width, config.target_count);
  d.eval = generate(eval_spec, config.erp_height, config.erp_width, config.eval_count);
  return d;
}

std::vector<LossMask> default_ablation_combos() {
  return {
      {false, false, false},  // L_s baseline
      {true, false, false},   // + L_d
      {false, true, false},   // + L_pc
      {false, false, true},   // + L_fc
      {true, true, true},     // full objective
  };
}

std::vector<AblationRow> run_ablation(const TrainConfig& config,
                                      const std::vector<LossMask>& combos,
                                      std::ostream* log) {
  config.validate();
  const BenchmarkData data = make_benchmark(config);
  std::vector<AblationRow> rows;
  for (int s = 0; s < config.ablate_seeds; ++s) {
    TrainConfig cfg = config;
    cfg.seed = config.seed + static_cast<std::uint64_t>(s);
    for (const LossMask& mask : combos) {
      const TrainState state = run_training(cfg, data.source, data.target, nullptr, mask);
      const MiouResult m = evaluate(state, data.eval, EvalMode::erp_only);
      AblationRow row;
      row.mask_name = mask.name();
      row.seed = cfg.seed;
      row.miou = m.mean;
      row.per_class = m.per_class;
      rows.push_back(std::move(row));
      if (log) {
        char line[160];
        std::snprintf(line, sizeof(line), "# ablate mask=%s seed=%llu miou=%.4f\n",
                      rows.back().mask_name.c_str(),
                      static_cast<unsigned long long>(cfg.seed), m.mean);
        (*log) << line;
      }
    }
  }
  return rows;
}

namespace {

void push_model_records(std::vector<CheckpointRecord>& recs, const std::string& prefix,
                        const ModelParams& m) {
  for (std::size_t l = 0; l < m.convs.size(); ++l) {
    const std::string base = prefix + ".conv" + std::to_string(l);
    recs.push_back({base + ".weight", m.convs[l].weight});
    recs.push_back({base + ".bias", m.convs[l].bias});
  }
  recs.push_back({prefix + ".head.weight", m.head_weight});
  recs.push_back({prefix + ".head.bias", m.head_bias});
}

void push_classifier_records(std::vector<CheckpointRecord>& recs, const std::string& prefix,
                             const ClassifierParams& c) {
  recs.push_back({prefix + ".conv.weight", c.conv_w});
  recs.push_back({prefix + ".conv.bias", c.conv_b});
  recs.push_back({prefix + ".lin.weight", c.lin_w});
  Tensor b({1});
  b(0) = c.lin_b;
  recs.push_back({prefix + ".lin.bias", b});
}

}  // namespace

std::vector<CheckpointRecord> checkpoint_records(const TrainState& state) {
  std::vector<CheckpointRecord> recs;
  push_model_records(recs, "erp", state.erp_model);
  push_model_records(recs, "tp", state.tp_model);
  push_classifier_records(recs, "erp_cls", state.erp_classifier);
  push_classifier_records(recs, "tp_cls", state.tp_classifier);
  return recs;
}

namespace {

const Tensor* find_record(const std::vector<CheckpointRecord>& recs, const std::string& name) {
  for (const CheckpointRecord& r : recs) {
    if (r.name == name) return &r.tensor;
  }
  return nullptr;
}

// Copies `name` into dst if present. Throws if required and absent, or if
// shapes disagree with the architecture implied by the config.
bool load_tensor(const std::vector<CheckpointRecord>& recs, const std::string& name,
                 Tensor& dst, bool required) {
  const Tensor* src = find_record(recs, name);
  if (!src) {
    if (required) throw ValidationError("checkpoint: missing record " + name);
    return false;
  }
  if (!src->same_shape(dst)) {
    throw ShapeMismatch("checkpoint: record " + name + " has shape " + src->shape_str() +
                        ", expected " + dst.shape_str());
  }
  dst = *src;
  return true;
}

void load_model(const std::vector<CheckpointRecord>& recs, const std::string& prefix,
                ModelParams& m, bool required) {
  for (std::size_t l = 0; l < m.convs.size(); ++l) {
    const std::string base = prefix + ".conv" + std::to_string(l);
    load_tensor(recs, base + ".weight", m.convs[l].weight, required);
    load_tensor(recs, base + ".bias", m.convs[l].bias, required);
  }
  load_tensor(recs, prefix + ".head.weight", m.head_weight, required);
  load_tensor(recs, prefix + ".head.bias", m.head_bias, required);
  ++m.revision;
}

void load_classifier(const std::vector<CheckpointRecord>& recs, const std::string& prefix,
                     ClassifierParams& c) {
  load_tensor(recs, prefix + ".conv.weight", c.conv_w, false);
  load_tensor(recs, prefix + ".conv.bias", c.conv_b, false);
  load_tensor(recs, prefix + ".lin.weight", c.lin_w, false);
  Tensor b({1});
  b(0) = c.lin_b;
  if (load_tensor(recs, prefix + ".lin.bias", b, false)) c.lin_b = b(0);
  ++c.revision;
}

}  // namespace

void load_checkpoint_records(TrainState& state, const std::vector<CheckpointRecord>& recs) {
  // The ERP path must be present; the TP path and the classifiers are
  // optional so that a checkpoint stripped for deployment still evaluates.
  load_model(recs, "erp", state.erp_model, true);
  load_model(recs, "tp", state.tp_model, false);
  load_classifier(recs, "erp_cls", state.erp_classifier);
  load_classifier(recs, "tp_cls", state.tp_classifier);
}

}  // namespace dpp
