#include "dpp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dpp/losses.hpp"
#include "dpp/model.hpp"
#include "dpp/rng.hpp"
#include "dpp/tensor.hpp"

namespace dpp {

namespace {

// Relative error as an infinity-norm ratio over the compared coordinates;
// the floor keeps finite-difference noise from blowing up when a gradient is
// legitimately (near-)zero.
double rel_err(const std::vector<double>& analytic, const std::vector<double>& fd) {
  double num = 0.0, den = 1e-8;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    num = std::max(num, std::abs(analytic[i] - fd[i]));
    den = std::max(den, std::max(std::abs(analytic[i]), std::abs(fd[i])));
  }
  return num / den;
}

double central_diff(double* slot, double h, const std::function<double()>& eval) {
  const double saved = *slot;
  *slot = saved + h;
  const double fp = eval();
  *slot = saved - h;
  const double fm = eval();
  *slot = saved;
  return (fp - fm) / (2.0 * h);
}

double step_for(double x) { return 1e-6 * std::max(1.0, std::abs(x)); }

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

double check_tfct(Rng& rng) {
  const int n = 3 + static_cast<int>(rng.uniform_int(3));
  const int c = 4 + static_cast<int>(rng.uniform_int(4));
  Tensor a = random_tensor({n, c}, rng, -1.0, 1.0);
  Tensor b = random_tensor({n, c}, rng, -1.0, 1.0);
  const double tau = rng.uniform(0.05, 0.5);
  const TfctResult res = tfct_loss(a, b, tau);
  std::vector<double> analytic, fd;
  auto eval = [&] { return tfct_loss(a, b, tau).loss; };
  for (std::size_t i = 0; i < a.size(); ++i) {
    analytic.push_back(res.grad_erp.data()[i]);
    fd.push_back(central_diff(&a.data()[i], step_for(a.data()[i]), eval));
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    analytic.push_back(res.grad_tp.data()[i]);
    fd.push_back(central_diff(&b.data()[i], step_for(b.data()[i]), eval));
  }
  return rel_err(analytic, fd);
}

double check_consistency(Rng& rng, bool stop_grad) {
  const int p = 2, h = 3, w = 3;
  const int c = 3 + static_cast<int>(rng.uniform_int(3));
  Tensor a = random_tensor({p, h, w, c}, rng, -2.0, 2.0);
  Tensor b = random_tensor({p, h, w, c}, rng, -2.0, 2.0);
  const double eps = 1e-6;
  const ConsistencyResult res = prediction_consistency_loss(a, b, eps, stop_grad);
  std::vector<double> analytic, fd;
  auto eval = [&] { return prediction_consistency_loss(a, b, eps, stop_grad).loss; };
  if (!stop_grad) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      analytic.push_back(res.grad_erp.data()[i]);
      fd.push_back(central_diff(&a.data()[i], step_for(a.data()[i]), eval));
    }
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    analytic.push_back(res.grad_tp.data()[i]);
    fd.push_back(central_diff(&b.data()[i], step_for(b.data()[i]), eval));
  }
  return rel_err(analytic, fd);
}

double check_ce(Rng& rng) {
  const int h = 4, w = 5;
  const int c = 3 + static_cast<int>(rng.uniform_int(3));
  Tensor logits = random_tensor({h, w, c}, rng, -2.0, 2.0);
  Tensor labels({h, w});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels.data()[i] = rng.uniform() < 0.15 ? 255.0 : rng.uniform_int(c);
  }
  const CeResult res = segmentation_ce_loss(logits, labels);
  std::vector<double> analytic, fd;
  auto eval = [&] { return segmentation_ce_loss(logits, labels).loss; };
  for (std::size_t i = 0; i < logits.size(); ++i) {
    analytic.push_back(res.grad.data()[i]);
    fd.push_back(central_diff(&logits.data()[i], step_for(logits.data()[i]), eval));
  }
  return rel_err(analytic, fd);
}

double check_domain(Rng& rng) {
  double dt = rng.uniform(0.05, 0.95);
  double ds = rng.uniform(0.05, 0.95);
  std::vector<double> analytic, fd;
  {
    const DomainBceResult r = domain_classifier_loss(dt, ds);
    analytic.push_back(r.d_dt);
    analytic.push_back(r.d_ds);
    auto eval = [&] { return domain_classifier_loss(dt, ds).loss; };
    fd.push_back(central_diff(&dt, 1e-7, eval));
    fd.push_back(central_diff(&ds, 1e-7, eval));
  }
  {
    const DomainBceResult r = domain_adversarial_loss(dt, ds);
    analytic.push_back(r.d_dt);
    analytic.push_back(r.d_ds);
    auto eval = [&] { return domain_adversarial_loss(dt, ds).loss; };
    fd.push_back(central_diff(&dt, 1e-7, eval));
    fd.push_back(central_diff(&ds, 1e-7, eval));
  }
  return rel_err(analytic, fd);
}

// Full encoder/decoder chain: a fixed random linear functional of logits and
// features, checked against finite differences on sampled parameter and
// input coordinates.
double check_model_chain(Rng& rng, std::uint64_t case_seed) {
  const int h = 8, w = 16;
  const int classes = 3 + static_cast<int>(rng.uniform_int(3));
  ModelParams params = init_model(classes, case_seed);
  Tensor image = random_tensor({h, w, 3}, rng, 0.0, 1.0);
  const PadMode pad = rng.uniform() < 0.5 ? PadMode::zero : PadMode::periodic_width;

  ForwardState st;
  const ForwardOutputs out = model_forward(params, image, pad, &st);
  const Tensor wl = random_tensor(out.logits.shape(), rng, -1.0, 1.0);
  const Tensor wf = random_tensor(out.features.shape(), rng, -1.0, 1.0);
  const ModelGrads grads = model_backward(params, st, wl, wf);

  auto eval = [&] {
    const ForwardOutputs o = model_forward(params, image, pad);
    double s = 0.0;
    for (std::size_t i = 0; i < o.logits.size(); ++i) {
      s += o.logits.data()[i] * wl.data()[i];
    }
    for (std::size_t i = 0; i < o.features.size(); ++i) {
      s += o.features.data()[i] * wf.data()[i];
    }
    return s;
  };

  // Sampled coordinates across every parameter tensor plus the input.
  std::vector<std::pair<double*, const double*>> slots;  // (value, analytic grad)
  for (std::size_t l = 0; l < params.convs.size(); ++l) {
    Tensor& wt = params.convs[l].weight;
    Tensor& bt = params.convs[l].bias;
    for (int k = 0; k < 6; ++k) {
      const std::size_t i = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(wt.size())));
      slots.emplace_back(&wt.data()[i], &grads.conv_w[l].data()[i]);
    }
    const std::size_t ib = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(bt.size())));
    slots.emplace_back(&bt.data()[ib], &grads.conv_b[l].data()[ib]);
  }
  for (int k = 0; k < 6; ++k) {
    const std::size_t i =
        static_cast<std::size_t>(rng.uniform_int(static_cast<int>(params.head_weight.size())));
    slots.emplace_back(&params.head_weight.data()[i], &grads.head_w.data()[i]);
  }
  {
    const std::size_t i =
        static_cast<std::size_t>(rng.uniform_int(static_cast<int>(params.head_bias.size())));
    slots.emplace_back(&params.head_bias.data()[i], &grads.head_b.data()[i]);
  }
  for (int k = 0; k < 12; ++k) {
    const std::size_t i =
        static_cast<std::size_t>(rng.uniform_int(static_cast<int>(image.size())));
    slots.emplace_back(&image.data()[i], &grads.input.data()[i]);
  }

  std::vector<double> analytic, fd;
  for (auto& [slot, ga] : slots) {
    analytic.push_back(*ga);
    fd.push_back(central_diff(slot, step_for(*slot), eval));
  }
  return rel_err(analytic, fd);
}

double check_classifier(Rng& rng, std::uint64_t case_seed) {
  const int f = 6;
  ClassifierParams cls = init_classifier(f, case_seed);
  Tensor feats = random_tensor({5, 7, f}, rng, -1.0, 1.0);
  ClassifierState st;
  const double prob = classifier_forward(cls, feats, &st);
  (void)prob;
  const ClassifierGrads grads = classifier_backward(cls, st, 1.0);

  auto eval = [&] { return classifier_forward(cls, feats); };
  std::vector<std::pair<double*, const double*>> slots;
  for (int k = 0; k < 10; ++k) {
    const std::size_t i =
        static_cast<std::size_t>(rng.uniform_int(static_cast<int>(cls.conv_w.size())));
    slots.emplace_back(&cls.conv_w.data()[i], &grads.conv_w.data()[i]);
  }
  for (int k = 0; k < 4; ++k) {
    const std::size_t i =
        static_cast<std::size_t>(rng.uniform_int(static_cast<int>(cls.conv_b.size())));
    slots.emplace_back(&cls.conv_b.data()[i], &grads.conv_b.data()[i]);
  }
  for (int k = 0; k < 4; ++k) {
    const std::size_t i =
        static_cast<std::size_t>(rng.uniform_int(static_cast<int>(cls.lin_w.size())));
    slots.emplace_back(&cls.lin_w.data()[i], &grads.lin_w.data()[i]);
  }
  slots.emplace_back(&cls.lin_b, &grads.lin_b);
  for (int k = 0; k < 10; ++k) {
    const std::size_t i =
        static_cast<std::size_t>(rng.uniform_int(static_cast<int>(feats.size())));
    slots.emplace_back(&feats.data()[i], &grads.features.data()[i]);
  }

  std::vector<double> analytic, fd;
  for (auto& [slot, ga] : slots) {
    analytic.push_back(*ga);
    fd.push_back(central_diff(slot, step_for(*slot), eval));
  }
  return rel_err(analytic, fd);
}

}  // namespace

GradCheckReport run_gradcheck(int instances, std::uint64_t seed) {
  GradCheckReport rep;
  for (int i = 0; i < instances; ++i) {
    const std::uint64_t cs = mix_seed(seed, static_cast<std::uint64_t>(i));
    Rng rng(cs);
    rep.max_rel_err_losses = std::max(rep.max_rel_err_losses, check_tfct(rng));
    rep.max_rel_err_losses = std::max(rep.max_rel_err_losses, check_consistency(rng, false));
    rep.max_rel_err_losses = std::max(rep.max_rel_err_losses, check_consistency(rng, true));
    rep.max_rel_err_losses = std::max(rep.max_rel_err_losses, check_ce(rng));
    rep.max_rel_err_losses = std::max(rep.max_rel_err_losses, check_domain(rng));
    rep.max_rel_err_model = std::max(rep.max_rel_err_model, check_model_chain(rng, cs));
    rep.max_rel_err_model = std::max(rep.max_rel_err_model, check_classifier(rng, cs));
    rep.cases += 7;
  }
  return rep;
}

}  // namespace dpp
