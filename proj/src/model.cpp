#include "dpp/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dpp/rng.hpp"

namespace dpp {

namespace {

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / fan_in);
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = stddev * rng.normal();
  return t;
}

int conv_out_dim(int in, int stride) { return (in - 1) / stride + 1; }  // ceil(in/stride)

// y = conv(x, w, b) with 3x3 kernel, "same" padding, given stride.
// Weight layout [ky][kx][in][out] keeps the channel loops contiguous.
void conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                  PadMode pad, Tensor& y) {
  const int h = x.dim(0), wd = x.dim(1), ci = x.dim(2);
  const int oh = y.dim(0), ow = y.dim(1), co = y.dim(2);
  const double* xp = x.data();
  const double* wp = w.data();
  double* yp = y.data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double* out = yp + (static_cast<std::size_t>(oy) * ow + ox) * co;
      for (int o = 0; o < co; ++o) out[o] = b.data()[o];
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          int ix = ox * stride + kx - 1;
          if (pad == PadMode::periodic_width) {
            if (ix < 0) ix += wd;
            if (ix >= wd) ix -= wd;
          } else if (ix < 0 || ix >= wd) {
            continue;
          }
          const double* in = xp + (static_cast<std::size_t>(iy) * wd + ix) * ci;
          const double* wk = wp + (static_cast<std::size_t>(ky) * 3 + kx) * ci * co;
          for (int i = 0; i < ci; ++i) {
            const double v = in[i];
            const double* wrow = wk + static_cast<std::size_t>(i) * co;
            for (int o = 0; o < co; ++o) out[o] += v * wrow[o];
          }
        }
      }
    }
  }
}

// Transpose of conv_forward: scatter dy into dx, dw, db.
void conv_backward(const Tensor& x, const Tensor& w, int stride, PadMode pad,
                   const Tensor& dy, Tensor& dx, Tensor& dw, Tensor& db) {
  const int h = x.dim(0), wd = x.dim(1), ci = x.dim(2);
  const int oh = dy.dim(0), ow = dy.dim(1), co = dy.dim(2);
  const double* xp = x.data();
  const double* wp = w.data();
  const double* dyp = dy.data();
  double* dxp = dx.data();
  double* dwp = dw.data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const double* g = dyp + (static_cast<std::size_t>(oy) * ow + ox) * co;
      for (int o = 0; o < co; ++o) db.data()[o] += g[o];
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          int ix = ox * stride + kx - 1;
          if (pad == PadMode::periodic_width) {
            if (ix < 0) ix += wd;
            if (ix >= wd) ix -= wd;
          } else if (ix < 0 || ix >= wd) {
            continue;
          }
          const double* in = xp + (static_cast<std::size_t>(iy) * wd + ix) * ci;
          double* din = dxp + (static_cast<std::size_t>(iy) * wd + ix) * ci;
          const double* wk = wp + (static_cast<std::size_t>(ky) * 3 + kx) * ci * co;
          double* dwk = dwp + (static_cast<std::size_t>(ky) * 3 + kx) * ci * co;
          for (int i = 0; i < ci; ++i) {
            const double v = in[i];
            const double* wrow = wk + static_cast<std::size_t>(i) * co;
            double* dwrow = dwk + static_cast<std::size_t>(i) * co;
            double acc = 0.0;
            for (int o = 0; o < co; ++o) {
              dwrow[o] += v * g[o];
              acc += wrow[o] * g[o];
            }
            din[i] += acc;
          }
        }
      }
    }
  }
}

struct UpTap {
  int i0, i1;
  double f;  // weight of i1
};

// Source taps for x4 bilinear upsampling along one axis (half-pixel centers).
std::vector<UpTap> upsample_taps(int out_dim, int in_dim) {
  std::vector<UpTap> taps(static_cast<std::size_t>(out_dim));
  for (int d = 0; d < out_dim; ++d) {
    double src = (d + 0.5) * 0.25 - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_dim - 1));
    const int i0 = static_cast<int>(src);
    taps[static_cast<std::size_t>(d)] = {i0, std::min(i0 + 1, in_dim - 1), src - i0};
  }
  return taps;
}

void upsample_forward(const Tensor& x, Tensor& y) {
  const int ih = x.dim(0), iw = x.dim(1), c = x.dim(2);
  const int oh = y.dim(0), ow = y.dim(1);
  (void)ih;
  const auto ty = upsample_taps(oh, x.dim(0));
  const auto tx = upsample_taps(ow, iw);
  auto row = [&](const Tensor& t, int i, int j) {
    return t.data() + (static_cast<std::size_t>(i) * t.dim(1) + j) * t.dim(2);
  };
  for (int oy = 0; oy < oh; ++oy) {
    const UpTap& a = ty[static_cast<std::size_t>(oy)];
    for (int ox = 0; ox < ow; ++ox) {
      const UpTap& b = tx[static_cast<std::size_t>(ox)];
      const double w00 = (1 - a.f) * (1 - b.f), w01 = (1 - a.f) * b.f;
      const double w10 = a.f * (1 - b.f), w11 = a.f * b.f;
      const double* p00 = row(x, a.i0, b.i0);
      const double* p01 = row(x, a.i0, b.i1);
      const double* p10 = row(x, a.i1, b.i0);
      const double* p11 = row(x, a.i1, b.i1);
      double* out = y.data() + (static_cast<std::size_t>(oy) * ow + ox) * c;
      for (int k = 0; k < c; ++k) {
        out[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
      }
    }
  }
}

void upsample_backward(const Tensor& dy, Tensor& dx) {
  const int iw = dx.dim(1), c = dx.dim(2);
  const int oh = dy.dim(0), ow = dy.dim(1);
  const auto ty = upsample_taps(oh, dx.dim(0));
  const auto tx = upsample_taps(ow, iw);
  auto row = [&](Tensor& t, int i, int j) {
    return t.data() + (static_cast<std::size_t>(i) * t.dim(1) + j) * t.dim(2);
  };
  for (int oy = 0; oy < oh; ++oy) {
    const UpTap& a = ty[static_cast<std::size_t>(oy)];
    for (int ox = 0; ox < ow; ++ox) {
      const UpTap& b = tx[static_cast<std::size_t>(ox)];
      const double* g = dy.data() + (static_cast<std::size_t>(oy) * ow + ox) * c;
      double* p00 = row(dx, a.i0, b.i0);
      double* p01 = row(dx, a.i0, b.i1);
      double* p10 = row(dx, a.i1, b.i0);
      double* p11 = row(dx, a.i1, b.i1);
      const double w00 = (1 - a.f) * (1 - b.f), w01 = (1 - a.f) * b.f;
      const double w10 = a.f * (1 - b.f), w11 = a.f * b.f;
      for (int k = 0; k < c; ++k) {
        p00[k] += w00 * g[k];
        p01[k] += w01 * g[k];
        p10[k] += w10 * g[k];
        p11[k] += w11 * g[k];
      }
    }
  }
}

}  // namespace

ModelParams init_model(int num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw ValidationError("init_model: num_classes below 2");
  ModelParams p;
  p.init_seed = seed;
  const int chans[4] = {3, 16, 32, 32};
  const int strides[3] = {1, 2, 2};
  for (int l = 0; l < 3; ++l) {
    ConvLayer layer;
    layer.in_ch = chans[l];
    layer.out_ch = chans[l + 1];
    layer.stride = strides[l];
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(l)));
    layer.weight = he_normal({3, 3, layer.in_ch, layer.out_ch}, 9 * layer.in_ch, rng);
    layer.bias = Tensor({layer.out_ch});
    p.convs.push_back(std::move(layer));
  }
  Rng rng(mix_seed(seed, 3));
  p.head_weight = he_normal({chans[3], num_classes}, chans[3], rng);
  p.head_bias = Tensor({num_classes});
  return p;
}

ForwardOutputs model_forward(const ModelParams& params, const Tensor& image, PadMode pad,
                             ForwardState* state) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimensionError("model_forward: expected HxWx3 image, got " + image.shape_str());
  }
  const int h = image.dim(0), w = image.dim(1);
  if (h % 4 != 0 || w % 4 != 0 || h < 4 || w < 4) {
    throw DimensionError("model_forward: spatial dims must be positive multiples of 4");
  }

  ForwardState local;
  ForwardState& st = state ? *state : local;
  st.pad = pad;
  st.revision = params.revision;
  st.input = image;
  st.pre.clear();
  st.act.clear();

  const Tensor* x = &st.input;
  for (const ConvLayer& layer : params.convs) {
    Tensor pre({conv_out_dim(x->dim(0), layer.stride), conv_out_dim(x->dim(1), layer.stride),
                layer.out_ch});
    conv_forward(*x, layer.weight, layer.bias, layer.stride, pad, pre);
    Tensor act = pre;
    for (std::size_t i = 0; i < act.size(); ++i) {
      if (act.data()[i] < 0.0) act.data()[i] = 0.0;
    }
    st.pre.push_back(std::move(pre));
    st.act.push_back(std::move(act));
    x = &st.act.back();
  }

  const int f = params.feature_channels();
  const int c = params.num_classes();
  st.upsampled = Tensor({h, w, f});
  upsample_forward(st.act.back(), st.upsampled);

  ForwardOutputs out;
  out.features = st.act.back();
  out.logits = Tensor({h, w, c});
  const double* up = st.upsampled.data();
  const double* hw = params.head_weight.data();
  const double* hb = params.head_bias.data();
  double* lg = out.logits.data();
  const std::size_t npix = static_cast<std::size_t>(h) * w;
  for (std::size_t px = 0; px < npix; ++px) {
    double* o = lg + px * c;
    for (int k = 0; k < c; ++k) o[k] = hb[k];
    const double* u = up + px * f;
    for (int j = 0; j < f; ++j) {
      const double v = u[j];
      const double* row = hw + static_cast<std::size_t>(j) * c;
      for (int k = 0; k < c; ++k) o[k] += v * row[k];
    }
  }
  return out;
}

ModelGrads model_backward(const ModelParams& params, const ForwardState& state,
                          const Tensor& dlogits, const Tensor& dfeatures) {
  if (state.revision != params.revision) {
    throw StaleCache("model_backward: parameters changed since the cached forward");
  }
  const int h = state.input.dim(0), w = state.input.dim(1);
  const int f = params.feature_channels();
  const int c = params.num_classes();
  if (dlogits.rank() != 3 || dlogits.dim(0) != h || dlogits.dim(1) != w ||
      dlogits.dim(2) != c) {
    throw DimensionError("model_backward: dlogits shape " + dlogits.shape_str());
  }
  if (!dfeatures.same_shape(state.act.back())) {
    throw DimensionError("model_backward: dfeatures shape " + dfeatures.shape_str());
  }

  ModelGrads g;
  g.head_w = Tensor::zeros_like(params.head_weight);
  g.head_b = Tensor::zeros_like(params.head_bias);

  // Head (1x1 conv) and upsample transpose.
  Tensor dup({h, w, f});
  {
    const double* up = state.upsampled.data();
    const double* hw = params.head_weight.data();
    const double* dl = dlogits.data();
    double* dputr = dup.data();
    const std::size_t npix = static_cast<std::size_t>(h) * w;
    for (std::size_t px = 0; px < npix; ++px) {
      const double* gl = dl + px * c;
      const double* u = up + px * f;
      double* du = dputr + px * f;
      for (int k = 0; k < c; ++k) g.head_b.data()[k] += gl[k];
      for (int j = 0; j < f; ++j) {
        const double* row = hw + static_cast<std::size_t>(j) * c;
        double* grow = g.head_w.data() + static_cast<std::size_t>(j) * c;
        double acc = 0.0;
        for (int k = 0; k < c; ++k) {
          grow[k] += u[j] * gl[k];
          acc += row[k] * gl[k];
        }
        du[j] = acc;
      }
    }
  }

  Tensor dact = dfeatures;
  upsample_backward(dup, dact);

  // Conv stack in reverse, ReLU subgradient 0 at 0.
  for (int l = static_cast<int>(params.convs.size()) - 1; l >= 0; --l) {
    const ConvLayer& layer = params.convs[static_cast<std::size_t>(l)];
    const Tensor& pre = state.pre[static_cast<std::size_t>(l)];
    for (std::size_t i = 0; i < dact.size(); ++i) {
      if (pre.data()[i] <= 0.0) dact.data()[i] = 0.0;
    }
    const Tensor& below = l == 0 ? state.input : state.act[static_cast<std::size_t>(l - 1)];
    Tensor dbelow = Tensor::zeros_like(below);
    Tensor dw = Tensor::zeros_like(layer.weight);
    Tensor db = Tensor::zeros_like(layer.bias);
    conv_backward(below, layer.weight, layer.stride, state.pad, dact, dbelow, dw, db);
    g.conv_w.insert(g.conv_w.begin(), std::move(dw));
    g.conv_b.insert(g.conv_b.begin(), std::move(db));
    dact = std::move(dbelow);
  }
  g.input = std::move(dact);
  return g;
}

ClassifierParams init_classifier(int feature_channels, std::uint64_t seed) {
  if (feature_channels < 1) throw ValidationError("init_classifier: bad channel count");
  ClassifierParams p;
  Rng rng(mix_seed(seed, 100));
  p.conv_w = he_normal({3, 3, feature_channels, 8}, 9 * feature_channels, rng);
  p.conv_b = Tensor({8});
  Rng rng2(mix_seed(seed, 101));
  p.lin_w = he_normal({8}, 8, rng2);
  p.lin_b = 0.0;
  return p;
}

double classifier_forward(const ClassifierParams& params, const Tensor& features,
                          ClassifierState* state) {
  const int fch = params.conv_w.dim(2);
  if (features.rank() != 3 || features.dim(2) != fch) {
    throw DimensionError("classifier_forward: expected HxWx" + std::to_string(fch) +
                         " features, got " + features.shape_str());
  }
  ClassifierState local;
  ClassifierState& st = state ? *state : local;
  st.revision = params.revision;
  st.features = features;

  const int oh = conv_out_dim(features.dim(0), 2);
  const int ow = conv_out_dim(features.dim(1), 2);
  st.pre = Tensor({oh, ow, 8});
  conv_forward(features, params.conv_w, params.conv_b, 2, PadMode::zero, st.pre);
  st.act = st.pre;
  for (std::size_t i = 0; i < st.act.size(); ++i) {
    if (st.act.data()[i] < 0.0) st.act.data()[i] = 0.0;
  }
  st.pooled.assign(8, 0.0);
  const double inv = 1.0 / (static_cast<double>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      for (int j = 0; j < 8; ++j) st.pooled[static_cast<std::size_t>(j)] += st.act(y, x, j) * inv;
    }
  }
  double z = params.lin_b;
  for (int j = 0; j < 8; ++j) z += params.lin_w.data()[j] * st.pooled[static_cast<std::size_t>(j)];
  st.prob = 1.0 / (1.0 + std::exp(-z));
  return st.prob;
}

ClassifierGrads classifier_backward(const ClassifierParams& params,
                                    const ClassifierState& state, double dprob) {
  if (state.revision != params.revision) {
    throw StaleCache("classifier_backward: parameters changed since the cached forward");
  }
  ClassifierGrads g;
  g.conv_w = Tensor::zeros_like(params.conv_w);
  g.conv_b = Tensor::zeros_like(params.conv_b);
  g.lin_w = Tensor::zeros_like(params.lin_w);
  g.features = Tensor::zeros_like(state.features);

  const double dz = dprob * state.prob * (1.0 - state.prob);
  g.lin_b = dz;
  const int oh = state.act.dim(0), ow = state.act.dim(1);
  const double inv = 1.0 / (static_cast<double>(oh) * ow);
  Tensor dact = Tensor::zeros_like(state.act);
  for (int j = 0; j < 8; ++j) {
    g.lin_w.data()[j] = dz * state.pooled[static_cast<std::size_t>(j)];
  }
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      for (int j = 0; j < 8; ++j) {
        if (state.pre(y, x, j) > 0.0) dact(y, x, j) = dz * params.lin_w.data()[j] * inv;
      }
    }
  }
  conv_backward(state.features, params.conv_w, 2, PadMode::zero, dact, g.features,
                g.conv_w, g.conv_b);
  return g;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = params.head_weight.size() + params.head_bias.size();
  for (const ConvLayer& l : params.convs) n += l.weight.size() + l.bias.size();
  return n;
}

std::size_t parameter_count(const ClassifierParams& params) {
  return params.conv_w.size() + params.conv_b.size() + params.lin_w.size() + 1;
}

}  // namespace dpp
