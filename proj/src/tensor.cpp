#include "fusionboost/tensor.hpp"
#include <type_traits>

#include <cmath>
#include <cstring>
#include <string>

namespace fb {
namespace {

typedef float v8f __attribute__((vector_size(32)));
typedef float v8f_u __attribute__((vector_size(32), aligned(4)));

inline v8f loadu8(const float* p) { return *reinterpret_cast<const v8f_u*>(p); }

// Fixed pairwise order so the sum is reproducible.
inline float hsum8(v8f v) {
  return ((v[0] + v[4]) + (v[1] + v[5])) + ((v[2] + v[6]) + (v[3] + v[7]));
}

// Copies one image's channels into a zero-padded buffer of (h+2) x (w+2) rows.
template <typename T>
void pad_image(const TensorT<T>& t, int in, std::vector<T>& pad) {
  const int H = t.h, W = t.w, P = W + 2;
  pad.assign(std::size_t(t.c) * (H + 2) * P, T(0));
  for (int ic = 0; ic < t.c; ++ic) {
    const T* src = t.plane(in, ic);
    T* dst = pad.data() + std::size_t(ic) * (H + 2) * P;
    for (int y = 0; y < H; ++y)
      std::memcpy(dst + std::size_t(y + 1) * P + 1, src + std::size_t(y) * W,
                  sizeof(T) * W);
  }
}

template <typename T>
void check_conv_shapes(const TensorT<T>& x, const ConvLayerT<T>& layer) {
  require(x.size() > 0, "conv2d: empty input");
  require(x.c == layer.in_channels, "conv2d: input has " + std::to_string(x.c) +
                                        " channels, layer expects " +
                                        std::to_string(layer.in_channels));
  require(layer.weight.n == layer.out_channels && layer.weight.c == layer.in_channels &&
              layer.weight.h == 3 && layer.weight.w == 3,
          "conv2d: weight shape does not match layer");
  require(int(layer.bias.size()) == layer.out_channels, "conv2d: bias size mismatch");
}

}  // namespace

ConvLayer make_conv(int in_channels, int out_channels, Rng& rng) {
  require(in_channels > 0 && out_channels > 0, "make_conv: channel counts must be positive");
  ConvLayer l;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.weight = Tensor4(out_channels, in_channels, 3, 3);
  const double s = std::sqrt(1.0 / (9.0 * in_channels));
  for (auto& w : l.weight.data) w = float(rng.uniform(-s, s));
  l.bias.assign(out_channels, 0.0f);
  return l;
}

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const ConvLayerT<T>& layer) {
  check_conv_shapes(x, layer);
  const int H = x.h, W = x.w, P = W + 2;
  TensorT<T> y(x.n, layer.out_channels, H, W);
  std::vector<T> pad;
  for (int in = 0; in < x.n; ++in) {
    pad_image(x, in, pad);
    for (int co = 0; co < layer.out_channels; ++co) {
      T* out = y.plane(in, co);
      const T b = layer.bias[co];
      for (std::int64_t i = 0; i < std::int64_t(H) * W; ++i) out[i] = b;
      for (int ci = 0; ci < layer.in_channels; ++ci) {
        const T* wt = layer.weight.plane(co, ci);
        const T* base = pad.data() + std::size_t(ci) * (H + 2) * P;
        for (int yy = 0; yy < H; ++yy) {
          const T* r0 = base + std::size_t(yy) * P;
          const T* r1 = r0 + P;
          const T* r2 = r1 + P;
          T* o = out + std::size_t(yy) * W;
          for (int xx = 0; xx < W; ++xx)
            o[xx] += wt[0] * r0[xx] + wt[1] * r0[xx + 1] + wt[2] * r0[xx + 2] +
                     wt[3] * r1[xx] + wt[4] * r1[xx + 1] + wt[5] * r1[xx + 2] +
                     wt[6] * r2[xx] + wt[7] * r2[xx + 1] + wt[8] * r2[xx + 2];
        }
      }
    }
  }
  return y;
}

template <typename T>
ConvGradsT<T> conv2d_backward(const TensorT<T>& grad_out, const TensorT<T>& x,
                              const ConvLayerT<T>& layer) {
  check_conv_shapes(x, layer);
  require(grad_out.n == x.n && grad_out.c == layer.out_channels && grad_out.h == x.h &&
              grad_out.w == x.w,
          "conv2d_backward: grad_out shape mismatch");
  const int H = x.h, W = x.w, P = W + 2;

  ConvGradsT<T> g;
  g.input = TensorT<T>(x.n, x.c, H, W);
  g.weight = TensorT<T>(layer.out_channels, layer.in_channels, 3, 3);
  g.bias.assign(layer.out_channels, T(0));

  std::vector<T> xpad, gpad;
  for (int in = 0; in < x.n; ++in) {
    pad_image(x, in, xpad);
    pad_image(grad_out, in, gpad);

    for (int co = 0; co < layer.out_channels; ++co) {
      const T* gp = grad_out.plane(in, co);
      T acc = T(0);
      for (std::int64_t i = 0; i < std::int64_t(H) * W; ++i) acc += gp[i];
      g.bias[co] += acc;
    }

    // dW: nine shifted dot products of grad_out with the padded input.
    for (int co = 0; co < layer.out_channels; ++co) {
      const T* gp = grad_out.plane(in, co);
      for (int ci = 0; ci < layer.in_channels; ++ci) {
        const T* base = xpad.data() + std::size_t(ci) * (H + 2) * P;
        T a[9] = {};
        for (int yy = 0; yy < H; ++yy) {
          const T* gr = gp + std::size_t(yy) * W;
          const T* rows[3] = {base + std::size_t(yy) * P, base + std::size_t(yy + 1) * P,
                              base + std::size_t(yy + 2) * P};
          if constexpr (std::is_same_v<T, float>) {
            // Plain FP reductions do not auto-vectorize (summation order is
            // part of the semantics), so accumulate in explicit 8-wide lanes.
            // The lane layout is fixed, keeping results bit-reproducible.
            v8f va[9] = {};
            int xx = 0;
            for (; xx + 8 <= W; xx += 8) {
              const v8f gv = loadu8(gr + xx);
              for (int t = 0; t < 9; ++t) va[t] += gv * loadu8(rows[t / 3] + xx + t % 3);
            }
            for (int t = 0; t < 9; ++t) a[t] += hsum8(va[t]);
            for (; xx < W; ++xx) {
              const T gv = gr[xx];
              for (int t = 0; t < 9; ++t) a[t] += gv * rows[t / 3][xx + t % 3];
            }
          } else {
            for (int xx = 0; xx < W; ++xx) {
              const T gv = gr[xx];
              for (int t = 0; t < 9; ++t) a[t] += gv * rows[t / 3][xx + t % 3];
            }
          }
        }
        T* gw = g.weight.plane(co, ci);
        for (int k = 0; k < 9; ++k) gw[k] += a[k];
      }
    }

    // dX: correlate padded grad_out with the 180-degree-rotated kernels.
    for (int ci = 0; ci < layer.in_channels; ++ci) {
      T* out = g.input.plane(in, ci);
      for (int co = 0; co < layer.out_channels; ++co) {
        const T* wt = layer.weight.plane(co, ci);
        const T* base = gpad.data() + std::size_t(co) * (H + 2) * P;
        for (int yy = 0; yy < H; ++yy) {
          const T* r0 = base + std::size_t(yy) * P;
          const T* r1 = r0 + P;
          const T* r2 = r1 + P;
          T* o = out + std::size_t(yy) * W;
          for (int xx = 0; xx < W; ++xx)
            o[xx] += wt[8] * r0[xx] + wt[7] * r0[xx + 1] + wt[6] * r0[xx + 2] +
                     wt[5] * r1[xx] + wt[4] * r1[xx + 1] + wt[3] * r1[xx + 2] +
                     wt[2] * r2[xx] + wt[1] * r2[xx + 1] + wt[0] * r2[xx + 2];
        }
      }
    }
  }
  return g;
}

template <typename T>
TensorT<T> leaky_relu_forward(const TensorT<T>& x, T slope) {
  require(slope >= T(0) && slope < T(1), "leaky_relu: slope must be in [0, 1)");
  TensorT<T> y = x;
  for (auto& v : y.data) v = v > T(0) ? v : slope * v;
  return y;
}

template <typename T>
TensorT<T> leaky_relu_backward(const TensorT<T>& grad_out, const TensorT<T>& x, T slope) {
  require(grad_out.same_shape(x), "leaky_relu_backward: shape mismatch");
  TensorT<T> g(x.n, x.c, x.h, x.w);
  for (std::int64_t i = 0; i < x.size(); ++i)
    g.data[i] = grad_out.data[i] * (x.data[i] > T(0) ? T(1) : slope);
  return g;
}

template <typename T>
TensorT<T> sigmoid_forward(const TensorT<T>& x) {
  TensorT<T> y(x.n, x.c, x.h, x.w);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const T v = x.data[i];
    // Branch keeps exp() argument non-positive so large |v| cannot overflow.
    if (v >= T(0)) {
      y.data[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y.data[i] = e / (T(1) + e);
    }
  }
  return y;
}

template <typename T>
TensorT<T> sigmoid_backward(const TensorT<T>& grad_out, const TensorT<T>& y) {
  require(grad_out.same_shape(y), "sigmoid_backward: shape mismatch");
  TensorT<T> g(y.n, y.c, y.h, y.w);
  for (std::int64_t i = 0; i < y.size(); ++i)
    g.data[i] = grad_out.data[i] * y.data[i] * (T(1) - y.data[i]);
  return g;
}

template <typename T>
L1ResultT<T> l1_loss(const TensorT<T>& pred, const TensorT<T>& target) {
  require(pred.same_shape(target), "l1_loss: shape mismatch");
  L1ResultT<T> r;
  r.grad = TensorT<T>(pred.n, pred.c, pred.h, pred.w);
  const T inv = T(1) / T(pred.size());
  double acc = 0.0;
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    const T d = pred.data[i] - target.data[i];
    acc += std::abs(double(d));
    r.grad.data[i] = d > T(0) ? inv : (d < T(0) ? -inv : T(0));
  }
  r.loss = T(acc * double(inv));
  return r;
}

template <typename T>
static void check_net(const ConvNetT<T>& net) {
  require(!net.layers.empty(), "net: no layers");
  require(net.layers.size() == net.acts.size(), "net: one activation per layer required");
}

template <typename T>
TensorT<T> net_forward(const ConvNetT<T>& net, const TensorT<T>& x) {
  check_net(net);
  TensorT<T> cur = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    cur = conv2d_forward(cur, net.layers[i]);
    switch (net.acts[i]) {
      case Act::None: break;
      case Act::LeakyRelu: cur = leaky_relu_forward(cur, net.leaky_slope); break;
      case Act::Sigmoid: cur = sigmoid_forward(cur); break;
    }
  }
  return cur;
}

template <typename T>
NetCacheT<T> net_forward_cached(const ConvNetT<T>& net, const TensorT<T>& x) {
  check_net(net);
  NetCacheT<T> cache;
  cache.x = x;
  const TensorT<T>* cur = &cache.x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    cache.pre.push_back(conv2d_forward(*cur, net.layers[i]));
    switch (net.acts[i]) {
      case Act::None: cache.post.push_back(cache.pre.back()); break;
      case Act::LeakyRelu:
        cache.post.push_back(leaky_relu_forward(cache.pre.back(), net.leaky_slope));
        break;
      case Act::Sigmoid: cache.post.push_back(sigmoid_forward(cache.pre.back())); break;
    }
    cur = &cache.post.back();
  }
  return cache;
}

template <typename T>
NetGradsT<T> net_backward(const ConvNetT<T>& net, const NetCacheT<T>& cache,
                          const TensorT<T>& grad_out) {
  check_net(net);
  require(cache.pre.size() == net.layers.size(), "net_backward: cache does not match net");
  const int L = int(net.layers.size());
  NetGradsT<T> g;
  g.weight.resize(L);
  g.bias.resize(L);
  TensorT<T> cur = grad_out;
  for (int i = L - 1; i >= 0; --i) {
    switch (net.acts[i]) {
      case Act::None: break;
      case Act::LeakyRelu:
        cur = leaky_relu_backward(cur, cache.pre[i], net.leaky_slope);
        break;
      case Act::Sigmoid: cur = sigmoid_backward(cur, cache.post[i]); break;
    }
    const TensorT<T>& input = i == 0 ? cache.x : cache.post[i - 1];
    ConvGradsT<T> cg = conv2d_backward(cur, input, net.layers[i]);
    g.weight[i] = std::move(cg.weight);
    g.bias[i] = std::move(cg.bias);
    cur = std::move(cg.input);
  }
  g.input = std::move(cur);
  return g;
}

ConvNetT<double> to_double(const ConvNet& net) {
  ConvNetT<double> d;
  d.leaky_slope = double(net.leaky_slope);
  d.acts = net.acts;
  for (const auto& l : net.layers) {
    ConvLayerT<double> dl;
    dl.in_channels = l.in_channels;
    dl.out_channels = l.out_channels;
    dl.weight = TensorT<double>(l.weight.n, l.weight.c, l.weight.h, l.weight.w);
    for (std::int64_t i = 0; i < l.weight.size(); ++i) dl.weight.data[i] = l.weight.data[i];
    dl.bias.assign(l.bias.begin(), l.bias.end());
    d.layers.push_back(std::move(dl));
  }
  return d;
}

TensorT<double> to_double(const Tensor4& t) {
  TensorT<double> d(t.n, t.c, t.h, t.w);
  for (std::int64_t i = 0; i < t.size(); ++i) d.data[i] = t.data[i];
  return d;
}

void adam_step(std::span<float> param, std::span<const float> grad, AdamState& state,
               const AdamConfig& cfg) {
  require(param.size() == grad.size(), "adam_step: param/grad size mismatch");
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0f);
    state.v.assign(param.size(), 0.0f);
  }
  require(state.m.size() == param.size(), "adam_step: state belongs to another block");
  state.t += 1;
  const double b1t = 1.0 - std::pow(double(cfg.beta1), double(state.t));
  const double b2t = 1.0 - std::pow(double(cfg.beta2), double(state.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float gi = grad[i];
    if (!std::isfinite(gi))
      throw std::runtime_error("adam_step: non-finite gradient at index " + std::to_string(i));
    state.m[i] = cfg.beta1 * state.m[i] + (1.0f - cfg.beta1) * gi;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0f - cfg.beta2) * gi * gi;
    const double mhat = state.m[i] / b1t;
    const double vhat = state.v[i] / b2t;
    param[i] -= float(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

double grad_check(const ConvNet& net, const Tensor4& x, double h) {
  require(h > 0, "grad_check: h must be positive");
  ConvNetT<double> dnet = to_double(net);
  const TensorT<double> dx = to_double(x);

  const auto sign_of = [](double v) -> signed char { return v > 0 ? 1 : (v < 0 ? -1 : 0); };

  // Loss plus the signs of every kink argument (leaky-relu pre-activations and
  // L1 residuals). The loss is piecewise smooth in any one parameter; a central
  // difference is only meaningful when both evaluations land on the same piece.
  const auto probe = [&](std::vector<signed char>& sig) {
    NetCacheT<double> cache = net_forward_cached(dnet, dx);
    sig.clear();
    for (std::size_t i = 0; i < dnet.layers.size(); ++i)
      if (dnet.acts[i] == Act::LeakyRelu)
        for (double v : cache.pre[i].data) sig.push_back(sign_of(v));
    const TensorT<double>& out = cache.post.back();
    for (double v : out.data) sig.push_back(sign_of(v));
    TensorT<double> zero(out.n, out.c, out.h, out.w);
    return double(l1_loss(out, zero).loss);
  };

  NetCacheT<double> cache = net_forward_cached(dnet, dx);
  TensorT<double> zero(cache.post.back().n, cache.post.back().c, cache.post.back().h,
                       cache.post.back().w);
  const auto l1 = l1_loss(cache.post.back(), zero);
  NetGradsT<double> analytic = net_backward(dnet, cache, l1.grad);

  double max_rel = 0.0;
  std::vector<signed char> sig_p, sig_m;
  const auto check_param = [&](double* p, double a) {
    const double orig = *p;
    *p = orig + h;
    const double lp = probe(sig_p);
    *p = orig - h;
    const double lm = probe(sig_m);
    *p = orig;
    if (sig_p != sig_m) return;  // crossed a kink; the difference quotient is invalid
    const double num = (lp - lm) / (2.0 * h);
    if (std::abs(a) < 1e-8 && std::abs(num) < 1e-8) return;  // both zero by convention
    const double denom = std::max({std::abs(a), std::abs(num), 1e-8});
    max_rel = std::max(max_rel, std::abs(a - num) / denom);
  };

  for (std::size_t li = 0; li < dnet.layers.size(); ++li) {
    auto& l = dnet.layers[li];
    for (std::int64_t i = 0; i < l.weight.size(); ++i)
      check_param(&l.weight.data[i], analytic.weight[li].data[i]);
    for (std::size_t i = 0; i < l.bias.size(); ++i)
      check_param(&l.bias[i], analytic.bias[li][i]);
  }
  return max_rel;
}

#define FB_INSTANTIATE(T)                                                              \
  template struct TensorT<T>;                                                          \
  template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const ConvLayerT<T>&);      \
  template ConvGradsT<T> conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&,      \
                                            const ConvLayerT<T>&);                     \
  template TensorT<T> leaky_relu_forward<T>(const TensorT<T>&, T);                     \
  template TensorT<T> leaky_relu_backward<T>(const TensorT<T>&, const TensorT<T>&, T); \
  template TensorT<T> sigmoid_forward<T>(const TensorT<T>&);                           \
  template TensorT<T> sigmoid_backward<T>(const TensorT<T>&, const TensorT<T>&);       \
  template L1ResultT<T> l1_loss<T>(const TensorT<T>&, const TensorT<T>&);              \
  template TensorT<T> net_forward<T>(const ConvNetT<T>&, const TensorT<T>&);           \
  template NetCacheT<T> net_forward_cached<T>(const ConvNetT<T>&, const TensorT<T>&);  \
  template NetGradsT<T> net_backward<T>(const ConvNetT<T>&, const NetCacheT<T>&,       \
                                        const TensorT<T>&);

FB_INSTANTIATE(float)
FB_INSTANTIATE(double)
#undef FB_INSTANTIATE

}  // namespace fb
