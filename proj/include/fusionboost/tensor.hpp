#pragma once
#include <cstdint>
#include <span>
#include <vector>

#include "fusionboost/errors.hpp"
#include "fusionboost/rng.hpp"

namespace fb {

// Dense NCHW tensor. T is float on the training/inference path; gradient
// checking instantiates the same ops in double.
template <typename T>
struct TensorT {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  TensorT() = default;
  TensorT(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
    require(n_ > 0 && c_ > 0 && h_ > 0 && w_ > 0, "TensorT: dims must be positive");
    data.assign(size(), T(0));
  }

  std::int64_t size() const { return std::int64_t(n) * c * h * w; }
  bool same_shape(const TensorT& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  T* plane(int in, int ic) { return data.data() + (std::int64_t(in) * c + ic) * h * w; }
  const T* plane(int in, int ic) const {
    return data.data() + (std::int64_t(in) * c + ic) * h * w;
  }
  T& at(int in, int ic, int iy, int ix) { return plane(in, ic)[std::int64_t(iy) * w + ix]; }
  T at(int in, int ic, int iy, int ix) const { return plane(in, ic)[std::int64_t(iy) * w + ix]; }

  void fill(T v) { data.assign(data.size(), v); }
};

using Tensor4 = TensorT<float>;

// One 3x3 convolution, stride 1, zero padding 1.
template <typename T>
struct ConvLayerT {
  int in_channels = 0, out_channels = 0;
  TensorT<T> weight;      // (out, in, 3, 3)
  std::vector<T> bias;    // (out)
};

using ConvLayer = ConvLayerT<float>;

// Weights uniform in [-s, s] with s = sqrt(1 / (9 * in_channels)), bias zero.
ConvLayer make_conv(int in_channels, int out_channels, Rng& rng);

template <typename T>
struct ConvGradsT {
  TensorT<T> input;
  TensorT<T> weight;
  std::vector<T> bias;
};

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const ConvLayerT<T>& layer);

// Gradients of a scalar loss wrt input, weights and bias, given the gradient
// wrt the layer output and the input the forward pass saw.
template <typename T>
ConvGradsT<T> conv2d_backward(const TensorT<T>& grad_out, const TensorT<T>& x,
                              const ConvLayerT<T>& layer);

template <typename T>
TensorT<T> leaky_relu_forward(const TensorT<T>& x, T slope);
template <typename T>
TensorT<T> leaky_relu_backward(const TensorT<T>& grad_out, const TensorT<T>& x, T slope);

template <typename T>
TensorT<T> sigmoid_forward(const TensorT<T>& x);
// y is the forward output; d/dx = y * (1 - y).
template <typename T>
TensorT<T> sigmoid_backward(const TensorT<T>& grad_out, const TensorT<T>& y);

template <typename T>
struct L1ResultT {
  T loss;
  TensorT<T> grad;  // sign(pred - target) / element count; sign(0) = 0
};

// Mean absolute error over all elements.
template <typename T>
L1ResultT<T> l1_loss(const TensorT<T>& pred, const TensorT<T>& target);

// --- Sequential conv stacks -------------------------------------------------

enum class Act { None, LeakyRelu, Sigmoid };

template <typename T>
struct ConvNetT {
  std::vector<ConvLayerT<T>> layers;
  std::vector<Act> acts;  // one per layer
  T leaky_slope = T(0.2);
};

using ConvNet = ConvNetT<float>;

// Tensors retained by the cached forward pass for use in net_backward.
template <typename T>
struct NetCacheT {
  TensorT<T> x;                  // network input
  std::vector<TensorT<T>> pre;   // conv outputs, before activation
  std::vector<TensorT<T>> post;  // activation outputs; post.back() is the result
};

template <typename T>
struct NetGradsT {
  std::vector<TensorT<T>> weight;     // per layer
  std::vector<std::vector<T>> bias;   // per layer
  TensorT<T> input;
};

template <typename T>
TensorT<T> net_forward(const ConvNetT<T>& net, const TensorT<T>& x);
template <typename T>
NetCacheT<T> net_forward_cached(const ConvNetT<T>& net, const TensorT<T>& x);
template <typename T>
NetGradsT<T> net_backward(const ConvNetT<T>& net, const NetCacheT<T>& cache,
                          const TensorT<T>& grad_out);

ConvNetT<double> to_double(const ConvNet& net);
TensorT<double> to_double(const Tensor4& t);

// --- Adam -------------------------------------------------------------------

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Moment state for one parameter block; buffers are sized on first use.
struct AdamState {
  std::vector<float> m, v;
  std::int64_t t = 0;
};

// One bias-corrected Adam update in place. Throws on non-finite gradients.
void adam_step(std::span<float> param, std::span<const float> grad, AdamState& state,
               const AdamConfig& cfg);

// --- Gradient checking ------------------------------------------------------

// Central-difference check of every parameter of `net` against the analytic
// backward pass, on the scalar L1 loss of net(x) against a zero target.
// Runs entirely in double. The loss is piecewise smooth, so parameters whose
// +-h evaluations straddle a kink (a leaky-relu pre-activation or an L1
// residual changing sign) are excluded: no difference quotient exists there.
// Returns the maximum relative error over the validly checked parameters.
double grad_check(const ConvNet& net, const Tensor4& x, double h = 1e-3);

}  // namespace fb
