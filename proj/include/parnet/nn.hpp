#pragma once

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "parnet/tensor.hpp"

namespace parnet::nn {

enum class LayerKind { Conv3x3, Relu, MaxPool2, Gap, Fc };

std::string to_string(LayerKind kind);

/// One layer of a plain CNN. `in`/`out` are channel counts for conv and
/// feature/class counts for fc; `stride` applies to conv only (1 or 2,
/// padding is always 1).
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int in = 0;
  int out = 0;
  int stride = 1;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Input geometry plus layer list. A valid network ends with gap -> fc; the
/// softmax lives in the loss.
struct Architecture {
  int channels = 1;
  int height = 64;
  int width = 64;
  std::vector<LayerSpec> layers;

  /// Throws ConfigError naming the offending layer index.
  void validate() const;

  /// Output shape of every layer, in order.
  std::vector<Shape> activation_shapes() const;

  int num_classes() const { return layers.back().out; }
  /// Width N of the GAP vector (number of final feature maps).
  int feature_width() const { return layers.back().in; }
  Shape input_shape() const { return {channels, height, width}; }

  /// conv3x3+relu blocks of the given widths with maxpool2 between them,
  /// then gap and fc.
  static Architecture tiny_net(int channels, int height, int width, const std::vector<int>& conv_widths,
                               int num_classes);

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

template <typename Scalar>
struct LayerParams {
  Tensor<Scalar> weight;  // conv: [out, in, 3, 3]; fc: [N, classes] (w_{k,c})
  Tensor<Scalar> bias;    // [out]
};

template <typename Scalar>
struct NetworkParams {
  std::vector<LayerParams<Scalar>> layers;

  const Tensor<Scalar>& fc_weight() const { return layers.back().weight; }

  /// Visits every non-empty parameter tensor as (name, tensor).
  template <typename Fn>
  void for_each(Fn&& fn) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (!layers[i].weight.empty()) fn("layer" + std::to_string(i) + ".weight", layers[i].weight);
      if (!layers[i].bias.empty()) fn("layer" + std::to_string(i) + ".bias", layers[i].bias);
    }
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (!layers[i].weight.empty()) fn("layer" + std::to_string(i) + ".weight", layers[i].weight);
      if (!layers[i].bias.empty()) fn("layer" + std::to_string(i) + ".bias", layers[i].bias);
    }
  }

  friend bool operator==(const NetworkParams& a, const NetworkParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      if (!(a.layers[i].weight == b.layers[i].weight) || !(a.layers[i].bias == b.layers[i].bias)) return false;
    }
    return true;
  }
};

/// Activations kept by forward() for backward().
template <typename Scalar>
struct ForwardTrace {
  using RowMatrix = typename Tensor<Scalar>::RowMatrix;

  std::vector<Tensor<Scalar>> activations;  // [0] input, [i + 1] output of layer i
  std::vector<RowMatrix> columns;           // im2col buffer per conv layer
  std::vector<std::vector<int>> pool_argmax;

  const Tensor<Scalar>& input() const { return activations.front(); }
  /// Final feature maps F, shape [N, h, w].
  const Tensor<Scalar>& features() const { return activations[activations.size() - 3]; }
  /// GAP vector g, length N.
  const Tensor<Scalar>& pooled() const { return activations[activations.size() - 2]; }
  /// Logits z.
  const Tensor<Scalar>& logits() const { return activations.back(); }
};

template <typename Scalar>
struct Gradients {
  NetworkParams<Scalar> params;
  Tensor<Scalar> pooled;  // dL/dg
  Tensor<Scalar> input;   // dL/dimage, only when requested
};

template <typename Scalar>
struct LossAndGradient {
  Scalar loss;
  Tensor<Scalar> dlogits;
};

// ---------------------------------------------------------------------------
// Layer primitives

template <typename Scalar>
Tensor<Scalar> conv3x3_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                               int stride, typename Tensor<Scalar>::RowMatrix& columns) {
  const int channels = input.extent(0);
  const int height = input.extent(1);
  const int width = input.extent(2);
  const int out_channels = weight.extent(0);
  const int out_h = (height - 1) / stride + 1;
  const int out_w = (width - 1) / stride + 1;

  columns.resize(static_cast<Eigen::Index>(channels) * 9, static_cast<Eigen::Index>(out_h) * out_w);
  for (int c = 0; c < channels; ++c) {
    const Scalar* src = input.data() + static_cast<std::ptrdiff_t>(c) * height * width;
    for (int kr = 0; kr < 3; ++kr) {
      for (int kc = 0; kc < 3; ++kc) {
        Scalar* dst = &columns((c * 3 + kr) * 3 + kc, 0);
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + kr - 1;
          Scalar* row = dst + static_cast<std::ptrdiff_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + out_w, Scalar(0));
            continue;
          }
          const Scalar* src_row = src + static_cast<std::ptrdiff_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kc - 1;
            row[ox] = (ix >= 0 && ix < width) ? src_row[ix] : Scalar(0);
          }
        }
      }
    }
  }

  Tensor<Scalar> out({out_channels, out_h, out_w});
  const typename Tensor<Scalar>::ConstMatrixMap kernel(weight.data(), out_channels, channels * 9);
  auto result = out.as_matrix();
  result.noalias() = kernel * columns;
  result.colwise() += bias.vec();
  return out;
}

/// Accumulates weight/bias gradients and, when `input_grad` is non-null,
/// the gradient w.r.t. the conv input (shape of `input_shape`).
template <typename Scalar>
void conv3x3_backward(const Shape& input_shape, const Tensor<Scalar>& weight,
                      const typename Tensor<Scalar>::RowMatrix& columns, int stride, const Tensor<Scalar>& out_grad,
                      Tensor<Scalar>& weight_grad, Tensor<Scalar>& bias_grad, Tensor<Scalar>* input_grad) {
  const int channels = input_shape[0];
  const int height = input_shape[1];
  const int width = input_shape[2];
  const int out_channels = weight.extent(0);
  const int out_h = out_grad.extent(1);
  const int out_w = out_grad.extent(2);

  const auto dout = out_grad.as_matrix();
  typename Tensor<Scalar>::MatrixMap dkernel(weight_grad.data(), out_channels, channels * 9);
  dkernel.noalias() += dout * columns.transpose();
  bias_grad.vec() += dout.rowwise().sum();

  if (input_grad == nullptr) return;
  const typename Tensor<Scalar>::ConstMatrixMap kernel(weight.data(), out_channels, channels * 9);
  const typename Tensor<Scalar>::RowMatrix dcols = kernel.transpose() * dout;
  *input_grad = Tensor<Scalar>(input_shape);
  for (int c = 0; c < channels; ++c) {
    Scalar* dst = input_grad->data() + static_cast<std::ptrdiff_t>(c) * height * width;
    for (int kr = 0; kr < 3; ++kr) {
      for (int kc = 0; kc < 3; ++kc) {
        const Scalar* src = &dcols((c * 3 + kr) * 3 + kc, 0);
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + kr - 1;
          if (iy < 0 || iy >= height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kc - 1;
            if (ix >= 0 && ix < width) dst[iy * width + ix] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> relu_forward(const Tensor<Scalar>& input) {
  return Tensor<Scalar>(input.shape(), input.vec().cwiseMax(Scalar(0)));
}

/// Upstream gradient passes only where the pre-activation is > 0.
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& pre_activation, const Tensor<Scalar>& out_grad) {
  return Tensor<Scalar>(out_grad.shape(),
                        (pre_activation.vec().array() > Scalar(0)).select(out_grad.vec(), Scalar(0)));
}

template <typename Scalar>
Tensor<Scalar> maxpool2_forward(const Tensor<Scalar>& input, std::vector<int>& argmax) {
  const int channels = input.extent(0);
  const int height = input.extent(1);
  const int width = input.extent(2);
  const int out_h = height / 2;
  const int out_w = width / 2;
  Tensor<Scalar> out({channels, out_h, out_w});
  argmax.assign(static_cast<std::size_t>(out.size()), 0);
  std::size_t o = 0;
  for (int c = 0; c < channels; ++c) {
    const int base = c * height * width;
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox, ++o) {
        int best = base + (2 * oy) * width + 2 * ox;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = base + (2 * oy + dy) * width + 2 * ox + dx;
            if (input.data()[idx] > input.data()[best]) best = idx;
          }
        }
        argmax[o] = best;
        out.data()[o] = input.data()[best];
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> maxpool2_backward(const Shape& input_shape, const std::vector<int>& argmax,
                                 const Tensor<Scalar>& out_grad) {
  Tensor<Scalar> grad(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) grad.data()[argmax[o]] += out_grad.data()[o];
  return grad;
}

template <typename Scalar>
Tensor<Scalar> gap_forward(const Tensor<Scalar>& features) {
  return Tensor<Scalar>({features.extent(0)}, features.as_matrix().rowwise().mean());
}

/// Each spatial cell of F_k receives dg_k / (h * w).
template <typename Scalar>
Tensor<Scalar> gap_backward(const Shape& feature_shape, const Tensor<Scalar>& pooled_grad) {
  Tensor<Scalar> grad(feature_shape);
  const Scalar cells = static_cast<Scalar>(feature_shape[1] * feature_shape[2]);
  grad.as_matrix().colwise() = pooled_grad.vec() / cells;
  return grad;
}

template <typename Scalar>
Tensor<Scalar> fc_forward(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
  return Tensor<Scalar>({weight.extent(1)}, weight.as_matrix().transpose() * input.vec() + bias.vec());
}

// ---------------------------------------------------------------------------
// Network

template <typename Scalar, typename Rng>
NetworkParams<Scalar> init_params(const Architecture& arch, Rng& rng) {
  arch.validate();
  NetworkParams<Scalar> params;
  params.layers.resize(arch.layers.size());
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& layer = arch.layers[i];
    if (layer.kind != LayerKind::Conv3x3 && layer.kind != LayerKind::Fc) continue;
    const bool conv = layer.kind == LayerKind::Conv3x3;
    const int fan_in = conv ? layer.in * 9 : layer.in;
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    Tensor<Scalar> weight(conv ? Shape{layer.out, layer.in, 3, 3} : Shape{layer.in, layer.out});
    for (Scalar& w : weight.values()) w = static_cast<Scalar>(normal(rng));
    params.layers[i].weight = std::move(weight);
    params.layers[i].bias = Tensor<Scalar>({layer.out});
  }
  return params;
}

template <typename Scalar>
NetworkParams<Scalar> zeros_like(const NetworkParams<Scalar>& params) {
  NetworkParams<Scalar> out;
  out.layers.resize(params.layers.size());
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    if (!params.layers[i].weight.empty()) out.layers[i].weight = Tensor<Scalar>(params.layers[i].weight.shape());
    if (!params.layers[i].bias.empty()) out.layers[i].bias = Tensor<Scalar>(params.layers[i].bias.shape());
  }
  return out;
}

/// Adds `other` into `into`, tensor by tensor.
template <typename Scalar>
void accumulate(NetworkParams<Scalar>& into, const NetworkParams<Scalar>& other) {
  for (std::size_t i = 0; i < into.layers.size(); ++i) {
    if (!into.layers[i].weight.empty()) into.layers[i].weight.vec() += other.layers[i].weight.vec();
    if (!into.layers[i].bias.empty()) into.layers[i].bias.vec() += other.layers[i].bias.vec();
  }
}

template <typename Scalar>
ForwardTrace<Scalar> forward(const Architecture& arch, const NetworkParams<Scalar>& params,
                             const Tensor<Scalar>& image) {
  if (image.shape() != arch.input_shape()) {
    throw ShapeError("forward: layer 0 expects input " + shape_string(arch.input_shape()) + ", got " +
                     shape_string(image.shape()));
  }
  if (params.layers.size() != arch.layers.size()) {
    throw ShapeError("forward: parameter list has " + std::to_string(params.layers.size()) + " layers, architecture " +
                     std::to_string(arch.layers.size()));
  }
  ForwardTrace<Scalar> trace;
  const std::size_t count = arch.layers.size();
  trace.activations.reserve(count + 1);
  trace.columns.resize(count);
  trace.pool_argmax.resize(count);
  trace.activations.push_back(image);
  for (std::size_t i = 0; i < count; ++i) {
    const LayerSpec& layer = arch.layers[i];
    const Tensor<Scalar>& x = trace.activations.back();
    const LayerParams<Scalar>& p = params.layers[i];
    switch (layer.kind) {
      case LayerKind::Conv3x3:
        if (x.rank() != 3 || x.extent(0) != layer.in || p.weight.shape() != Shape{layer.out, layer.in, 3, 3}) {
          throw ShapeError("forward: layer " + std::to_string(i) + " (conv3x3) got input " + shape_string(x.shape()) +
                           " and weight " + shape_string(p.weight.shape()));
        }
        trace.activations.push_back(conv3x3_forward(x, p.weight, p.bias, layer.stride, trace.columns[i]));
        break;
      case LayerKind::Relu:
        trace.activations.push_back(relu_forward(x));
        break;
      case LayerKind::MaxPool2:
        trace.activations.push_back(maxpool2_forward(x, trace.pool_argmax[i]));
        break;
      case LayerKind::Gap:
        trace.activations.push_back(gap_forward(x));
        break;
      case LayerKind::Fc:
        if (x.rank() != 1 || p.weight.shape() != Shape{x.extent(0), layer.out}) {
          throw ShapeError("forward: layer " + std::to_string(i) + " (fc) got input " + shape_string(x.shape()) +
                           " and weight " + shape_string(p.weight.shape()));
        }
        trace.activations.push_back(fc_forward(x, p.weight, p.bias));
        break;
    }
  }
  return trace;
}

/// Backpropagates dL/dz (and optionally an extra dL/dg arriving at the GAP
/// vector from another head) through the whole network.
template <typename Scalar>
Gradients<Scalar> backward(const Architecture& arch, const NetworkParams<Scalar>& params,
                           const ForwardTrace<Scalar>& trace, const Tensor<Scalar>& dlogits,
                           const Tensor<Scalar>* pooled_extra = nullptr, bool want_input_grad = false) {
  Gradients<Scalar> grads;
  grads.params = zeros_like(params);
  const int count = static_cast<int>(arch.layers.size());
  if (dlogits.shape() != trace.logits().shape()) {
    throw ShapeError("backward: dlogits " + shape_string(dlogits.shape()) + " vs logits " +
                     shape_string(trace.logits().shape()));
  }

  Tensor<Scalar> grad = dlogits;
  for (int i = count - 1; i >= 0; --i) {
    const LayerSpec& layer = arch.layers[static_cast<std::size_t>(i)];
    const Tensor<Scalar>& x = trace.activations[static_cast<std::size_t>(i)];
    LayerParams<Scalar>& g = grads.params.layers[static_cast<std::size_t>(i)];
    const LayerParams<Scalar>& p = params.layers[static_cast<std::size_t>(i)];
    const bool need_input = i > 0 || want_input_grad;
    switch (layer.kind) {
      case LayerKind::Fc: {
        g.weight.as_matrix().noalias() = x.vec() * grad.vec().transpose();
        g.bias.vec() = grad.vec();
        Tensor<Scalar> dg({x.extent(0)}, p.weight.as_matrix() * grad.vec());
        if (pooled_extra != nullptr) {
          if (pooled_extra->shape() != dg.shape()) {
            throw ShapeError("backward: pooled gradient " + shape_string(pooled_extra->shape()) + " vs " +
                             shape_string(dg.shape()));
          }
          dg.vec() += pooled_extra->vec();
        }
        grads.pooled = dg;
        grad = std::move(dg);
        break;
      }
      case LayerKind::Gap:
        grad = gap_backward(x.shape(), grad);
        break;
      case LayerKind::MaxPool2:
        grad = maxpool2_backward(x.shape(), trace.pool_argmax[static_cast<std::size_t>(i)], grad);
        break;
      case LayerKind::Relu:
        grad = relu_backward(x, grad);
        break;
      case LayerKind::Conv3x3: {
        Tensor<Scalar> input_grad;
        conv3x3_backward(x.shape(), p.weight, trace.columns[static_cast<std::size_t>(i)], layer.stride, grad, g.weight,
                         g.bias, need_input ? &input_grad : nullptr);
        grad = std::move(input_grad);
        break;
      }
    }
  }
  if (want_input_grad) grads.input = std::move(grad);
  return grads;
}

// ---------------------------------------------------------------------------
// Loss and prediction

template <typename Scalar>
int argmax(const Tensor<Scalar>& logits) {
  Eigen::Index best = 0;
  logits.vec().maxCoeff(&best);
  return static_cast<int>(best);
}

/// Max-subtracted softmax cross-entropy; dz = softmax(z) - onehot(y).
template <typename Scalar>
LossAndGradient<Scalar> softmax_ce_loss(const Tensor<Scalar>& logits, int label) {
  if (logits.rank() != 1) throw ShapeError("softmax_ce_loss: logits must be rank 1, got " + shape_string(logits.shape()));
  if (label < 0 || label >= logits.extent(0)) {
    throw DataError("softmax_ce_loss: class index " + std::to_string(label) + " outside [0, " +
                    std::to_string(logits.extent(0)) + ")");
  }
  const Scalar peak = logits.vec().maxCoeff();
  const typename Tensor<Scalar>::Vector exps = (logits.vec().array() - peak).exp().matrix();
  const Scalar total = exps.sum();
  LossAndGradient<Scalar> out{std::log(total) - (logits.vec()[label] - peak), Tensor<Scalar>({logits.extent(0)})};
  out.dlogits.vec() = exps / total;
  out.dlogits.vec()[label] -= Scalar(1);
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  const Scalar peak = logits.vec().maxCoeff();
  typename Tensor<Scalar>::Vector exps = (logits.vec().array() - peak).exp().matrix();
  exps /= exps.sum();
  return Tensor<Scalar>(logits.shape(), std::move(exps));
}

// ---------------------------------------------------------------------------
// Optimizer

/// SGD with classic (coupled) momentum and step-decay schedule.
template <typename Scalar>
struct OptimizerState {
  double base_learning_rate = 1e-3;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double decay_factor = 10.0;
  int decay_period = 7;
  std::vector<Tensor<Scalar>> velocity;

  /// lr0 / factor^floor(epoch / period)
  double learning_rate_at(int epoch) const {
    if (decay_period <= 0) return base_learning_rate;
    return base_learning_rate / std::pow(decay_factor, epoch / decay_period);
  }
  void set_epoch(int epoch) { learning_rate = learning_rate_at(epoch); }
};

/// v <- mu v - lr (g + wd theta); theta <- theta + v.
template <typename Scalar>
void sgd_step(std::span<Tensor<Scalar>* const> params, std::span<const Tensor<Scalar>* const> grads,
              OptimizerState<Scalar>& state) {
  if (params.size() != grads.size()) {
    throw ShapeError("sgd_step: " + std::to_string(params.size()) + " parameters vs " + std::to_string(grads.size()) +
                     " gradients");
  }
  if (state.velocity.empty()) {
    for (const Tensor<Scalar>* p : params) state.velocity.emplace_back(p->shape());
  }
  if (state.velocity.size() != params.size()) {
    throw ShapeError("sgd_step: optimizer tracks " + std::to_string(state.velocity.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  const Scalar lr = static_cast<Scalar>(state.learning_rate);
  const Scalar mu = static_cast<Scalar>(state.momentum);
  const Scalar wd = static_cast<Scalar>(state.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<Scalar>& theta = *params[i];
    const Tensor<Scalar>& g = *grads[i];
    Tensor<Scalar>& v = state.velocity[i];
    detail::require_same_shape("sgd_step", theta, g);
    detail::require_same_shape("sgd_step", theta, v);
    v.vec() = mu * v.vec() - lr * (g.vec() + wd * theta.vec());
    theta.vec() += v.vec();
  }
}

}  // namespace parnet::nn
