#pragma once

#include "mscale/loss.hpp"
#include "mscale/mlp.hpp"

namespace mscale {

/// Scratch buffers reused across steps to keep the training loop free of
/// per-step allocations after the first one.
struct BackpropWorkspace {
  ForwardTrace trace;
  Matrix delta;
  Matrix delta_prev;
};

/// Exact gradient of the mean batch loss with respect to every parameter,
/// written into `grad` using the flat parameter layout. Returns the loss.
inline double backward_into(const Mlp& net, const Matrix& batch, const Loss& loss, const Matrix& target,
                            Vector& grad, BackpropWorkspace& ws) {
  forward_into(net, batch, ws.trace);
  const Matrix& out = ws.trace.output();
  const double value = loss_value(loss, out, target);
  if (!std::isfinite(value)) throw TrainingFault("non-finite loss");
  loss_gradient_into(loss, out, target, ws.delta);

  grad.resize(static_cast<Eigen::Index>(net.param_count()));
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const Matrix& input = ws.trace.activations[l];
    Eigen::Map<Matrix> gw(grad.data() + net.weight_offset(l), net.layer_sizes()[l + 1], net.layer_sizes()[l]);
    Eigen::Map<Vector> gb(grad.data() + net.bias_offset(l), net.layer_sizes()[l + 1]);
    gw.noalias() = ws.delta.transpose() * input;
    gb = ws.delta.colwise().sum().transpose();
    if (l > 0) {
      ws.delta_prev.noalias() = ws.delta * net.weight(l);
      ws.delta_prev.array() *= (ws.trace.pre[l - 1].array() > 0.0).cast<double>();
      std::swap(ws.delta, ws.delta_prev);
    }
  }
  if (!grad.allFinite()) throw TrainingFault("non-finite gradient");
  return value;
}

inline Vector backward(const Mlp& net, const Matrix& batch, const Loss& loss, const Matrix& target) {
  Vector g;
  BackpropWorkspace ws;
  backward_into(net, batch, loss, target, g, ws);
  return g;
}

}  // namespace mscale
