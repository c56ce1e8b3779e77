#pragma once

// Batch losses between student outputs and teacher outputs, and their
// gradients with respect to the student outputs. All losses are means over
// the batch of a per-sample value summed over output components.
//
//   mse                   sum_o (y - t)^2
//   cross_entropy_logits  sum_i softmax(t)_i * (-log softmax(y)_i)
//   pnorm(p)              sum_o |y - t|^p
//
// For cross-entropy the teacher's exact output distribution is the target;
// nothing is sampled from it.

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "mscale/errors.hpp"
#include "mscale/mlp.hpp"

namespace mscale {

enum class LossKind { mse, cross_entropy_logits, pnorm };

struct Loss {
  LossKind kind = LossKind::mse;
  double p = 2.0;  // pnorm exponent

  static Loss mse() { return {LossKind::mse, 2.0}; }
  static Loss cross_entropy() { return {LossKind::cross_entropy_logits, 1.0}; }
  static Loss pnorm(double p) {
    if (!(p > 0.0) || !std::isfinite(p)) throw ValidationError("pnorm exponent must be > 0");
    return {LossKind::pnorm, p};
  }
};

inline std::string to_string(const Loss& l) {
  switch (l.kind) {
    case LossKind::mse: return "mse";
    case LossKind::cross_entropy_logits: return "cross_entropy_logits";
    case LossKind::pnorm: return "pnorm";
  }
  return "?";
}

inline Loss loss_from_string(const std::string& name, double p = 2.0) {
  if (name == "mse") return Loss::mse();
  if (name == "cross_entropy_logits" || name == "ce" || name == "cross_entropy") return Loss::cross_entropy();
  if (name == "pnorm") return Loss::pnorm(p);
  throw ValidationError("unknown loss kind '" + name + "'");
}

namespace detail {

inline void check_loss_shapes(const Loss& loss, const Matrix& out, const Matrix& target) {
  if (out.rows() != target.rows() || out.cols() != target.cols())
    throw ValidationError("student and teacher outputs differ in shape");
  if (out.rows() == 0) throw ValidationError("empty batch");
  if (loss.kind == LossKind::cross_entropy_logits && out.cols() < 2)
    throw ValidationError("cross-entropy needs at least 2 logits");
  if (!out.allFinite() || !target.allFinite()) throw TrainingFault("non-finite network outputs");
}

/// Row-wise log-softmax with max shift.
inline Matrix log_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    double s = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) s += std::exp(logits(r, c) - m);
    const double lse = m + std::log(s);
    for (Eigen::Index c = 0; c < logits.cols(); ++c) out(r, c) = logits(r, c) - lse;
  }
  return out;
}

}  // namespace detail

/// Per-sample loss values (length = batch size).
inline Vector per_sample_loss(const Loss& loss, const Matrix& out, const Matrix& target) {
  detail::check_loss_shapes(loss, out, target);
  switch (loss.kind) {
    case LossKind::mse: return (out - target).array().square().rowwise().sum();
    case LossKind::pnorm: return (out - target).array().abs().pow(loss.p).rowwise().sum();
    case LossKind::cross_entropy_logits: {
      const Matrix lq = detail::log_softmax(out);
      const Matrix lp = detail::log_softmax(target);
      return -(lp.array().exp() * lq.array()).rowwise().sum();
    }
  }
  throw ValidationError("unknown loss");
}

inline double loss_value(const Loss& loss, const Matrix& out, const Matrix& target) {
  return per_sample_loss(loss, out, target).mean();
}

/// Per-sample KL(softmax(teacher) || softmax(student)).
inline Vector per_sample_kl(const Matrix& student_logits, const Matrix& teacher_logits) {
  detail::check_loss_shapes(Loss::cross_entropy(), student_logits, teacher_logits);
  const Matrix lq = detail::log_softmax(student_logits);
  const Matrix lp = detail::log_softmax(teacher_logits);
  return (lp.array().exp() * (lp.array() - lq.array())).rowwise().sum();
}

/// Per-sample entropy of softmax(logits).
inline Vector per_sample_entropy(const Matrix& logits) {
  const Matrix lp = detail::log_softmax(logits);
  return -(lp.array().exp() * lp.array()).rowwise().sum();
}

/// d(mean loss)/d(out). The pnorm kink at y = t gets subgradient 0.
inline void loss_gradient_into(const Loss& loss, const Matrix& out, const Matrix& target, Matrix& grad) {
  detail::check_loss_shapes(loss, out, target);
  const double inv_b = 1.0 / static_cast<double>(out.rows());
  switch (loss.kind) {
    case LossKind::mse:
      grad = (2.0 * inv_b) * (out - target);
      return;
    case LossKind::pnorm: {
      grad.resize(out.rows(), out.cols());
      const double p = loss.p;
      for (Eigen::Index j = 0; j < out.cols(); ++j)
        for (Eigen::Index i = 0; i < out.rows(); ++i) {
          const double r = out(i, j) - target(i, j);
          grad(i, j) = r == 0.0 ? 0.0 : inv_b * p * std::pow(std::abs(r), p - 1.0) * (r > 0.0 ? 1.0 : -1.0);
        }
      return;
    }
    case LossKind::cross_entropy_logits: {
      const Matrix q = detail::log_softmax(out).array().exp();
      const Matrix pt = detail::log_softmax(target).array().exp();
      grad = inv_b * (q - pt);
      return;
    }
  }
}

inline Matrix loss_gradient(const Loss& loss, const Matrix& out, const Matrix& target) {
  Matrix g;
  loss_gradient_into(loss, out, target, g);
  return g;
}

}  // namespace mscale
