#pragma once

// Online student training: every step draws a fresh batch from the target's
// input distribution, so there is no finite dataset to overfit.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mscale/adam.hpp"
#include "mscale/backprop.hpp"
#include "mscale/errors.hpp"
#include "mscale/loss.hpp"
#include "mscale/mlp.hpp"
#include "mscale/rng.hpp"
#include "mscale/text_io.hpp"

namespace mscale {

/// A fixed function to imitate together with its input distribution.
template <typename T>
concept TargetFunction = requires(const T& t, Rng& rng, const Matrix& x, std::size_t n) {
  { t.input_dim() } -> std::convertible_to<int>;
  { t.output_dim() } -> std::convertible_to<int>;
  { t.sample_inputs(rng, n) } -> std::convertible_to<Matrix>;
  { t.evaluate(x) } -> std::convertible_to<Matrix>;
};

struct ScheduleSegment {
  long long steps = 1;
  std::size_t batch_size = 200;
  double learning_rate = 0.01;
};

struct TrainConfig {
  std::vector<ScheduleSegment> segments;
  Loss loss;
  std::uint64_t seed = 0;
  std::size_t eval_samples = 100000;
  std::size_t eval_chunk = 10000;
  long long trace_every = 100;
  /// Seed of the held-out evaluation inputs; derived from `seed` when unset.
  std::optional<std::uint64_t> eval_seed;

  long long total_steps() const {
    long long n = 0;
    for (const auto& s : segments) n += s.steps;
    return n;
  }

  void validate() const {
    if (segments.empty()) throw ValidationError("training schedule has no segments");
    for (const auto& s : segments) {
      if (s.steps < 1) throw ValidationError("schedule segment needs steps >= 1");
      if (s.batch_size < 1) throw ValidationError("schedule segment needs batch_size >= 1");
      if (!(s.learning_rate > 0.0) || !std::isfinite(s.learning_rate))
        throw ValidationError("schedule segment needs learning_rate > 0");
    }
    if (loss.kind == LossKind::pnorm && !(loss.p > 0.0)) throw ValidationError("pnorm exponent must be > 0");
    if (eval_samples < 2) throw ValidationError("evaluation needs at least 2 samples");
    if (eval_chunk < 1) throw ValidationError("evaluation chunk must be >= 1");
    if (trace_every < 1) throw ValidationError("trace interval must be >= 1");
  }
};

struct TraceRow {
  long long step = 0;     // last step of the window
  double loss = 0.0;      // mean training loss over the window
  double learning_rate = 0.0;
  std::size_t batch_size = 0;
};

inline std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = "step,loss,lr,batch_size\n";
  for (const auto& r : trace)
    out += std::to_string(r.step) + "," + format_double(r.loss) + "," + format_double(r.learning_rate) + "," +
           std::to_string(r.batch_size) + "\n";
  return out;
}

/// Training diverged; carries the trace recorded so far.
class DivergenceError : public TrainingFault {
 public:
  DivergenceError(const std::string& what, std::vector<TraceRow> trace)
      : TrainingFault(what), trace_(std::move(trace)) {}
  const std::vector<TraceRow>& trace() const noexcept { return trace_; }

 private:
  std::vector<TraceRow> trace_;
};

struct EvalResult {
  double loss = 0.0;      // mean of the configured loss
  double loss_se = 0.0;   // standard error of that mean
  /// KL(teacher || student) for cross-entropy, else equal to `loss`.
  double excess = 0.0;
  double excess_se = 0.0;
  std::optional<double> teacher_entropy;
};

struct TrainResult {
  Mlp net;
  EvalResult eval;
  std::vector<TraceRow> trace;

  /// The quantity that scales as a power law in N: KL for cross-entropy
  /// (cross-entropy minus the teacher entropy), the loss itself otherwise.
  double fit_loss() const { return eval.excess; }
};

namespace detail {
struct RunningMean {
  double sum = 0.0, sumsq = 0.0;
  std::size_t n = 0;
  void add(const Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      sum += v[i];
      sumsq += v[i] * v[i];
    }
    n += static_cast<std::size_t>(v.size());
  }
  double mean() const { return sum / static_cast<double>(n); }
  double se() const {
    const double m = mean();
    const double var = std::max(0.0, (sumsq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1));
    return std::sqrt(var / static_cast<double>(n));
  }
};
}  // namespace detail

/// Mean loss on `samples` fresh inputs drawn with `seed`.
template <TargetFunction Target>
EvalResult evaluate_student(const Mlp& student, const Target& teacher, const Loss& loss, std::size_t samples,
                            std::uint64_t seed, std::size_t chunk = 10000) {
  Rng rng(seed);
  detail::RunningMean l, ex, ent;
  for (std::size_t done = 0; done < samples;) {
    const std::size_t b = std::min(chunk, samples - done);
    const Matrix x = teacher.sample_inputs(rng, b);
    const Matrix t = teacher.evaluate(x);
    const Matrix y = forward(student, x);
    l.add(per_sample_loss(loss, y, t));
    if (loss.kind == LossKind::cross_entropy_logits) {
      ex.add(per_sample_kl(y, t));
      ent.add(per_sample_entropy(t));
    }
    done += b;
  }
  EvalResult r;
  r.loss = l.mean();
  r.loss_se = l.se();
  if (loss.kind == LossKind::cross_entropy_logits) {
    r.excess = ex.mean();
    r.excess_se = ex.se();
    r.teacher_entropy = ent.mean();
  } else {
    r.excess = r.loss;
    r.excess_se = r.loss_se;
  }
  if (!std::isfinite(r.loss)) throw TrainingFault("non-finite evaluation loss");
  return r;
}

/// Runs the segment schedule with ADAM, then evaluates on a held-out batch.
template <TargetFunction Target>
TrainResult train(Mlp student, const Target& teacher, const TrainConfig& config) {
  config.validate();
  if (student.input_dim() != teacher.input_dim())
    throw ValidationError("student input dimension " + std::to_string(student.input_dim()) +
                          " does not match teacher input dimension " + std::to_string(teacher.input_dim()));
  if (student.output_dim() != teacher.output_dim()) throw ValidationError("student and teacher output dimensions differ");

  Rng data_rng(derive_seed(config.seed, {0x7261696eULL}));
  AdamState adam(static_cast<Eigen::Index>(student.param_count()));
  BackpropWorkspace ws;
  Vector grad;
  std::vector<TraceRow> trace;

  long long step = 0;
  for (const auto& seg : config.segments) {
    double window_sum = 0.0;
    long long window_n = 0;
    for (long long s = 0; s < seg.steps; ++s) {
      const Matrix x = teacher.sample_inputs(data_rng, seg.batch_size);
      const Matrix t = teacher.evaluate(x);
      double value;
      try {
        value = backward_into(student, x, config.loss, t, grad, ws);
        adam_step(adam, student.params(), grad, seg.learning_rate);
        if (!student.params().allFinite()) throw TrainingFault("non-finite parameters");
      } catch (const TrainingFault& e) {
        throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step + 1), std::move(trace));
      }
      ++step;
      window_sum += value;
      ++window_n;
      if (window_n == config.trace_every || s + 1 == seg.steps) {
        trace.push_back({step, window_sum / static_cast<double>(window_n), seg.learning_rate, seg.batch_size});
        window_sum = 0.0;
        window_n = 0;
      }
    }
  }

  TrainResult result;
  result.eval = evaluate_student(student, teacher, config.loss, config.eval_samples,
                                 config.eval_seed.value_or(derive_seed(config.seed, {0x6576616cULL})),
                                 config.eval_chunk);
  result.net = std::move(student);
  result.trace = std::move(trace);
  return result;
}

}  // namespace mscale
