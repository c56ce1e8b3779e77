#pragma once

// Fully connected ReLU networks with all parameters in one contiguous vector.
//
// Flat layout, layer by layer: the weight matrix [fan_out x fan_in] in
// column-major order, followed by the bias vector [fan_out]. Batches are
// matrices with one sample per row.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mscale/errors.hpp"
#include "mscale/rng.hpp"
#include "mscale/text_io.hpp"

namespace mscale {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// N = sum over layers of (fan_in + 1) * fan_out.
inline std::size_t param_count(const std::vector<int>& layer_sizes) {
  std::size_t n = 0;
  for (std::size_t l = 1; l < layer_sizes.size(); ++l)
    n += static_cast<std::size_t>(layer_sizes[l - 1] + 1) * static_cast<std::size_t>(layer_sizes[l]);
  return n;
}

inline void validate_layer_sizes(const std::vector<int>& layer_sizes) {
  if (layer_sizes.size() < 2) throw ValidationError("a network needs at least an input and an output layer");
  for (int s : layer_sizes)
    if (s < 1) throw ValidationError("layer sizes must be >= 1");
}

class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
    validate_layer_sizes(sizes_);
    offsets_.reserve(sizes_.size());
    std::size_t off = 0;
    for (std::size_t l = 1; l < sizes_.size(); ++l) {
      offsets_.push_back(off);
      off += static_cast<std::size_t>(sizes_[l - 1] + 1) * static_cast<std::size_t>(sizes_[l]);
    }
    params_ = Vector::Zero(static_cast<Eigen::Index>(off));
  }

  const std::vector<int>& layer_sizes() const noexcept { return sizes_; }
  std::size_t num_layers() const noexcept { return sizes_.size() - 1; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  std::size_t param_count() const noexcept { return static_cast<std::size_t>(params_.size()); }

  Vector& params() noexcept { return params_; }
  const Vector& params() const noexcept { return params_; }

  Eigen::Map<Matrix> weight(std::size_t l) { return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]}; }
  Eigen::Map<const Matrix> weight(std::size_t l) const {
    return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<Vector> bias(std::size_t l) { return {params_.data() + bias_offset(l), sizes_[l + 1]}; }
  Eigen::Map<const Vector> bias(std::size_t l) const { return {params_.data() + bias_offset(l), sizes_[l + 1]}; }

  std::size_t weight_offset(std::size_t l) const { return offsets_[l]; }
  std::size_t bias_offset(std::size_t l) const {
    return offsets_[l] + static_cast<std::size_t>(sizes_[l]) * static_cast<std::size_t>(sizes_[l + 1]);
  }

  bool operator==(const Mlp& o) const { return sizes_ == o.sizes_ && params_ == o.params_; }

 private:
  std::vector<int> sizes_;
  std::vector<std::size_t> offsets_;
  Vector params_;
};

enum class WeightInit {
  fan_in_gaussian,  // N(0, 1/fan_in), biases zero
  zero,
};

inline Mlp init_mlp(const std::vector<int>& layer_sizes, std::uint64_t seed,
                    WeightInit rule = WeightInit::fan_in_gaussian) {
  Mlp net(layer_sizes);
  if (rule == WeightInit::zero) return net;
  Rng rng(seed);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    auto w = net.weight(l);
    const double sd = 1.0 / std::sqrt(static_cast<double>(layer_sizes[l]));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = sd * rng.normal();
  }
  return net;
}

/// Pre-activations and activations of every layer for one batch.
/// activations[0] is the input, activations[l] the output of layer l
/// (post-ReLU for hidden layers, identity for the last).
struct ForwardTrace {
  std::vector<Matrix> pre;
  std::vector<Matrix> activations;

  const Matrix& output() const { return activations.back(); }
  /// Last hidden layer. Requires at least one hidden layer.
  const Matrix& prefinal() const { return activations[activations.size() - 2]; }
};

inline void check_batch(const Mlp& net, const Matrix& batch) {
  if (batch.cols() != net.input_dim())
    throw ValidationError("batch has " + std::to_string(batch.cols()) + " features, network expects " +
                          std::to_string(net.input_dim()));
}

inline void forward_into(const Mlp& net, const Matrix& batch, ForwardTrace& tr) {
  check_batch(net, batch);
  const std::size_t layers = net.num_layers();
  tr.pre.resize(layers);
  tr.activations.resize(layers + 1);
  tr.activations[0] = batch;
  for (std::size_t l = 0; l < layers; ++l) {
    auto& z = tr.pre[l];
    z.noalias() = tr.activations[l] * net.weight(l).transpose();
    z.rowwise() += net.bias(l).transpose();
    if (l + 1 < layers)
      tr.activations[l + 1] = z.cwiseMax(0.0);
    else
      tr.activations[l + 1] = z;
  }
}

inline ForwardTrace forward_trace(const Mlp& net, const Matrix& batch) {
  ForwardTrace tr;
  forward_into(net, batch, tr);
  return tr;
}

/// Network outputs only.
inline Matrix forward(const Mlp& net, const Matrix& batch) {
  check_batch(net, batch);
  Matrix a = batch;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    Matrix z = a * net.weight(l).transpose();
    z.rowwise() += net.bias(l).transpose();
    a = (l + 1 < net.num_layers()) ? Matrix(z.cwiseMax(0.0)) : z;
  }
  return a;
}

/// Activations of the last hidden layer.
inline Matrix prefinal_activations(const Mlp& net, const Matrix& batch) {
  if (net.num_layers() < 2) throw ValidationError("network has no hidden layer");
  return forward_trace(net, batch).prefinal();
}

inline nlohmann::ordered_json to_json(const Mlp& net) {
  nlohmann::ordered_json j;
  j["layer_sizes"] = net.layer_sizes();
  j["layout"] = "per layer: weights column-major [fan_out x fan_in], then bias [fan_out]";
  j["param_count"] = net.param_count();
  // Shortest round-trip strings keep the checkpoint bit-exact.
  auto arr = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < net.params().size(); ++i) arr.push_back(format_double(net.params()[i]));
  j["params"] = std::move(arr);
  return j;
}

inline Mlp mlp_from_json(const nlohmann::ordered_json& j) {
  try {
    Mlp net(j.at("layer_sizes").get<std::vector<int>>());
    const auto& arr = j.at("params");
    if (arr.size() != net.param_count())
      throw ParseError("checkpoint has " + std::to_string(arr.size()) + " parameters, shape needs " +
                       std::to_string(net.param_count()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
      double v;
      if (!parse_double(arr[i].get<std::string>(), v) || !std::isfinite(v))
        throw ParseError("checkpoint parameter " + std::to_string(i) + " is malformed");
      net.params()[static_cast<Eigen::Index>(i)] = v;
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed network checkpoint: ") + e.what());
  }
}

}  // namespace mscale
