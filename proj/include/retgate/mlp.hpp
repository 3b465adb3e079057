#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "retgate/rng.hpp"

namespace retgate {

/// Binary64 ReLU MLP used during training. Columns of an input matrix are
/// samples; the final layer emits one logit per outcome class.
struct Mlp {
  std::vector<Eigen::MatrixXd> weights;  // (out, in)
  std::vector<Eigen::VectorXd> biases;

  static Mlp zeros(std::size_t input_dim, std::span<const std::size_t> hidden_dims, std::size_t output_dim);
  /// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static Mlp init_uniform(std::size_t input_dim, std::span<const std::size_t> hidden_dims,
                          std::size_t output_dim, Rng& rng);

  std::size_t num_layers() const { return weights.size(); }
  std::size_t parameter_count() const;
  /// Visits every parameter as a mutable reference, layer by layer, weights
  /// (column-major) before biases.
  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (Eigen::Index i = 0; i < weights[l].size(); ++i) fn(weights[l].data()[i]);
      for (Eigen::Index i = 0; i < biases[l].size(); ++i) fn(biases[l].data()[i]);
    }
  }

  /// Logits for every column of `inputs`, no dropout.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;
};

/// Per-hidden-layer multiplicative masks, (units, batch) each.
using DropoutMasks = std::vector<Eigen::MatrixXd>;

/// Class-weighted cross-entropy
///   L = -(1/B) * sum_i w[y_i] * log softmax(f(x_i))[y_i]
/// over the columns of `inputs`. When `grad` is non-null it receives dL/dθ
/// in the same layout as `net`.
double weighted_cross_entropy(const Mlp& net, const Eigen::MatrixXd& inputs, std::span<const int> labels,
                              const std::array<double, 4>& class_weights, Mlp* grad = nullptr,
                              const DropoutMasks* masks = nullptr);

/// Numerically stable softmax (max-subtracted).
std::array<double, 4> softmax(const std::array<double, 4>& logits);

}  // namespace retgate
