#include "retgate/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "retgate/error.hpp"

namespace retgate {

namespace {

std::vector<std::size_t> chain(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t output_dim) {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(output_dim);
  return dims;
}

}  // namespace

Mlp Mlp::zeros(std::size_t input_dim, std::span<const std::size_t> hidden_dims, std::size_t output_dim) {
  const auto dims = chain(input_dim, hidden_dims, output_dim);
  Mlp net;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(dims[l]);
    const auto out = static_cast<Eigen::Index>(dims[l + 1]);
    net.weights.push_back(Eigen::MatrixXd::Zero(out, in));
    net.biases.push_back(Eigen::VectorXd::Zero(out));
  }
  return net;
}

Mlp Mlp::init_uniform(std::size_t input_dim, std::span<const std::size_t> hidden_dims, std::size_t output_dim,
                      Rng& rng) {
  Mlp net = zeros(input_dim, hidden_dims, output_dim);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.weights[l].cols()));
    // Row-major fill so the draw order matches the serialized layout.
    for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c) net.weights[l](r, c) = rng.uniform(-bound, bound);
    }
    for (Eigen::Index r = 0; r < net.biases[l].size(); ++r) net.biases[l](r) = rng.uniform(-bound, bound);
  }
  return net;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  }
  return n;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& inputs) const {
  Eigen::MatrixXd a = inputs;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Eigen::MatrixXd z = weights[l] * a;
    z.colwise() += biases[l];
    if (l + 1 < weights.size()) {
      a = z.cwiseMax(0.0);
    } else {
      return z;
    }
  }
  return a;
}

double weighted_cross_entropy(const Mlp& net, const Eigen::MatrixXd& inputs, std::span<const int> labels,
                              const std::array<double, 4>& class_weights, Mlp* grad, const DropoutMasks* masks) {
  const std::size_t n_layers = net.weights.size();
  const Eigen::Index batch = inputs.cols();
  if (static_cast<std::size_t>(batch) != labels.size()) throw ValidationError("label count does not match batch");
  if (batch == 0) throw ValidationError("empty batch");

  // Forward, keeping pre-activations and (masked) activations for backprop.
  std::vector<Eigen::MatrixXd> acts{inputs};
  std::vector<Eigen::MatrixXd> pre;
  for (std::size_t l = 0; l < n_layers; ++l) {
    Eigen::MatrixXd z = net.weights[l] * acts.back();
    z.colwise() += net.biases[l];
    pre.push_back(z);
    if (l + 1 < n_layers) {
      Eigen::MatrixXd a = z.cwiseMax(0.0);
      if (masks != nullptr) a.array() *= (*masks)[l].array();
      acts.push_back(std::move(a));
    }
  }

  const Eigen::MatrixXd& logits = pre.back();
  const double inv_batch = 1.0 / static_cast<double>(batch);
  double loss = 0.0;
  Eigen::MatrixXd delta(logits.rows(), batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    const double w = class_weights[static_cast<std::size_t>(y)];
    const double m = logits.col(i).maxCoeff();
    const Eigen::VectorXd shifted = logits.col(i).array() - m;
    const double log_sum = std::log(shifted.array().exp().sum());
    loss -= w * (shifted(y) - log_sum);
    if (grad != nullptr) {
      delta.col(i) = (shifted.array() - log_sum).exp();
      delta(y, i) -= 1.0;
      delta.col(i) *= w * inv_batch;
    }
  }
  loss *= inv_batch;
  if (grad == nullptr) return loss;

  grad->weights.resize(n_layers);
  grad->biases.resize(n_layers);
  for (std::size_t l = n_layers; l-- > 0;) {
    grad->weights[l] = delta * acts[l].transpose();
    grad->biases[l] = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back = net.weights[l].transpose() * delta;
    back.array() *= (pre[l - 1].array() > 0.0).cast<double>();
    if (masks != nullptr) back.array() *= (*masks)[l - 1].array();
    delta = std::move(back);
  }
  return loss;
}

std::array<double, 4> softmax(const std::array<double, 4>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::array<double, 4> out{};
  double sum = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    out[k] = std::exp(logits[k] - m);
    sum += out[k];
  }
  for (auto& p : out) p /= sum;
  return out;
}

}  // namespace retgate
