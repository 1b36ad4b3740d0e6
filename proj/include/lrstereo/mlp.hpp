#pragma once

// Small fully connected network: tanh hidden layers, linear output, optional
// additive input->output skip. Samples are processed column-wise.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lrstereo/errors.hpp"

namespace lrstereo {

struct Mlp {
  std::vector<int> layer_sizes;
  std::vector<Eigen::MatrixXd> weights;  // weights[l] is sizes[l+1] x sizes[l]
  std::vector<Eigen::VectorXd> biases;
  /// Adds the input to the output; requires equal input and output widths.
  bool skip = false;

  int input_size() const { return layer_sizes.empty() ? 0 : layer_sizes.front(); }
  int output_size() const { return layer_sizes.empty() ? 0 : layer_sizes.back(); }
  std::size_t layer_count() const { return weights.size(); }

  void validate() const {
    if (layer_sizes.size() < 2 || weights.size() != layer_sizes.size() - 1 || biases.size() != weights.size()) {
      throw Error(ErrorCode::DimensionMismatch, "MLP needs at least one weight layer with matching biases");
    }
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rows() != layer_sizes[l + 1] || weights[l].cols() != layer_sizes[l] ||
          biases[l].size() != layer_sizes[l + 1]) {
        throw Error(ErrorCode::DimensionMismatch, "MLP layer " + std::to_string(l) + " has incompatible shape");
      }
    }
    if (skip && input_size() != output_size()) {
      throw Error(ErrorCode::DimensionMismatch, "skip connection needs equal input and output widths");
    }
  }

  /// All parameters zero.
  static Mlp zeros(std::vector<int> sizes, bool skip = false) {
    Mlp net;
    net.layer_sizes = std::move(sizes);
    net.skip = skip;
    for (std::size_t l = 0; l + 1 < net.layer_sizes.size(); ++l) {
      net.weights.push_back(Eigen::MatrixXd::Zero(net.layer_sizes[l + 1], net.layer_sizes[l]));
      net.biases.push_back(Eigen::VectorXd::Zero(net.layer_sizes[l + 1]));
    }
    net.validate();
    return net;
  }

  /// Glorot-uniform hidden weights, zero biases. With zero_final the last
  /// layer starts at zero so the initial output is exactly 0 (or the input,
  /// with skip).
  static Mlp seeded(std::vector<int> sizes, std::uint64_t seed, bool zero_final, bool skip = false) {
    Mlp net = zeros(std::move(sizes), skip);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const std::size_t trained = zero_final ? net.weights.size() - 1 : net.weights.size();
    for (std::size_t l = 0; l < trained; ++l) {
      const double limit = std::sqrt(6.0 / (net.layer_sizes[l] + net.layer_sizes[l + 1]));
      for (Eigen::Index i = 0; i < net.weights[l].size(); ++i) net.weights[l].data()[i] = limit * unit(rng);
    }
    return net;
  }
};

/// Post-activation values per layer; activations[0] is the input batch.
struct MlpCache {
  std::vector<Eigen::MatrixXd> activations;

  const Eigen::MatrixXd& output() const { return activations.back(); }
};

struct MlpGradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Eigen::MatrixXd input;  // d loss / d input, one column per sample
};

inline MlpCache mlp_forward_cached(const Mlp& net, const Eigen::MatrixXd& x) {
  net.validate();
  if (x.rows() != net.input_size()) {
    throw Error(ErrorCode::DimensionMismatch, "input has " + std::to_string(x.rows()) + " rows, expected " +
                                                  std::to_string(net.input_size()));
  }
  MlpCache cache;
  cache.activations.reserve(net.weights.size() + 1);
  cache.activations.push_back(x);
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    Eigen::MatrixXd z = net.weights[l] * cache.activations.back();
    z.colwise() += net.biases[l];
    const bool last = l + 1 == net.weights.size();
    if (!last) {
      z = z.array().tanh().matrix();
    } else if (net.skip) {
      z += x;
    }
    cache.activations.push_back(std::move(z));
  }
  return cache;
}

inline Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& x) {
  return mlp_forward_cached(net, x).output();
}

inline Eigen::VectorXd mlp_forward(const Mlp& net, const Eigen::VectorXd& x) {
  return mlp_forward_cached(net, Eigen::MatrixXd(x)).output().col(0);
}

/// Reverse-mode gradients of sum_k upstream(:,k) . output(:,k) summed over
/// the batch.
inline MlpGradients mlp_gradients(const Mlp& net, const MlpCache& cache, const Eigen::MatrixXd& upstream) {
  net.validate();
  if (cache.activations.size() != net.weights.size() + 1) {
    throw Error(ErrorCode::DimensionMismatch, "cache does not belong to this network");
  }
  if (upstream.rows() != net.output_size() || upstream.cols() != cache.output().cols()) {
    throw Error(ErrorCode::DimensionMismatch, "upstream gradient shape does not match the output batch");
  }
  const std::size_t n_layers = net.weights.size();
  MlpGradients g;
  g.weights.resize(n_layers);
  g.biases.resize(n_layers);
  Eigen::MatrixXd delta = upstream;  // gradient w.r.t. pre-activation of the current layer
  for (std::size_t l = n_layers; l-- > 0;) {
    g.weights[l] = delta * cache.activations[l].transpose();
    g.biases[l] = delta.rowwise().sum();
    Eigen::MatrixXd back = net.weights[l].transpose() * delta;
    if (l > 0) {
      back.array() *= 1.0 - cache.activations[l].array().square();
    }
    delta = std::move(back);
  }
  g.input = std::move(delta);
  if (net.skip) g.input += upstream;
  return g;
}

struct AdamSettings {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
        !(epsilon > 0.0)) {
      throw Error(ErrorCode::ConfigError, "ADAM needs lr > 0, betas in [0,1), epsilon > 0");
    }
  }
};

/// First and second moment estimates for every parameter of one network.
class Adam {
 public:
  Adam(const Mlp& net, AdamSettings settings) : settings_(settings) {
    settings_.validate();
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      mw_.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
      vw_.push_back(mw_.back());
      mb_.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
      vb_.push_back(mb_.back());
    }
  }

  void step(Mlp& net, const MlpGradients& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(settings_.beta1, t_);
    const double c2 = 1.0 - std::pow(settings_.beta2, t_);
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      update(net.weights[l], g.weights[l], mw_[l], vw_[l], c1, c2);
      update(net.biases[l], g.biases[l], mb_[l], vb_[l], c1, c2);
    }
  }

  int steps_taken() const { return t_; }

 private:
  template <typename M>
  void update(M& param, const M& grad, M& m, M& v, double c1, double c2) const {
    m = settings_.beta1 * m + (1.0 - settings_.beta1) * grad;
    v = settings_.beta2 * v + (1.0 - settings_.beta2) * grad.cwiseAbs2();
    param.array() -= settings_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + settings_.epsilon);
  }

  AdamSettings settings_;
  std::vector<Eigen::MatrixXd> mw_, vw_;
  std::vector<Eigen::VectorXd> mb_, vb_;
  int t_ = 0;
};

}  // namespace lrstereo
