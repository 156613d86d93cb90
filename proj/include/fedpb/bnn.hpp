#pragma once
// Mean-field Gaussian feed-forward networks.
//
// Every weight and bias w_i is an independent N(mu_i, softplus(rho_i)^2).
// Sampling uses the reparameterization w = mu + softplus(rho) * eps, so the
// gradient of a one-sample estimate of
//
//   J = lambda * E_Q[mean cross-entropy] + weight * KL(Q || P)
//
// with respect to (mu, rho) is an ordinary backprop through the sampled net,
// chained through dw/dmu = 1 and dw/drho = eps * sigmoid(rho), plus the
// closed-form KL gradient.
//
// Flat parameter layout, per layer in order: weights (out x in, row-major),
// then biases (out).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedpb/pacbayes.hpp"
#include "fedpb/rng.hpp"

namespace fedpb {

struct LayerShape {
  std::size_t in = 0;
  std::size_t out = 0;
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

inline std::size_t parameter_count(std::span<const LayerShape> layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.out * l.in + l.out;
  return n;
}

/// Dense stack input -> hidden... -> outputs.
inline std::vector<LayerShape> dense_layers(std::size_t inputs, std::span<const std::size_t> hidden,
                                            std::size_t outputs) {
  std::vector<LayerShape> layers;
  std::size_t prev = inputs;
  for (std::size_t h : hidden) {
    layers.push_back({prev, h});
    prev = h;
  }
  layers.push_back({prev, outputs});
  return layers;
}

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double softplus_inverse(double y) {
  if (!(y > 0.0)) throw std::invalid_argument("softplus_inverse: argument must be > 0");
  return y > 20.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

class MeanFieldNet {
 public:
  MeanFieldNet(std::vector<LayerShape> layers, std::vector<double> mu, std::vector<double> rho)
      : layers_(std::move(layers)), mu_(std::move(mu)), rho_(std::move(rho)) {
    if (layers_.empty()) throw std::invalid_argument("MeanFieldNet: no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].in == 0 || layers_[l].out == 0) {
        throw std::invalid_argument("MeanFieldNet: layer " + std::to_string(l) + " has a zero dimension");
      }
      if (l > 0 && layers_[l].in != layers_[l - 1].out) {
        throw std::invalid_argument("MeanFieldNet: layer " + std::to_string(l) +
                                    " input does not match previous output");
      }
    }
    const std::size_t n = parameter_count(layers_);
    if (mu_.size() != n || rho_.size() != n) {
      throw std::invalid_argument("MeanFieldNet: expected " + std::to_string(n) +
                                  " parameters, got mu=" + std::to_string(mu_.size()) +
                                  " rho=" + std::to_string(rho_.size()));
    }
  }

  /// Glorot-uniform means and a constant rho.
  static MeanFieldNet initialize(std::vector<LayerShape> layers, RngStream& rng, double init_rho = -3.0) {
    std::vector<double> mu;
    mu.reserve(parameter_count(layers));
    for (const auto& l : layers) {
      const double limit = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
      for (std::size_t i = 0; i < l.out * l.in; ++i) mu.push_back((2.0 * rng.uniform() - 1.0) * limit);
      for (std::size_t i = 0; i < l.out; ++i) mu.push_back(0.0);
    }
    std::vector<double> rho(mu.size(), init_rho);
    return {std::move(layers), std::move(mu), std::move(rho)};
  }

  static MeanFieldNet from_gaussian(std::vector<LayerShape> layers, const DiagonalGaussian& g) {
    std::vector<double> rho(g.dim());
    for (std::size_t i = 0; i < g.dim(); ++i) rho[i] = softplus_inverse(g.stddevs()[i]);
    return {std::move(layers), std::vector<double>(g.means().begin(), g.means().end()), std::move(rho)};
  }

  const std::vector<LayerShape>& layers() const { return layers_; }
  std::size_t size() const { return mu_.size(); }
  std::size_t input_dim() const { return layers_.front().in; }
  std::size_t output_dim() const { return layers_.back().out; }

  const std::vector<double>& mu() const { return mu_; }
  const std::vector<double>& rho() const { return rho_; }
  std::vector<double>& mu() { return mu_; }
  std::vector<double>& rho() { return rho_; }

  std::vector<double> stddevs() const {
    std::vector<double> s(rho_.size());
    std::transform(rho_.begin(), rho_.end(), s.begin(), softplus);
    return s;
  }

  DiagonalGaussian as_gaussian() const { return {mu_, stddevs()}; }

 private:
  std::vector<LayerShape> layers_;
  std::vector<double> mu_;
  std::vector<double> rho_;
};

struct NoiseDraw {
  std::vector<double> epsilon;

  static NoiseDraw draw(std::size_t n, RngStream& rng) {
    NoiseDraw noise{std::vector<double>(n)};
    for (auto& e : noise.epsilon) e = rng.normal();
    return noise;
  }
  static NoiseDraw zeros(std::size_t n) { return {std::vector<double>(n, 0.0)}; }
};

inline std::vector<double> sample_weights(const MeanFieldNet& net, const NoiseDraw& noise) {
  if (noise.epsilon.size() != net.size()) {
    throw std::invalid_argument("sample_weights: noise has " + std::to_string(noise.epsilon.size()) +
                                " entries, net has " + std::to_string(net.size()));
  }
  std::vector<double> w(net.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = net.mu()[i] + softplus(net.rho()[i]) * noise.epsilon[i];
  }
  return w;
}

/// Logits of the dense ReLU stack with the given flat weights.
inline std::vector<double> forward(std::span<const LayerShape> layers, std::span<const double> weights,
                                   std::span<const double> x) {
  if (weights.size() != parameter_count(layers)) {
    throw std::invalid_argument("forward: weight vector has wrong length");
  }
  if (x.size() != layers.front().in) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.size()) +
                                " features, network expects " + std::to_string(layers.front().in));
  }
  std::vector<double> act(x.begin(), x.end());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto [in, out] = layers[l];
    std::vector<double> next(out);
    const double* w = weights.data() + offset;
    const double* b = w + out * in;
    for (std::size_t o = 0; o < out; ++o) {
      double z = b[o];
      for (std::size_t i = 0; i < in; ++i) z += w[o * in + i] * act[i];
      next[o] = (l + 1 < layers.size()) ? std::max(z, 0.0) : z;
    }
    offset += out * in + out;
    act = std::move(next);
  }
  return act;
}

inline std::vector<double> forward(const MeanFieldNet& net, std::span<const double> weights,
                                   std::span<const double> x) {
  return forward(net.layers(), weights, x);
}

struct CrossEntropy {
  double clipped = 0.0;
  double raw = 0.0;
};

/// Softmax cross-entropy, also reported clipped to [0, c].
inline CrossEntropy clipped_cross_entropy(std::span<const double> logits, std::size_t label, double c) {
  if (label >= logits.size()) {
    throw std::invalid_argument("clipped_cross_entropy: label " + std::to_string(label) +
                                " out of range for " + std::to_string(logits.size()) + " classes");
  }
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - max_logit);
  const double raw = std::max(0.0, max_logit + std::log(sum) - logits[label]);
  return {std::min(raw, c), raw};
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct Sample {
  std::span<const double> features;
  std::size_t label = 0;
};

namespace detail {

/// Mean raw cross-entropy over the batch and its gradient w.r.t. the flat weights.
inline double cross_entropy_and_grad(std::span<const LayerShape> layers, std::span<const double> weights,
                                     std::span<const Sample> batch, std::vector<double>& grad) {
  grad.assign(weights.size(), 0.0);
  const std::size_t num_layers = layers.size();
  std::vector<std::size_t> offsets(num_layers);
  for (std::size_t l = 0, off = 0; l < num_layers; ++l) {
    offsets[l] = off;
    off += layers[l].out * layers[l].in + layers[l].out;
  }
  // acts[l] is the input to layer l; acts[num_layers] holds the logits.
  std::vector<std::vector<double>> acts(num_layers + 1);
  double total = 0.0;
  const double scale = 1.0 / static_cast<double>(batch.size());

  for (const Sample& s : batch) {
    if (s.features.size() != layers.front().in) {
      throw std::invalid_argument("objective_grad: sample has wrong feature count");
    }
    acts[0].assign(s.features.begin(), s.features.end());
    for (std::size_t l = 0; l < num_layers; ++l) {
      const auto [in, out] = layers[l];
      const double* w = weights.data() + offsets[l];
      const double* b = w + out * in;
      auto& next = acts[l + 1];
      next.assign(out, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        double z = b[o];
        for (std::size_t i = 0; i < in; ++i) z += w[o * in + i] * acts[l][i];
        next[o] = (l + 1 < num_layers) ? std::max(z, 0.0) : z;
      }
    }
    const auto& logits = acts[num_layers];
    const CrossEntropy ce = clipped_cross_entropy(logits, s.label, std::numeric_limits<double>::infinity());
    total += ce.raw;

    // delta = softmax - onehot
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    std::vector<double> delta(logits.size());
    double sum = 0.0;
    for (std::size_t o = 0; o < logits.size(); ++o) {
      delta[o] = std::exp(logits[o] - max_logit);
      sum += delta[o];
    }
    for (auto& d : delta) d /= sum;
    delta[s.label] -= 1.0;

    for (std::size_t l = num_layers; l-- > 0;) {
      const auto [in, out] = layers[l];
      const double* w = weights.data() + offsets[l];
      double* gw = grad.data() + offsets[l];
      double* gb = gw + out * in;
      const auto& input = acts[l];
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta[o] * scale;
        gb[o] += d;
        for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += d * input[i];
      }
      if (l == 0) break;
      std::vector<double> prev(in, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t i = 0; i < in; ++i) prev[i] += w[o * in + i] * delta[o];
      }
      // ReLU derivative: input[i] is the post-activation of layer l-1.
      for (std::size_t i = 0; i < in; ++i) {
        if (!(input[i] > 0.0)) prev[i] = 0.0;
      }
      delta = std::move(prev);
    }
  }
  return total * scale;
}

}  // namespace detail

struct ObjectiveGradient {
  std::vector<double> grad_mu;
  std::vector<double> grad_rho;
  double value = 0.0;      // lambda * data_loss + weight * kl
  double data_loss = 0.0;  // mean raw cross-entropy at the sampled weights
  double kl = 0.0;
};

/// One-sample reparameterized estimate of J and its exact gradient in (mu, rho).
inline ObjectiveGradient objective_grad(const MeanFieldNet& net, const DiagonalGaussian& prior,
                                        std::span<const Sample> batch, double lambda, double weight,
                                        const NoiseDraw& noise) {
  if (prior.dim() != net.size()) {
    throw std::invalid_argument("objective_grad: prior has dimension " + std::to_string(prior.dim()) +
                                ", net has " + std::to_string(net.size()) + " parameters");
  }
  if (batch.empty()) throw std::invalid_argument("objective_grad: empty batch");
  const std::vector<double> w = sample_weights(net, noise);

  ObjectiveGradient out;
  std::vector<double> grad_w;
  out.data_loss = detail::cross_entropy_and_grad(net.layers(), w, batch, grad_w);

  const std::size_t n = net.size();
  out.grad_mu.resize(n);
  out.grad_rho.resize(n);
  const auto mp = prior.means(), sp = prior.stddevs();
  const auto& mu = net.mu();
  const auto& rho = net.rho();
  for (std::size_t i = 0; i < n; ++i) {
    const double sigma = softplus(rho[i]);
    const double prior_var = sp[i] * sp[i];
    const double kl_dmu = (mu[i] - mp[i]) / prior_var;
    const double kl_dsigma = sigma / prior_var - 1.0 / sigma;
    out.grad_mu[i] = lambda * grad_w[i] + weight * kl_dmu;
    out.grad_rho[i] = (lambda * grad_w[i] * noise.epsilon[i] + weight * kl_dsigma) * sigmoid(rho[i]);
  }
  out.kl = kl_diag_gaussian(net.as_gaussian(), prior);
  out.value = lambda * out.data_loss + weight * out.kl;
  return out;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam update, in place.
inline void adam_step(std::span<double> params, AdamState& state, std::span<const double> grads,
                      double learning_rate, const AdamConfig& cfg = {}) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: size mismatch");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

/// Adam moments for both halves of a mean-field net.
struct NetOptimizer {
  AdamState mu;
  AdamState rho;

  NetOptimizer() = default;
  explicit NetOptimizer(std::size_t n) : mu(n), rho(n) {}

  void step(MeanFieldNet& net, std::span<const double> grad_mu, std::span<const double> grad_rho,
            double learning_rate, const AdamConfig& cfg = {}) {
    adam_step(net.mu(), mu, grad_mu, learning_rate, cfg);
    adam_step(net.rho(), rho, grad_rho, learning_rate, cfg);
  }
};

}  // namespace fedpb
