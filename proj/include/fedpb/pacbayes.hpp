#pragma once
/*
Federated PAC-Bayes arithmetic.

For K clients with posteriors Q_k, priors P_k and aggregation weights p(k),
with a loss bounded in [0, C] and n samples per client, the population risk
is bounded with probability at least 1 - delta by

  empirical + (sum_k p(k) KL(Q_k || P_k) + ln(1/delta)) / lambda
            + lambda C^2 / (8 K n)

for a fixed lambda > 0. Taking a union over a finite grid Xi of lambdas and
plugging in the minimizer

  lambda* = sqrt(8 K n (kl + ln(|Xi|/delta))) / C

gives the lambda-free complexity C sqrt((kl + ln(|Xi|/delta)) / (2 K n)).

All logarithms are natural. Everything in this header is a pure function.
*/

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedpb {

/// Factorized Gaussian N(means, diag(stddevs^2)); the form of every prior and posterior.
class DiagonalGaussian {
 public:
  DiagonalGaussian(std::vector<double> means, std::vector<double> stddevs)
      : means_(std::move(means)), stddevs_(std::move(stddevs)) {
    if (means_.empty()) throw std::invalid_argument("DiagonalGaussian: dimension must be >= 1");
    if (means_.size() != stddevs_.size()) {
      throw std::invalid_argument("DiagonalGaussian: means has length " +
                                  std::to_string(means_.size()) + " but stddevs has length " +
                                  std::to_string(stddevs_.size()));
    }
    for (std::size_t i = 0; i < stddevs_.size(); ++i) {
      if (!(stddevs_[i] > 0.0) || !std::isfinite(stddevs_[i])) {
        throw std::invalid_argument("DiagonalGaussian: stddev[" + std::to_string(i) +
                                    "] must be finite and > 0");
      }
      if (!std::isfinite(means_[i])) {
        throw std::invalid_argument("DiagonalGaussian: mean[" + std::to_string(i) +
                                    "] is not finite");
      }
    }
  }

  static DiagonalGaussian isotropic(std::size_t dim, double mean, double stddev) {
    return {std::vector<double>(dim, mean), std::vector<double>(dim, stddev)};
  }

  std::size_t dim() const { return means_.size(); }
  std::span<const double> means() const { return means_; }
  std::span<const double> stddevs() const { return stddevs_; }

  friend bool operator==(const DiagonalGaussian&, const DiagonalGaussian&) = default;

 private:
  std::vector<double> means_;
  std::vector<double> stddevs_;
};

/// Aggregation weights p(1..K): each in (0, 1], summing to one.
///
/// The upper end is closed so that a single-client federation (p = 1) is
/// representable.
class WeightVector {
 public:
  static constexpr double kSumTolerance = 1e-12;

  explicit WeightVector(std::vector<double> weights) : weights_(std::move(weights)) {
    if (weights_.empty()) throw std::invalid_argument("WeightVector: no weights");
    double sum = 0.0;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      const double w = weights_[k];
      if (!(w > 0.0) || w > 1.0) {
        throw std::invalid_argument("WeightVector: weight[" + std::to_string(k) +
                                    "] = " + std::to_string(w) + " outside (0,1]");
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
      throw std::invalid_argument("WeightVector: weights sum to " + std::to_string(sum) +
                                  ", expected 1");
    }
  }

  std::size_t size() const { return weights_.size(); }
  double operator[](std::size_t k) const { return weights_[k]; }
  std::span<const double> values() const { return weights_; }

 private:
  std::vector<double> weights_;
};

/// Geometric lambda grid {min_value * ratio^j : j = 0..size-1}.
inline std::vector<double> geometric_grid(double min_value, double ratio, std::size_t size) {
  if (!(min_value > 0.0)) throw std::invalid_argument("geometric_grid: min must be > 0");
  if (!(ratio > 1.0)) throw std::invalid_argument("geometric_grid: ratio must be > 1");
  if (size == 0) throw std::invalid_argument("geometric_grid: size must be >= 1");
  std::vector<double> grid(size);
  for (std::size_t j = 0; j < size; ++j) grid[j] = min_value * std::pow(ratio, static_cast<double>(j));
  return grid;
}

struct BoundParams {
  double lambda = 1.0;
  double delta = 0.05;
  double loss_bound_c = 1.0;
  std::size_t num_clients = 1;
  // Real-valued so that the mean shard size can be used as n.
  double samples_per_client = 1.0;
  std::vector<double> lambda_grid = geometric_grid(1.0, std::sqrt(2.0), 32);

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
      throw std::invalid_argument("BoundParams: lambda must be > 0");
    }
    if (!(delta > 0.0 && delta < 1.0)) {
      throw std::invalid_argument("BoundParams: delta must be in (0,1)");
    }
    if (!(loss_bound_c > 0.0)) throw std::invalid_argument("BoundParams: loss_bound_c must be > 0");
    if (num_clients == 0) throw std::invalid_argument("BoundParams: num_clients must be >= 1");
    if (!(samples_per_client > 0.0)) {
      throw std::invalid_argument("BoundParams: samples_per_client must be > 0");
    }
    if (lambda_grid.empty()) throw std::invalid_argument("BoundParams: lambda_grid is empty");
    for (std::size_t j = 0; j < lambda_grid.size(); ++j) {
      if (!(lambda_grid[j] > 0.0)) {
        throw std::invalid_argument("BoundParams: lambda_grid entries must be > 0");
      }
      if (j > 0 && !(lambda_grid[j] > lambda_grid[j - 1])) {
        throw std::invalid_argument("BoundParams: lambda_grid must be strictly ascending");
      }
    }
  }

  double kn() const { return static_cast<double>(num_clients) * samples_per_client; }
  double log_inv_delta() const { return -std::log(delta); }
  double log_grid_over_delta() const {
    return std::log(static_cast<double>(lambda_grid.size()) / delta);
  }
};

struct BoundCertificate {
  double empirical_risk = 0.0;
  double complexity = 0.0;
  double bound_value = 0.0;
  double measured_population_proxy = 0.0;
  double lambda = 0.0;
  bool holds = false;
};

enum class LambdaMode { fixed_lambda, optimized_lambda };

/// KL(q || p) for factorized Gaussians, summed over coordinates.
inline double kl_diag_gaussian(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  if (q.dim() != p.dim()) {
    throw std::invalid_argument("kl_diag_gaussian: dimension mismatch (" +
                                std::to_string(q.dim()) + " vs " + std::to_string(p.dim()) + ")");
  }
  const auto mq = q.means(), sq = q.stddevs(), mp = p.means(), sp = p.stddevs();
  double kl = 0.0;
  for (std::size_t i = 0; i < q.dim(); ++i) {
    const double ratio = sq[i] / sp[i];
    const double diff = (mq[i] - mp[i]) / sp[i];
    // ln(sp/sq) + (r^2 + diff^2 - 1)/2, written to stay accurate when q ~ p.
    kl += -std::log(ratio) + 0.5 * ((ratio - 1.0) * (ratio + 1.0) + diff * diff);
  }
  return std::max(kl, 0.0);
}

/// sum_k w(k) KL(q_k || p_k).
inline double weighted_kl(std::span<const DiagonalGaussian> qs, std::span<const DiagonalGaussian> ps,
                          const WeightVector& w) {
  if (qs.size() != ps.size() || qs.size() != w.size()) {
    throw std::invalid_argument("weighted_kl: got " + std::to_string(qs.size()) + " posteriors, " +
                                std::to_string(ps.size()) + " priors and " +
                                std::to_string(w.size()) + " weights");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < qs.size(); ++k) total += w[k] * kl_diag_gaussian(qs[k], ps[k]);
  return total;
}

namespace detail {
inline void check_kl(double kl_sum) {
  if (!(kl_sum >= 0.0) || !std::isfinite(kl_sum)) {
    throw std::invalid_argument("kl_sum must be finite and >= 0");
  }
}

inline double complexity_at(double kl_sum, double lambda, double log_term, const BoundParams& bp) {
  if (!(lambda > 0.0)) throw std::invalid_argument("complexity: lambda must be > 0");
  const double c = bp.loss_bound_c;
  return (kl_sum + log_term) / lambda + lambda * c * c / (8.0 * bp.kn());
}
}  // namespace detail

/// Fixed-lambda complexity: (kl + ln 1/delta)/lambda + lambda C^2/(8Kn).
inline double complexity_theorem1(double kl_sum, const BoundParams& bp) {
  bp.validate();
  detail::check_kl(kl_sum);
  return detail::complexity_at(kl_sum, bp.lambda, bp.log_inv_delta(), bp);
}

/// Fixed-lambda complexity at an explicit lambda, with ln(|grid|/delta) in place
/// of ln(1/delta): the quantity the grid union bound controls.
inline double complexity_theorem1_union(double kl_sum, double lambda, const BoundParams& bp) {
  bp.validate();
  detail::check_kl(kl_sum);
  return detail::complexity_at(kl_sum, lambda, bp.log_grid_over_delta(), bp);
}

inline double lambda_star(double kl_sum, const BoundParams& bp) {
  bp.validate();
  detail::check_kl(kl_sum);
  const double inner = kl_sum + bp.log_grid_over_delta();
  if (!(inner > 0.0)) throw std::invalid_argument("lambda_star: kl + ln(|grid|/delta) must be > 0");
  return std::sqrt(8.0 * bp.kn() * inner) / bp.loss_bound_c;
}

/// The grid point minimizing complexity_theorem1_union. The objective is convex
/// in lambda, so the minimizer is one of the two grid points bracketing lambda*.
inline double lambda_on_grid(double kl_sum, const BoundParams& bp) {
  const double target = lambda_star(kl_sum, bp);
  const auto& grid = bp.lambda_grid;
  const auto upper = std::lower_bound(grid.begin(), grid.end(), target);
  if (upper == grid.begin()) return grid.front();
  if (upper == grid.end()) return grid.back();
  const double hi = *upper;
  const double lo = *(upper - 1);
  return complexity_theorem1_union(kl_sum, lo, bp) <= complexity_theorem1_union(kl_sum, hi, bp) ? lo
                                                                                                 : hi;
}

/// C sqrt((kl + ln(|grid|/delta)) / (2Kn)).
inline double complexity_corollary(double kl_sum, const BoundParams& bp) {
  bp.validate();
  detail::check_kl(kl_sum);
  const double inner = kl_sum + bp.log_grid_over_delta();
  if (!(inner > 0.0)) {
    throw std::invalid_argument("complexity_corollary: kl + ln(|grid|/delta) must be > 0");
  }
  return bp.loss_bound_c * std::sqrt(inner / (2.0 * bp.kn()));
}

inline BoundCertificate bound_certificate(double empirical, double population_proxy, double kl_sum,
                                          const BoundParams& bp, LambdaMode mode) {
  bp.validate();
  const double c = bp.loss_bound_c;
  if (!(empirical >= 0.0 && empirical <= c)) {
    throw std::invalid_argument("bound_certificate: empirical risk outside [0, C]");
  }
  if (!(population_proxy >= 0.0 && population_proxy <= c)) {
    throw std::invalid_argument("bound_certificate: population proxy outside [0, C]");
  }
  BoundCertificate cert;
  cert.empirical_risk = empirical;
  cert.measured_population_proxy = population_proxy;
  if (mode == LambdaMode::fixed_lambda) {
    cert.complexity = complexity_theorem1(kl_sum, bp);
    cert.lambda = bp.lambda;
  } else {
    cert.complexity = complexity_corollary(kl_sum, bp);
    cert.lambda = lambda_star(kl_sum, bp);
  }
  cert.bound_value = cert.empirical_risk + cert.complexity;
  cert.holds = cert.measured_population_proxy <= cert.bound_value;
  return cert;
}

}  // namespace fedpb
