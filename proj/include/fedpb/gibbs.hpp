#pragma once
// Exact Gibbs posteriors over finite hypothesis classes.
//
// For a finite class with prior pi and average losses L, the distribution
// minimizing  lambda * <q, L> + weight * KL(q || pi)  over the simplex is
// q_i ∝ pi_i exp(-(lambda / weight) L_i).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedpb {

struct DiscreteHypothesisClass {
  std::vector<double> prior;
  // Average empirical loss of each hypothesis. +inf marks an excluded hypothesis.
  std::vector<double> losses;

  std::size_t size() const { return prior.size(); }

  void validate() const {
    if (prior.empty()) throw std::invalid_argument("DiscreteHypothesisClass: no hypotheses");
    if (prior.size() != losses.size()) {
      throw std::invalid_argument("DiscreteHypothesisClass: prior has " +
                                  std::to_string(prior.size()) + " entries but losses has " +
                                  std::to_string(losses.size()));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < prior.size(); ++i) {
      if (!(prior[i] >= 0.0)) {
        throw std::invalid_argument("DiscreteHypothesisClass: prior[" + std::to_string(i) + "] < 0");
      }
      if (std::isnan(losses[i]) || losses[i] == -std::numeric_limits<double>::infinity()) {
        throw std::invalid_argument("DiscreteHypothesisClass: loss[" + std::to_string(i) +
                                    "] is not a valid loss");
      }
      sum += prior[i];
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw std::invalid_argument("DiscreteHypothesisClass: prior sums to " + std::to_string(sum));
    }
  }
};

/// How the Gibbs temperature is derived from (lambda, p(k)).
enum class GibbsTemperature {
  objective_consistent,  // lambda / p(k): the exact minimizer of the weighted objective
  paper_literal,         // lambda: the weight on the KL term is taken as one
};

inline double gibbs_temperature(double lambda, double weight, GibbsTemperature mode) {
  if (!(lambda > 0.0)) throw std::invalid_argument("gibbs_temperature: lambda must be > 0");
  if (mode == GibbsTemperature::paper_literal) return lambda;
  if (!(weight > 0.0)) throw std::invalid_argument("gibbs_temperature: weight must be > 0");
  return lambda / weight;
}

/// q_i ∝ prior_i exp(-temperature * loss_i), computed in the log domain.
inline std::vector<double> gibbs_posterior(const DiscreteHypothesisClass& hc, double temperature) {
  hc.validate();
  if (!(temperature > 0.0)) throw std::invalid_argument("gibbs_posterior: temperature must be > 0");
  const std::size_t m = hc.size();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  std::vector<double> logw(m, kNegInf);
  double max_logw = kNegInf;
  for (std::size_t i = 0; i < m; ++i) {
    if (hc.prior[i] > 0.0 && std::isfinite(hc.losses[i])) {
      logw[i] = std::log(hc.prior[i]) - temperature * hc.losses[i];
      max_logw = std::max(max_logw, logw[i]);
    }
  }
  if (max_logw == kNegInf) {
    throw std::domain_error("gibbs_posterior: all prior mass is on hypotheses with infinite loss");
  }
  std::vector<double> q(m, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (logw[i] != kNegInf) {
      q[i] = std::exp(logw[i] - max_logw);
      total += q[i];
    }
  }
  for (auto& v : q) v /= total;
  return q;
}

/// lambda <q, losses> + weight KL(q || prior), with 0 ln 0 = 0. Returns +inf
/// when q puts mass where the prior has none.
inline double objective_j(const DiscreteHypothesisClass& hc, std::span<const double> q,
                          double lambda, double weight) {
  hc.validate();
  if (q.size() != hc.size()) {
    throw std::invalid_argument("objective_j: q has " + std::to_string(q.size()) +
                                " entries, class has " + std::to_string(hc.size()));
  }
  double expected_loss = 0.0;
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] < 0.0) throw std::invalid_argument("objective_j: q has a negative entry");
    if (q[i] == 0.0) continue;
    if (hc.prior[i] == 0.0) return std::numeric_limits<double>::infinity();
    expected_loss += q[i] * hc.losses[i];
    kl += q[i] * std::log(q[i] / hc.prior[i]);
  }
  return lambda * expected_loss + weight * kl;
}

}  // namespace fedpb
