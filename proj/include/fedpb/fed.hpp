#pragma once
// Federated round engine.
//
// One round:
//   1. every client runs gradient descent on
//        lambda * E_Q[loss] + weight * KL(Q_k || P_k)
//      starting from the broadcast global posterior;
//   2. clients evaluate their posterior and report either the Gaussian itself
//      or only its precision-weighted sufficient statistics, plus their
//      weighted KL;
//   3. the server forms the weighted product of the posteriors
//        prec = sum_k p(k) / sigma_k^2,  mean = sum_k p(k) mu_k / sigma_k^2 / prec
//      and assembles the bound certificates;
//   4. the aggregate is broadcast as the new prior and warm start.
//
// Per-client work only touches that client's state and seeded streams, so
// serial and threaded execution produce identical numbers. Server reductions
// run in client-id order.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fedpb/bnn.hpp"
#include "fedpb/data.hpp"
#include "fedpb/gibbs.hpp"
#include "fedpb/pacbayes.hpp"
#include "fedpb/rng.hpp"

namespace fedpb {

/// p(k) = n_k / sum_j n_j.
inline WeightVector compute_weights(std::span<const std::size_t> counts) {
  if (counts.empty()) throw std::invalid_argument("compute_weights: no clients");
  double total = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) {
      throw std::invalid_argument("compute_weights: client " + std::to_string(k) + " has no samples");
    }
    total += static_cast<double>(counts[k]);
  }
  std::vector<double> w(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) w[k] = static_cast<double>(counts[k]) / total;
  return WeightVector(std::move(w));
}

/// Weights from the training-split sizes.
inline WeightVector compute_weights(const Partition& partition) {
  const auto counts = partition.train_counts();
  return compute_weights(counts);
}

/// Precision-weighted sufficient statistics of p(k) Q_k; summable across clients.
struct PrecisionStats {
  std::vector<double> precision;       // sum p(k) / sigma_k^2
  std::vector<double> precision_mean;  // sum p(k) mu_k / sigma_k^2

  static PrecisionStats of(const DiagonalGaussian& g, double weight) {
    PrecisionStats s;
    s.precision.resize(g.dim());
    s.precision_mean.resize(g.dim());
    for (std::size_t i = 0; i < g.dim(); ++i) {
      const double sd = g.stddevs()[i];
      s.precision[i] = weight / (sd * sd);
      s.precision_mean[i] = s.precision[i] * g.means()[i];
    }
    return s;
  }

  void add(const PrecisionStats& other) {
    if (precision.empty()) {
      *this = other;
      return;
    }
    if (other.precision.size() != precision.size()) {
      throw std::invalid_argument("aggregate: dimension mismatch");
    }
    for (std::size_t i = 0; i < precision.size(); ++i) {
      precision[i] += other.precision[i];
      precision_mean[i] += other.precision_mean[i];
    }
  }

  DiagonalGaussian finalize() const {
    if (precision.empty()) throw std::invalid_argument("aggregate: nothing to aggregate");
    std::vector<double> mean(precision.size()), sd(precision.size());
    for (std::size_t i = 0; i < precision.size(); ++i) {
      mean[i] = precision_mean[i] / precision[i];
      sd[i] = std::sqrt(1.0 / precision[i]);
    }
    return {std::move(mean), std::move(sd)};
  }
};

/// Weighted product of Gaussians, prod_k Q_k^{p(k)}, renormalized.
inline DiagonalGaussian aggregate(std::span<const DiagonalGaussian> posteriors, const WeightVector& w) {
  if (posteriors.size() != w.size()) {
    throw std::invalid_argument("aggregate: " + std::to_string(posteriors.size()) + " posteriors for " +
                                std::to_string(w.size()) + " weights");
  }
  PrecisionStats total;
  for (std::size_t k = 0; k < posteriors.size(); ++k) {
    if (posteriors[k].dim() != posteriors.front().dim()) {
      throw std::invalid_argument("aggregate: posterior " + std::to_string(k) + " has dimension " +
                                  std::to_string(posteriors[k].dim()) + ", expected " +
                                  std::to_string(posteriors.front().dim()));
    }
    total.add(PrecisionStats::of(posteriors[k], w[k]));
  }
  return total.finalize();
}

enum class PriorMode { data_dependent, data_independent };
enum class PriorSource { global, local_posterior };
enum class LambdaSelection { fixed, automatic };
enum class BoundSampleSize { min, mean };
enum class ReportMode { posterior, sufficient_stats };

struct ClientState {
  std::size_t id = 0;
  ClientShard shard;
  double weight = 1.0;
  DiagonalGaussian prior;
  MeanFieldNet posterior;
  NetOptimizer optimizer;
  RngStream rng;  // training stream: batches and reparameterization noise
};

struct LocalUpdateConfig {
  double lambda = 1.0;
  double weight = 1.0;  // multiplier of the KL term
  std::size_t steps = 50;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t mc_train_samples = 1;
  AdamConfig adam;
};

struct LocalUpdateResult {
  double final_objective = 0.0;
  double best_objective = 0.0;
  std::vector<double> trace;  // objective estimate at each step, before the update
};

namespace detail {

inline std::vector<Sample> draw_batch(const LabeledDataset& ds, std::span<const std::size_t> pool,
                                      std::size_t batch_size, RngStream& rng) {
  std::vector<Sample> batch;
  if (batch_size == 0 || batch_size >= pool.size()) {
    for (std::size_t i : pool) batch.push_back(ds.sample(i));
    return batch;
  }
  // Partial Fisher-Yates over positions in the pool.
  std::vector<std::size_t> positions(pool.size());
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  for (std::size_t j = 0; j < batch_size; ++j) {
    const std::size_t r = j + rng.uniform_index(pool.size() - j);
    std::swap(positions[j], positions[r]);
    batch.push_back(ds.sample(pool[positions[j]]));
  }
  return batch;
}

}  // namespace detail

/// Mini-batch Adam descent on the local objective against `prior`.
inline LocalUpdateResult local_update(ClientState& client, const LabeledDataset& ds, const DiagonalGaussian& prior,
                                      const LocalUpdateConfig& cfg) {
  if (cfg.steps == 0) throw std::invalid_argument("local_update: steps must be >= 1");
  if (cfg.mc_train_samples == 0) throw std::invalid_argument("local_update: mc_train_samples must be >= 1");
  if (client.shard.train.empty()) {
    throw std::invalid_argument("local_update: client " + std::to_string(client.id) + " has no training data");
  }
  auto& net = client.posterior;
  if (client.optimizer.mu.m.size() != net.size()) client.optimizer = NetOptimizer(net.size());

  LocalUpdateResult result;
  result.trace.reserve(cfg.steps);
  const std::size_t n = net.size();
  const double inv_s = 1.0 / static_cast<double>(cfg.mc_train_samples);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto batch = detail::draw_batch(ds, client.shard.train, cfg.batch_size, client.rng);
    std::vector<double> grad_mu(n, 0.0), grad_rho(n, 0.0);
    double value = 0.0;
    for (std::size_t s = 0; s < cfg.mc_train_samples; ++s) {
      const NoiseDraw noise = NoiseDraw::draw(n, client.rng);
      const ObjectiveGradient g = objective_grad(net, prior, batch, cfg.lambda, cfg.weight, noise);
      for (std::size_t i = 0; i < n; ++i) {
        grad_mu[i] += g.grad_mu[i] * inv_s;
        grad_rho[i] += g.grad_rho[i] * inv_s;
      }
      value += g.value * inv_s;
    }
    result.trace.push_back(value);
    client.optimizer.step(net, grad_mu, grad_rho, cfg.learning_rate, cfg.adam);
  }
  result.final_objective = result.trace.back();
  result.best_objective = *std::min_element(result.trace.begin(), result.trace.end());
  return result;
}

struct RiskEstimate {
  double risk = 0.0;      // mean clipped loss
  double accuracy = 0.0;  // mean accuracy of the sampled (Gibbs) predictors
};

/// Monte-Carlo estimate of E_{w~Q}[mean clipped loss over the shard].
inline RiskEstimate mc_risk(const MeanFieldNet& posterior, const LabeledDataset& ds,
                            std::span<const std::size_t> shard, std::size_t mc_samples, double c,
                            RngStream& rng) {
  if (shard.empty()) throw std::invalid_argument("mc_risk: empty shard");
  if (mc_samples == 0) throw std::invalid_argument("mc_risk: mc_samples must be >= 1");
  RiskEstimate est;
  const double inv = 1.0 / static_cast<double>(shard.size());
  for (std::size_t s = 0; s < mc_samples; ++s) {
    const auto w = sample_weights(posterior, NoiseDraw::draw(posterior.size(), rng));
    double loss = 0.0;
    double correct = 0.0;
    for (std::size_t i : shard) {
      const auto logits = forward(posterior, w, ds.row(i));
      loss += clipped_cross_entropy(logits, ds.labels[i], c).clipped;
      if (argmax(logits) == ds.labels[i]) correct += 1.0;
    }
    est.risk += loss * inv;
    est.accuracy += correct * inv;
  }
  est.risk /= static_cast<double>(mc_samples);
  est.accuracy /= static_cast<double>(mc_samples);
  return est;
}

/// Phase 2: the broadcast global posterior becomes the prior (or, with
/// local_posterior, the client's own last posterior does), and the client
/// restarts from the global posterior.
inline void refresh_prior(ClientState& client, const DiagonalGaussian& global_posterior, PriorMode mode,
                          PriorSource source = PriorSource::global) {
  if (global_posterior.dim() != client.posterior.size()) {
    throw std::invalid_argument("refresh_prior: dimension mismatch");
  }
  if (mode == PriorMode::data_dependent) {
    client.prior = source == PriorSource::global ? global_posterior : client.posterior.as_gaussian();
  }
  client.posterior = MeanFieldNet::from_gaussian(client.posterior.layers(), global_posterior);
  client.optimizer = NetOptimizer(client.posterior.size());
}

struct FederatedConfig {
  std::vector<std::size_t> hidden = {16};
  double init_rho = -3.0;
  PriorMode prior_mode = PriorMode::data_dependent;
  PriorSource prior_source = PriorSource::global;
  double prior_stddev = 1.0;  // sigma_0 of the data-independent prior N(0, sigma_0^2 I)
  LambdaSelection lambda_mode = LambdaSelection::automatic;
  double lambda = 100.0;
  std::vector<double> lambda_grid = geometric_grid(1.0, std::sqrt(2.0), 32);
  double delta = 0.05;
  std::optional<double> loss_bound_c;  // default 4 ln(num_classes)
  BoundSampleSize bound_n = BoundSampleSize::min;
  GibbsTemperature gibbs_temperature = GibbsTemperature::objective_consistent;
  std::size_t local_steps = 50;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t mc_train_samples = 1;
  std::size_t mc_samples = 32;
  ReportMode report_mode = ReportMode::posterior;
  bool parallel = false;
  std::size_t threads = 0;  // 0: hardware concurrency
  std::uint64_t seed = 0;

  double loss_bound(std::size_t num_classes) const {
    return loss_bound_c.value_or(4.0 * std::log(static_cast<double>(std::max<std::size_t>(num_classes, 2))));
  }
};

struct ClientMetrics {
  std::size_t id = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double weight = 0.0;
  double train_risk = 0.0;
  double test_risk = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double kl = 0.0;
  double weighted_kl = 0.0;
  double local_objective = 0.0;
};

struct RoundMetrics {
  std::size_t round = 0;
  double train_risk = 0.0;
  double test_risk = 0.0;
  double gen_gap = 0.0;
  double kl_sum = 0.0;
  double complexity_t1 = 0.0;
  double complexity_cor = 0.0;
  double bound_t1 = 0.0;
  double bound_cor = 0.0;
  double lambda_used = 0.0;
  double lambda_star = 0.0;
  double loss_bound_c = 0.0;
  double bound_n = 0.0;
  bool holds_t1 = false;
  bool holds_cor = false;
  double global_test_risk = 0.0;
  double global_test_accuracy = 0.0;
  std::vector<ClientMetrics> clients;
};

struct FederationState {
  std::shared_ptr<const LabeledDataset> dataset;
  std::vector<LayerShape> layers;
  std::vector<ClientState> clients;
  DiagonalGaussian global_posterior;
  DiagonalGaussian fixed_prior;
  std::size_t rounds_done = 0;
  double previous_kl_sum = 0.0;
};

inline FederationState initialize_federation(std::shared_ptr<const LabeledDataset> dataset, const Partition& partition,
                                             const FederatedConfig& cfg) {
  if (!dataset) throw std::invalid_argument("initialize_federation: no dataset");
  dataset->validate();
  if (partition.clients.empty()) throw std::invalid_argument("initialize_federation: no clients");
  const WeightVector weights = compute_weights(partition);
  auto layers = dense_layers(dataset->num_features, cfg.hidden, dataset->num_classes);
  RngStream init_rng(cfg.seed, streams::kInit);
  const MeanFieldNet initial = MeanFieldNet::initialize(layers, init_rng, cfg.init_rho);
  const DiagonalGaussian initial_gaussian = initial.as_gaussian();
  if (!(cfg.prior_stddev > 0.0)) throw std::invalid_argument("initialize_federation: prior_stddev must be > 0");
  DiagonalGaussian fixed_prior = DiagonalGaussian::isotropic(initial.size(), 0.0, cfg.prior_stddev);

  std::vector<ClientState> clients;
  clients.reserve(partition.num_clients());
  for (std::size_t k = 0; k < partition.num_clients(); ++k) {
    const auto& shard = partition.clients[k];
    if (shard.train.empty() || shard.test.empty()) {
      throw std::invalid_argument("initialize_federation: client " + std::to_string(k) +
                                  " needs nonempty train and test splits");
    }
    // Data-dependent priors start at the broadcast initial model.
    DiagonalGaussian prior = cfg.prior_mode == PriorMode::data_dependent ? initial_gaussian : fixed_prior;
    clients.push_back(ClientState{k, shard, weights[k], std::move(prior), initial, NetOptimizer(initial.size()),
                                  RngStream(cfg.seed, streams::kClientBase + k)});
  }
  return FederationState{std::move(dataset), std::move(layers), std::move(clients), initial_gaussian,
                         std::move(fixed_prior), 0, 0.0};
}

namespace detail {

struct ClientReport {
  ClientMetrics metrics;
  std::optional<DiagonalGaussian> posterior;
  PrecisionStats stats;
};

template <typename Fn>
void for_each_client(std::size_t count, bool parallel, std::size_t threads, Fn&& fn) {
  if (!parallel || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::size_t workers = threads ? threads : std::max(2u, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

inline BoundParams bound_params(const FederationState& state, const FederatedConfig& cfg, double lambda) {
  BoundParams bp;
  bp.lambda = lambda;
  bp.delta = cfg.delta;
  bp.loss_bound_c = cfg.loss_bound(state.dataset->num_classes);
  bp.num_clients = state.clients.size();
  std::vector<std::size_t> counts;
  for (const auto& c : state.clients) counts.push_back(c.shard.train.size());
  if (cfg.bound_n == BoundSampleSize::min) {
    bp.samples_per_client = static_cast<double>(*std::min_element(counts.begin(), counts.end()));
  } else {
    bp.samples_per_client = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0})) /
                            static_cast<double>(counts.size());
  }
  bp.lambda_grid = cfg.lambda_grid;
  bp.validate();
  return bp;
}

}  // namespace detail

/// Evaluation noise is drawn from streams keyed only by (seed, client), restarted
/// every round, so rounds are compared under common random numbers.
inline RngStream evaluation_stream(std::uint64_t seed, std::size_t client_id) {
  return RngStream(derive_seed(seed, streams::kClientBase + client_id), 0x6576616cULL);
}

/// One federated round; see the header comment for the sequence.
inline RoundMetrics run_round(FederationState& state, const FederatedConfig& cfg) {
  const LabeledDataset& ds = *state.dataset;
  const std::size_t K = state.clients.size();

  BoundParams bp = detail::bound_params(state, cfg, cfg.lambda > 0.0 ? cfg.lambda : 1.0);
  const double lambda = cfg.lambda_mode == LambdaSelection::fixed ? cfg.lambda
                                                                  : lambda_on_grid(state.previous_kl_sum, bp);
  bp.lambda = lambda;
  const double c = bp.loss_bound_c;

  std::vector<detail::ClientReport> reports(K);
  detail::for_each_client(K, cfg.parallel, cfg.threads, [&](std::size_t idx) {
    ClientState& client = state.clients[idx];
    LocalUpdateConfig lu;
    lu.lambda = lambda;
    lu.weight = cfg.gibbs_temperature == GibbsTemperature::objective_consistent ? client.weight : 1.0;
    lu.steps = cfg.local_steps;
    lu.batch_size = cfg.batch_size;
    lu.learning_rate = cfg.learning_rate;
    lu.mc_train_samples = cfg.mc_train_samples;
    const LocalUpdateResult update = local_update(client, ds, client.prior, lu);

    RngStream eval = evaluation_stream(cfg.seed, client.id);
    const RiskEstimate train = mc_risk(client.posterior, ds, client.shard.train, cfg.mc_samples, c, eval);
    const RiskEstimate test = mc_risk(client.posterior, ds, client.shard.test, cfg.mc_samples, c, eval);

    auto& report = reports[idx];
    const DiagonalGaussian q = client.posterior.as_gaussian();
    auto& m = report.metrics;
    m.id = client.id;
    m.n_train = client.shard.train.size();
    m.n_test = client.shard.test.size();
    m.weight = client.weight;
    m.train_risk = train.risk;
    m.test_risk = test.risk;
    m.train_accuracy = train.accuracy;
    m.test_accuracy = test.accuracy;
    m.kl = kl_diag_gaussian(q, client.prior);
    m.weighted_kl = client.weight * m.kl;
    m.local_objective = update.final_objective;
    if (cfg.report_mode == ReportMode::sufficient_stats) {
      report.stats = PrecisionStats::of(q, client.weight);
    } else {
      report.posterior = q;
    }
  });

  // Server side: reduce in client-id order.
  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return reports[a].metrics.id < reports[b].metrics.id; });

  RoundMetrics rm;
  rm.round = state.rounds_done + 1;
  DiagonalGaussian global = state.global_posterior;
  if (cfg.report_mode == ReportMode::sufficient_stats) {
    PrecisionStats total;
    for (std::size_t idx : order) total.add(reports[idx].stats);
    global = total.finalize();
  } else {
    std::vector<DiagonalGaussian> posteriors;
    std::vector<double> w;
    for (std::size_t idx : order) {
      posteriors.push_back(*reports[idx].posterior);
      w.push_back(reports[idx].metrics.weight);
    }
    global = aggregate(posteriors, WeightVector(std::move(w)));
  }

  for (std::size_t idx : order) {
    const auto& m = reports[idx].metrics;
    rm.train_risk += m.train_risk;
    rm.test_risk += m.test_risk;
    rm.kl_sum += m.weighted_kl;
    rm.clients.push_back(m);
  }
  rm.train_risk /= static_cast<double>(K);
  rm.test_risk /= static_cast<double>(K);
  rm.gen_gap = rm.test_risk - rm.train_risk;

  const BoundCertificate t1 = bound_certificate(rm.train_risk, rm.test_risk, rm.kl_sum, bp, LambdaMode::fixed_lambda);
  const BoundCertificate cor =
      bound_certificate(rm.train_risk, rm.test_risk, rm.kl_sum, bp, LambdaMode::optimized_lambda);
  rm.complexity_t1 = t1.complexity;
  rm.complexity_cor = cor.complexity;
  rm.bound_t1 = t1.bound_value;
  rm.bound_cor = cor.bound_value;
  rm.holds_t1 = t1.holds;
  rm.holds_cor = cor.holds;
  rm.lambda_used = lambda;
  rm.lambda_star = cor.lambda;
  rm.loss_bound_c = c;
  rm.bound_n = bp.samples_per_client;

  // Global model on the pooled held-out shards.
  const MeanFieldNet global_net = MeanFieldNet::from_gaussian(state.layers, global);
  std::vector<std::size_t> pooled_test;
  for (std::size_t idx : order) {
    const auto& t = state.clients[idx].shard.test;
    pooled_test.insert(pooled_test.end(), t.begin(), t.end());
  }
  RngStream server_eval(cfg.seed, streams::kServer);
  const RiskEstimate g = mc_risk(global_net, ds, pooled_test, cfg.mc_samples, c, server_eval);
  rm.global_test_risk = g.risk;
  rm.global_test_accuracy = g.accuracy;

  for (auto& client : state.clients) refresh_prior(client, global, cfg.prior_mode, cfg.prior_source);
  state.global_posterior = std::move(global);
  state.previous_kl_sum = rm.kl_sum;
  ++state.rounds_done;
  return rm;
}

}  // namespace fedpb
