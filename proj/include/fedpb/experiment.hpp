#pragma once
// Experiment runner: builds data and clients from a config, runs the rounds,
// and streams JSON-lines records. Sweeps run one experiment per axis value.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedpb/config.hpp"
#include "fedpb/data.hpp"
#include "fedpb/fed.hpp"
#include "fedpb/report.hpp"

namespace fedpb {

struct PreparedData {
  std::shared_ptr<const LabeledDataset> dataset;
  Partition partition;
};

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  const auto& p = cfg.partition;
  const std::uint64_t seed = cfg.effective_data_seed();
  LabeledDataset ds;
  std::optional<Partition> natural;
  if (d.source == DatasetSource::synthetic) {
    SynthSpec spec;
    spec.num_clients = p.num_clients;
    spec.per_client = d.per_client;
    spec.dim = d.dim;
    spec.num_classes = d.classes;
    spec.skew = d.skew;
    spec.center_scale = d.center_scale;
    spec.offset_scale = d.offset_scale;
    spec.noise_stddev = d.noise_stddev;
    spec.test_fraction = p.test_fraction;
    spec.seed = seed;
    auto synth = synth_blobs(spec);
    ds = std::move(synth.dataset);
    natural = std::move(synth.partition);
  } else if (d.source == DatasetSource::csv) {
    ds = load_csv(d.path, CsvSchema{d.has_header, d.num_classes});
  } else {
    ds = load_idx(d.images, d.labels, d.num_classes);
  }

  PreparedData out;
  if (p.scheme == "natural") {
    out.partition = std::move(*natural);
  } else {
    PartitionSpec spec;
    spec.scheme = partition_scheme_from(p.scheme);
    spec.num_clients = p.num_clients;
    spec.seed = seed;
    spec.ratios = p.ratios;
    spec.alpha = p.alpha;
    spec.min_client_samples = p.min_client_samples;
    spec.test_fraction = p.test_fraction;
    out.partition = partition(ds, spec);
  }
  out.dataset = std::make_shared<const LabeledDataset>(std::move(ds));
  return out;
}

struct ExperimentResult {
  std::vector<RoundMetrics> rounds;
  BoundCertificate final_t1;
  BoundCertificate final_cor;
  double best_global_accuracy = 0.0;
  std::size_t best_round = 0;
  bool holds_t1_all_rounds = true;
  bool holds_cor_all_rounds = true;
  double wall_clock_seconds = 0.0;
};

inline nlohmann::ordered_json summary_record(const ExperimentResult& r, const ExperimentConfig& cfg) {
  const RoundMetrics& last = r.rounds.back();
  nlohmann::ordered_json j = {{"type", "summary"},
                              {"rounds", r.rounds.size()},
                              {"seed", cfg.seed},
                              {"best_global_accuracy", r.best_global_accuracy},
                              {"best_round", r.best_round},
                              {"final_global_accuracy", last.global_test_accuracy},
                              {"final_certificate_t1", to_json(r.final_t1)},
                              {"final_certificate_cor", to_json(r.final_cor)},
                              {"holds_t1_all_rounds", r.holds_t1_all_rounds},
                              {"holds_cor_all_rounds", r.holds_cor_all_rounds}};
  // Opt-in only: timing would break byte-identical reruns.
  if (cfg.record_wall_clock) j["wall_clock_seconds"] = r.wall_clock_seconds;
  return j;
}

/// Runs all rounds; writes one record per round plus a summary when `jsonl` is set.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* jsonl = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  PreparedData data = prepare_data(cfg);
  FederatedConfig fc = cfg.federated;
  fc.seed = cfg.seed;
  FederationState state = initialize_federation(data.dataset, data.partition, fc);

  ExperimentResult result;
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    RoundMetrics m = run_round(state, fc);
    if (jsonl) write_jsonl(*jsonl, to_json(m));
    if (r == 0 || m.global_test_accuracy > result.best_global_accuracy) {
      result.best_global_accuracy = m.global_test_accuracy;
      result.best_round = m.round;
    }
    result.holds_t1_all_rounds = result.holds_t1_all_rounds && m.holds_t1;
    result.holds_cor_all_rounds = result.holds_cor_all_rounds && m.holds_cor;
    result.rounds.push_back(std::move(m));
  }
  const RoundMetrics& last = result.rounds.back();
  auto certificate = [&](double complexity, double bound, double lambda, bool holds) {
    BoundCertificate c;
    c.empirical_risk = last.train_risk;
    c.measured_population_proxy = last.test_risk;
    c.complexity = complexity;
    c.bound_value = bound;
    c.lambda = lambda;
    c.holds = holds;
    return c;
  };
  result.final_t1 = certificate(last.complexity_t1, last.bound_t1, last.lambda_used, last.holds_t1);
  result.final_cor = certificate(last.complexity_cor, last.bound_cor, last.lambda_star, last.holds_cor);
  result.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (jsonl) write_jsonl(*jsonl, summary_record(result, cfg));
  return result;
}

/// Runs and writes `<output_dir>/<cfg.output>` (or `cfg.output` as given).
inline ExperimentResult run_to_file(const ExperimentConfig& cfg, const std::filesystem::path& output_file) {
  if (output_file.has_parent_path()) std::filesystem::create_directories(output_file.parent_path());
  std::ofstream out(output_file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + output_file.string());
  auto result = run_experiment(cfg, &out);
  if (!out) throw std::runtime_error("error writing " + output_file.string());
  return result;
}

enum class SweepAxis { clients, prior_mode, partition_scheme };

inline SweepAxis sweep_axis_from(const std::string& name) {
  return detail::parse_enum<SweepAxis>("axis", name,
                                       {{"clients", SweepAxis::clients},
                                        {"prior_mode", SweepAxis::prior_mode},
                                        {"partition_scheme", SweepAxis::partition_scheme}});
}

inline std::string sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::clients: return "clients";
    case SweepAxis::prior_mode: return "prior_mode";
    case SweepAxis::partition_scheme: return "partition_scheme";
  }
  return "?";
}

/// Config for one sweep point. Data are generated from the base data seed so
/// points stay paired; training seeds are derived per point.
inline ExperimentConfig sweep_point(const ExperimentConfig& base, SweepAxis axis, const std::string& value,
                                    std::size_t index) {
  ExperimentConfig cfg = base;
  cfg.data_seed = base.effective_data_seed();
  cfg.seed = derive_seed(base.seed, index);
  switch (axis) {
    case SweepAxis::clients: {
      std::size_t used = 0;
      long long k = 0;
      try {
        k = std::stoll(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != value.size() || k <= 0) {
        throw ConfigError("values: '" + value + "' is not a positive client count");
      }
      cfg.partition.num_clients = static_cast<std::size_t>(k);
      break;
    }
    case SweepAxis::prior_mode:
      cfg.federated.prior_mode = prior_mode_from(value);
      break;
    case SweepAxis::partition_scheme:
      if (value != "natural") partition_scheme_from(value);
      cfg.partition.scheme = value;
      break;
  }
  validate(cfg);
  return cfg;
}

struct SweepRow {
  std::string value;
  std::uint64_t seed = 0;
  std::string output_file;
  ExperimentResult result;
};

inline std::string sweep_csv_header() {
  return "axis,value,seed,num_clients,rounds,final_train_risk,final_test_risk,final_gen_gap,final_kl_sum,"
         "final_complexity_t1,final_complexity_cor,final_lambda_used,final_global_accuracy,"
         "best_global_accuracy,holds_t1_all_rounds,holds_cor_all_rounds,output";
}

inline std::string sweep_csv_row(SweepAxis axis, const SweepRow& row) {
  const RoundMetrics& last = row.result.rounds.back();
  // Shortest round-trip formatting, same as the JSONL stream.
  auto num = [](double v) { return nlohmann::json(v).dump(); };
  std::ostringstream line;
  line << sweep_axis_name(axis) << ',' << row.value << ',' << row.seed << ',' << last.clients.size() << ','
       << row.result.rounds.size() << ',' << num(last.train_risk) << ',' << num(last.test_risk) << ','
       << num(last.gen_gap) << ',' << num(last.kl_sum) << ',' << num(last.complexity_t1) << ','
       << num(last.complexity_cor) << ',' << num(last.lambda_used) << ',' << num(last.global_test_accuracy) << ','
       << num(row.result.best_global_accuracy) << ',' << (row.result.holds_t1_all_rounds ? "true" : "false")
       << ',' << (row.result.holds_cor_all_rounds ? "true" : "false") << ',' << row.output_file;
  return line.str();
}

/// One run per value, each to `<dir>/<stem>_<axis>_<value>.jsonl`, plus `<dir>/sweep_<axis>.csv`.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& base, SweepAxis axis,
                                       const std::vector<std::string>& values, const std::filesystem::path& dir) {
  if (values.empty()) throw ConfigError("values: at least one sweep value is required");
  std::vector<ExperimentConfig> points;
  for (std::size_t i = 0; i < values.size(); ++i) points.push_back(sweep_point(base, axis, values[i], i));

  std::filesystem::create_directories(dir);
  const std::string stem = std::filesystem::path(base.output).stem().string();
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < points.size(); ++i) {
    SweepRow row;
    row.value = values[i];
    row.seed = points[i].seed;
    row.output_file = stem + "_" + sweep_axis_name(axis) + "_" + values[i] + ".jsonl";
    row.result = run_to_file(points[i], dir / row.output_file);
    rows.push_back(std::move(row));
  }
  std::ofstream csv(dir / ("sweep_" + sweep_axis_name(axis) + ".csv"), std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write sweep table in " + dir.string());
  csv << sweep_csv_header() << '\n';
  for (const auto& row : rows) csv << sweep_csv_row(axis, row) << '\n';
  return rows;
}

}  // namespace fedpb
