#pragma once
// Experiment configuration: a JSON document parsed strictly. Unknown keys at
// any level fail the parse, and every numeric field is range-checked with a
// message naming the field and the allowed range.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedpb/data.hpp"
#include "fedpb/fed.hpp"

namespace fedpb {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DatasetSource { synthetic, csv, idx };

struct DatasetConfig {
  DatasetSource source = DatasetSource::synthetic;
  // synthetic
  std::size_t per_client = 200;
  std::size_t dim = 10;
  std::size_t classes = 3;
  double skew = 0.0;
  double center_scale = 1.5;
  double offset_scale = 2.0;
  double noise_stddev = 1.0;
  // csv
  std::string path;
  bool has_header = false;
  // idx
  std::string images;
  std::string labels;
  std::optional<std::size_t> num_classes;
};

struct PartitionConfig {
  // "natural" keeps the per-client generation of the synthetic source.
  std::string scheme = "natural";
  std::size_t num_clients = 10;
  std::vector<double> ratios;
  double alpha = 0.5;
  std::size_t min_client_samples = 10;
  double test_fraction = 0.2;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  PartitionConfig partition;
  FederatedConfig federated;
  std::size_t rounds = 30;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> data_seed;  // defaults to seed
  std::string output = "rounds.jsonl";
  bool record_wall_clock = false;

  std::uint64_t effective_data_seed() const { return data_seed.value_or(seed); }
};

namespace detail {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& obj, std::string path, std::vector<std::string>& unknown)
      : obj_(obj), path_(std::move(path)), unknown_(unknown) {
    if (!obj_.is_object()) throw ConfigError(name_or_root() + ": expected a JSON object");
  }
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  ~Reader() {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& item : obj_.items()) {
      if (!seen_.count(item.key())) unknown_.push_back(qualified(item.key()));
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key) && !obj_.at(key).is_null();
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = obj_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(qualified(key) + ": wrong type (" + std::string(obj_.at(key).type_name()) + ")");
    }
  }

  template <typename T>
  void read(const std::string& key, std::optional<T>& out) {
    if (!has(key)) return;
    T v{};
    read(key, v);
    out = v;
  }

  void read_unsigned(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
      throw ConfigError(qualified(key) + ": must be a nonnegative integer");
    }
    out = v.get<std::size_t>();
  }

  void read_u64(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const json& v = obj_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError(qualified(key) + ": must be a nonnegative integer");
    }
    out = v.get<std::uint64_t>();
  }

  const json* child(const std::string& key) {
    if (!has(key)) return nullptr;
    return &obj_.at(key);
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string name_or_root() const { return path_.empty() ? "config" : path_; }

  const json& obj_;
  std::string path_;
  std::vector<std::string>& unknown_;
  std::set<std::string> seen_;
};

[[noreturn]] inline void range_error(const std::string& field, const std::string& range, double got) {
  std::ostringstream msg;
  msg << field << ": must be in " << range << ", got " << got;
  throw ConfigError(msg.str());
}

template <typename Enum>
Enum parse_enum(const std::string& field, const std::string& value,
                std::initializer_list<std::pair<const char*, Enum>> options) {
  std::string names;
  for (const auto& [name, e] : options) {
    if (value == name) return e;
    names += names.empty() ? name : std::string(" | ") + name;
  }
  throw ConfigError(field + ": unknown value '" + value + "', expected one of {" + names + "}");
}

}  // namespace detail

inline PartitionScheme partition_scheme_from(const std::string& name) {
  return detail::parse_enum<PartitionScheme>("partition.scheme", name,
                                             {{"balanced", PartitionScheme::balanced},
                                              {"unbalanced", PartitionScheme::unbalanced},
                                              {"dirichlet", PartitionScheme::dirichlet}});
}

inline PriorMode prior_mode_from(const std::string& name) {
  return detail::parse_enum<PriorMode>(
      "prior_mode", name,
      {{"data_dependent", PriorMode::data_dependent}, {"data_independent", PriorMode::data_independent}});
}

/// Range checks for a fully populated config.
inline void validate(const ExperimentConfig& cfg) {
  using detail::range_error;
  const auto& d = cfg.dataset;
  const auto& p = cfg.partition;
  const auto& f = cfg.federated;
  if (d.source == DatasetSource::synthetic) {
    if (d.per_client == 0) range_error("dataset.per_client", "[1, inf)", 0);
    if (d.dim == 0) range_error("dataset.dim", "[1, inf)", 0);
    if (d.classes < 2) range_error("dataset.classes", "[2, inf)", static_cast<double>(d.classes));
    if (!(d.skew >= 0.0 && d.skew <= 1.0)) range_error("dataset.skew", "[0,1]", d.skew);
    if (!(d.noise_stddev > 0.0)) range_error("dataset.noise_stddev", "(0, inf)", d.noise_stddev);
  } else if (d.source == DatasetSource::csv) {
    if (d.path.empty()) throw ConfigError("dataset.path: required for the csv source");
  } else {
    if (d.images.empty() || d.labels.empty()) {
      throw ConfigError("dataset.images / dataset.labels: required for the idx source");
    }
  }
  if (p.num_clients == 0) range_error("partition.num_clients", "[1, inf)", 0);
  if (p.scheme == "natural") {
    if (d.source != DatasetSource::synthetic) {
      throw ConfigError("partition.scheme: 'natural' is only available for the synthetic source");
    }
  } else {
    partition_scheme_from(p.scheme);
  }
  if (p.scheme == "unbalanced") {
    if (p.ratios.size() != p.num_clients) {
      throw ConfigError("partition.ratios: need " + std::to_string(p.num_clients) + " entries, got " +
                        std::to_string(p.ratios.size()));
    }
    double sum = 0.0;
    for (double r : p.ratios) {
      if (!(r > 0.0)) range_error("partition.ratios", "(0, 1]", r);
      sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) range_error("partition.ratios (sum)", "1 +/- 1e-9", sum);
  }
  if (p.scheme == "dirichlet" && !(p.alpha > 0.0)) range_error("partition.alpha", "(0, inf)", p.alpha);
  if (!(p.test_fraction > 0.0 && p.test_fraction < 1.0)) range_error("partition.test_fraction", "(0,1)", p.test_fraction);

  if (cfg.rounds == 0) range_error("rounds", "[1, inf)", 0);
  if (f.local_steps == 0) range_error("local_steps", "[1, inf)", 0);
  if (f.batch_size == 0) range_error("batch_size", "[1, inf)", 0);
  if (!(f.learning_rate >= 0.0) || !std::isfinite(f.learning_rate)) {
    range_error("learning_rate", "[0, inf)", f.learning_rate);
  }
  if (f.mc_samples == 0) range_error("mc_samples", "[1, inf)", 0);
  if (f.mc_train_samples == 0) range_error("mc_train_samples", "[1, inf)", 0);
  if (!(f.delta > 0.0 && f.delta < 1.0)) range_error("delta", "(0,1)", f.delta);
  if (f.lambda_mode == LambdaSelection::fixed && !(f.lambda > 0.0)) range_error("lambda", "(0, inf)", f.lambda);
  if (f.loss_bound_c && !(*f.loss_bound_c > 0.0)) range_error("loss_bound_c", "(0, inf)", *f.loss_bound_c);
  if (!(f.prior_stddev > 0.0)) range_error("prior_stddev", "(0, inf)", f.prior_stddev);
  if (!std::isfinite(f.init_rho)) throw ConfigError("model.init_rho: must be finite");
  for (std::size_t h : f.hidden) {
    if (h == 0) range_error("model.hidden", "[1, inf)", 0);
  }
}

/// Parses and validates. Relative dataset paths resolve against `base_dir`.
inline ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {}) {
  ExperimentConfig cfg;
  auto& f = cfg.federated;
  std::vector<std::string> unknown;
  {
    detail::Reader top(doc, "", unknown);
    if (const auto* ds = top.child("dataset")) {
      detail::Reader r(*ds, "dataset", unknown);
      std::string source = "synthetic";
      r.read("source", source);
      cfg.dataset.source = detail::parse_enum<DatasetSource>(
          "dataset.source", source,
          {{"synthetic", DatasetSource::synthetic}, {"csv", DatasetSource::csv}, {"idx", DatasetSource::idx}});
      auto& d = cfg.dataset;
      r.read_unsigned("per_client", d.per_client);
      r.read_unsigned("dim", d.dim);
      r.read_unsigned("classes", d.classes);
      r.read("skew", d.skew);
      r.read("center_scale", d.center_scale);
      r.read("offset_scale", d.offset_scale);
      r.read("noise_stddev", d.noise_stddev);
      r.read("path", d.path);
      r.read("has_header", d.has_header);
      r.read("images", d.images);
      r.read("labels", d.labels);
      if (r.has("num_classes")) {
        std::size_t n = 0;
        r.read_unsigned("num_classes", n);
        d.num_classes = n;
      }
      auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative() && !base_dir.empty()) p = (base_dir / p).string();
      };
      resolve(d.path);
      resolve(d.images);
      resolve(d.labels);
    }
    if (const auto* ps = top.child("partition")) {
      detail::Reader r(*ps, "partition", unknown);
      auto& p = cfg.partition;
      r.read("scheme", p.scheme);
      r.read_unsigned("num_clients", p.num_clients);
      r.read("ratios", p.ratios);
      r.read("alpha", p.alpha);
      r.read_unsigned("min_client_samples", p.min_client_samples);
      r.read("test_fraction", p.test_fraction);
    }
    if (const auto* ms = top.child("model")) {
      detail::Reader r(*ms, "model", unknown);
      r.read("hidden", f.hidden);
      r.read("init_rho", f.init_rho);
    }
    if (const auto* gs = top.child("lambda_grid")) {
      detail::Reader r(*gs, "lambda_grid", unknown);
      double min_value = 1.0, ratio = std::sqrt(2.0);
      std::size_t size = 32;
      r.read("min", min_value);
      r.read("ratio", ratio);
      r.read_unsigned("size", size);
      if (!(min_value > 0.0)) detail::range_error("lambda_grid.min", "(0, inf)", min_value);
      if (!(ratio > 1.0)) detail::range_error("lambda_grid.ratio", "(1, inf)", ratio);
      if (size == 0) detail::range_error("lambda_grid.size", "[1, inf)", 0);
      f.lambda_grid = geometric_grid(min_value, ratio, size);
    }
    top.read_unsigned("rounds", cfg.rounds);
    top.read_unsigned("local_steps", f.local_steps);
    top.read_unsigned("batch_size", f.batch_size);
    top.read("learning_rate", f.learning_rate);
    top.read_unsigned("mc_samples", f.mc_samples);
    top.read_unsigned("mc_train_samples", f.mc_train_samples);
    std::string s;
    if (top.has("lambda_mode")) {
      top.read("lambda_mode", s);
      f.lambda_mode = detail::parse_enum<LambdaSelection>(
          "lambda_mode", s, {{"fixed", LambdaSelection::fixed}, {"auto", LambdaSelection::automatic}});
    }
    top.read("lambda", f.lambda);
    top.read("delta", f.delta);
    top.read("loss_bound_c", f.loss_bound_c);
    if (top.has("prior_mode")) {
      top.read("prior_mode", s);
      f.prior_mode = prior_mode_from(s);
    }
    if (top.has("prior_source")) {
      top.read("prior_source", s);
      f.prior_source = detail::parse_enum<PriorSource>(
          "prior_source", s, {{"global", PriorSource::global}, {"local_posterior", PriorSource::local_posterior}});
    }
    top.read("prior_stddev", f.prior_stddev);
    if (top.has("gibbs_temperature")) {
      top.read("gibbs_temperature", s);
      f.gibbs_temperature = detail::parse_enum<GibbsTemperature>(
          "gibbs_temperature", s,
          {{"objective_consistent", GibbsTemperature::objective_consistent},
           {"paper_literal", GibbsTemperature::paper_literal}});
    }
    if (top.has("bound_n")) {
      top.read("bound_n", s);
      f.bound_n = detail::parse_enum<BoundSampleSize>("bound_n", s,
                                                      {{"min", BoundSampleSize::min}, {"mean", BoundSampleSize::mean}});
    }
    if (top.has("report_mode")) {
      top.read("report_mode", s);
      f.report_mode = detail::parse_enum<ReportMode>(
          "report_mode", s,
          {{"posterior", ReportMode::posterior}, {"sufficient_stats", ReportMode::sufficient_stats}});
    }
    top.read("parallel_clients", f.parallel);
    top.read_unsigned("threads", f.threads);
    top.read_u64("seed", cfg.seed);
    if (top.has("data_seed")) {
      std::uint64_t v = 0;
      top.read_u64("data_seed", v);
      cfg.data_seed = v;
    }
    top.read("output", cfg.output);
    top.read("record_wall_clock", cfg.record_wall_clock);
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError("unknown configuration keys: " + list);
  }
  f.seed = cfg.seed;
  validate(cfg);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

}  // namespace fedpb
