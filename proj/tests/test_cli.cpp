#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "fedpb/config.hpp"
#include "fedpb/experiment.hpp"
#include "fedpb/report.hpp"

using namespace fedpb;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string err;
};

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("fedpb_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

CliResult run_cli(const std::string& args, const TempDir& dir) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + FEDPB_CLI_PATH + "\" " + args + " 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = read_file(err);
  return r;
}

const char* kMinimal = R"({
  "dataset": {"source": "synthetic", "per_client": 30, "dim": 3, "classes": 2},
  "partition": {"scheme": "natural", "num_clients": 1},
  "model": {"hidden": [4]},
  "rounds": 1,
  "local_steps": 3,
  "mc_samples": 2,
  "seed": 5,
  "output": "rounds.jsonl"
})";

const char* kSmall = R"({
  // comments are allowed
  "dataset": {"source": "synthetic", "per_client": 30, "dim": 3, "classes": 3, "skew": 0.5},
  "partition": {"scheme": "natural", "num_clients": 3},
  "model": {"hidden": [4]},
  "rounds": 2,
  "local_steps": 3,
  "mc_samples": 2,
  "seed": 9,
  "output": "small.jsonl"
})";

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST(Cli, MinimalRunWritesRoundAndSummary) {
  TempDir dir;
  write_file(dir / "cfg.json", kMinimal);
  const auto r = run_cli("run --config \"" + (dir / "cfg.json").string() + "\" --output-dir \"" +
                             (dir / "out").string() + "\"",
                         dir);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto records = read_jsonl(dir / "out" / "rounds.jsonl");
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0]["type"], "round");
  EXPECT_TRUE(missing_round_fields(records[0]).empty());
  EXPECT_EQ(records[1]["type"], "summary");
  EXPECT_TRUE(records[1].contains("final_certificate_t1"));
  EXPECT_FALSE(records[1].contains("wall_clock_seconds"));
}

TEST(Cli, InvalidDeltaNamesFieldAndRange) {
  TempDir dir;
  auto doc = nlohmann::json::parse(kMinimal);
  doc["delta"] = 1.5;
  write_file(dir / "cfg.json", doc.dump());
  const auto r = run_cli("run --config \"" + (dir / "cfg.json").string() + "\"", dir);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("delta"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("(0,1)"), std::string::npos) << r.err;
}

TEST(Cli, UnknownKeysAreListed) {
  TempDir dir;
  auto doc = nlohmann::json::parse(kMinimal);
  doc["learning_rat"] = 0.1;
  doc["partition"]["alpah"] = 0.5;
  write_file(dir / "cfg.json", doc.dump());
  const auto r = run_cli("run --config \"" + (dir / "cfg.json").string() + "\"", dir);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("learning_rat"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("partition.alpah"), std::string::npos) << r.err;
}

TEST(Cli, MissingConfigFileFails) {
  TempDir dir;
  const auto r = run_cli("run --config \"" + (dir / "nope.json").string() + "\"", dir);
  EXPECT_NE(r.exit_code, 0);
}

TEST(Cli, RerunsAreByteIdentical) {
  TempDir dir;
  write_file(dir / "cfg.json", kSmall);
  for (const char* sub : {"a", "b"}) {
    const auto r = run_cli("run --config \"" + (dir / "cfg.json").string() + "\" --output-dir \"" +
                               (dir / sub).string() + "\"",
                           dir);
    ASSERT_EQ(r.exit_code, 0) << r.err;
  }
  const auto a = read_file(dir / "a" / "small.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, read_file(dir / "b" / "small.jsonl"));
}

TEST(Cli, SeedOverrideChangesOutput) {
  TempDir dir;
  write_file(dir / "cfg.json", kSmall);
  const std::string cfg = "--config \"" + (dir / "cfg.json").string() + "\"";
  ASSERT_EQ(run_cli("run " + cfg + " --output-dir \"" + (dir / "a").string() + "\"", dir).exit_code, 0);
  ASSERT_EQ(run_cli("run " + cfg + " --seed 123 --output-dir \"" + (dir / "b").string() + "\"", dir).exit_code, 0);
  EXPECT_NE(read_file(dir / "a" / "small.jsonl"), read_file(dir / "b" / "small.jsonl"));
}

TEST(Cli, ClientSweepWritesRunsAndTable) {
  TempDir dir;
  auto doc = nlohmann::json::parse(kMinimal);
  doc["dataset"]["per_client"] = 20;
  write_file(dir / "cfg.json", doc.dump());
  const auto r = run_cli("sweep --config \"" + (dir / "cfg.json").string() +
                             "\" --axis clients --values 10,20,50 --output-dir \"" + (dir / "out").string() + "\"",
                         dir);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  for (const char* k : {"10", "20", "50"}) {
    const auto records = read_jsonl(dir / "out" / (std::string("rounds_clients_") + k + ".jsonl"));
    ASSERT_EQ(records.size(), 2u);
    EXPECT_EQ(records[0]["clients"].size(), static_cast<std::size_t>(std::stoi(k)));
  }
  std::ifstream csv(dir / "out" / "sweep_clients.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], sweep_csv_header());
  EXPECT_EQ(lines[1].rfind("clients,10,", 0), 0u);
  EXPECT_EQ(lines[3].rfind("clients,50,", 0), 0u);
}

TEST(Cli, PriorModeSweepHasTwoRows) {
  TempDir dir;
  auto cfg = parse_config(nlohmann::json::parse(kMinimal, nullptr, true, true));
  const auto rows = run_sweep(cfg, SweepAxis::prior_mode, {"data_dependent", "data_independent"}, dir.path());
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].value, "data_dependent");
  EXPECT_EQ(rows[1].value, "data_independent");
  std::ifstream csv(dir / "sweep_prior_mode.csv");
  std::string line;
  std::size_t n = 0;
  while (std::getline(csv, line)) ++n;
  EXPECT_EQ(n, 3u);
}

TEST(Cli, EmptySweepValuesRejected) {
  TempDir dir;
  auto cfg = parse_config(nlohmann::json::parse(kMinimal));
  EXPECT_THROW(run_sweep(cfg, SweepAxis::clients, {}, dir.path()), ConfigError);
  write_file(dir / "cfg.json", kMinimal);
  const auto r = run_cli("sweep --config \"" + (dir / "cfg.json").string() + "\" --axis clients --values ,", dir);
  EXPECT_NE(r.exit_code, 0);
}

TEST(Cli, BadSweepValueRejected) {
  auto cfg = parse_config(nlohmann::json::parse(kMinimal));
  EXPECT_THROW(sweep_point(cfg, SweepAxis::clients, "ten", 0), ConfigError);
  EXPECT_THROW(sweep_point(cfg, SweepAxis::prior_mode, "flat", 0), ConfigError);
  EXPECT_THROW(sweep_axis_from("rounds"), ConfigError);
}

TEST(Config, DefaultsAndOverrides) {
  const auto cfg = parse_config(nlohmann::json::object());
  EXPECT_EQ(cfg.federated.delta, 0.05);
  EXPECT_EQ(cfg.federated.learning_rate, 1e-3);
  EXPECT_EQ(cfg.federated.mc_samples, 32u);
  EXPECT_EQ(cfg.partition.num_clients, 10u);
  EXPECT_EQ(cfg.federated.prior_mode, PriorMode::data_dependent);
  EXPECT_EQ(cfg.federated.lambda_mode, LambdaSelection::automatic);

  const auto c2 = parse_config(nlohmann::json::parse(R"({"lambda_mode": "fixed", "lambda": 4, "bound_n": "mean",
    "prior_mode": "data_independent", "gibbs_temperature": "paper_literal", "report_mode": "sufficient_stats"})"));
  EXPECT_EQ(c2.federated.lambda_mode, LambdaSelection::fixed);
  EXPECT_EQ(c2.federated.lambda, 4.0);
  EXPECT_EQ(c2.federated.bound_n, BoundSampleSize::mean);
  EXPECT_EQ(c2.federated.prior_mode, PriorMode::data_independent);
  EXPECT_EQ(c2.federated.gibbs_temperature, GibbsTemperature::paper_literal);
  EXPECT_EQ(c2.federated.report_mode, ReportMode::sufficient_stats);
}

TEST(Config, RejectsBadValues) {
  auto expect_error = [](const char* text, const char* needle) {
    try {
      parse_config(nlohmann::json::parse(text));
      ADD_FAILURE() << "accepted " << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_error(R"({"delta": 0})", "delta");
  expect_error(R"({"rounds": 0})", "rounds");
  expect_error(R"({"rounds": -1})", "rounds");
  expect_error(R"({"rounds": "ten"})", "rounds");
  expect_error(R"({"prior_mode": "flat"})", "prior_mode");
  expect_error(R"({"partition": {"scheme": "unbalanced", "num_clients": 2, "ratios": [0.5]}})", "partition.ratios");
  expect_error(R"({"partition": {"scheme": "dirichlet", "alpha": 0}})", "partition.alpha");
  expect_error(R"({"dataset": {"source": "csv"}})", "dataset.path");
  expect_error(R"({"dataset": {"source": "csv", "path": "x.csv"}, "partition": {"scheme": "natural"}})", "natural");
  expect_error(R"({"lambda_grid": {"ratio": 1.0}})", "lambda_grid.ratio");
}

TEST(Config, RelativeDatasetPathsResolveAgainstConfigDir) {
  const auto cfg = parse_config(nlohmann::json::parse(R"({"dataset": {"source": "csv", "path": "d.csv"},
    "partition": {"scheme": "balanced"}})"),
                                "/data/exp");
  EXPECT_EQ(cfg.dataset.path, "/data/exp/d.csv");
}

TEST(Report, ValidatorRejectsMissingFields) {
  TempDir dir;
  auto cfg = parse_config(nlohmann::json::parse(kMinimal));
  std::ostringstream out;
  run_experiment(cfg, &out);
  auto record = nlohmann::json::parse(out.str().substr(0, out.str().find('\n')));
  EXPECT_TRUE(missing_round_fields(record).empty());
  record.erase("kl_sum");
  record["clients"][0].erase("weight");
  const auto missing = missing_round_fields(record);
  ASSERT_EQ(missing.size(), 2u);
  EXPECT_EQ(missing[0], "kl_sum");
  EXPECT_EQ(missing[1], "clients[0].weight");
  EXPECT_FALSE(missing_round_fields(nlohmann::json::array()).empty());
}

TEST(Report, WallClockIsOptIn) {
  auto doc = nlohmann::json::parse(kMinimal);
  doc["record_wall_clock"] = true;
  std::ostringstream out;
  run_experiment(parse_config(doc), &out);
  const auto text = out.str();
  const auto last = text.substr(text.rfind('\n', text.size() - 2) + 1);
  EXPECT_TRUE(nlohmann::json::parse(last).contains("wall_clock_seconds"));
}

TEST(Experiment, CsvSourceRuns) {
  TempDir dir;
  std::string csv = "x0,x1,label\n";
  for (int i = 0; i < 60; ++i) {
    const int label = i % 2;
    csv += std::to_string(label * 2.0 + 0.1 * (i % 5)) + "," + std::to_string(-label + 0.05 * i) + "," +
           std::to_string(label) + "\n";
  }
  write_file(dir / "d.csv", csv);
  write_file(dir / "cfg.json", R"({"dataset": {"source": "csv", "path": "d.csv", "has_header": true},
    "partition": {"scheme": "balanced", "num_clients": 3}, "rounds": 2, "local_steps": 3, "mc_samples": 2})");
  const auto cfg = load_config(dir / "cfg.json");
  const auto res = run_experiment(cfg);
  ASSERT_EQ(res.rounds.size(), 2u);
  EXPECT_EQ(res.rounds[0].clients.size(), 3u);
  EXPECT_EQ(res.rounds[0].clients[0].n_train + res.rounds[0].clients[0].n_test, 20u);
}
