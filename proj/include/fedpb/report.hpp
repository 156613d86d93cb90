#pragma once
// JSON-lines records for round metrics and run summaries.
//
// Round record fields (all required, see round_record_fields()):
//   type="round", round, train_risk, test_risk, gen_gap, kl_sum,
//   complexity_t1, complexity_cor, bound_t1, bound_cor, lambda_used,
//   lambda_star, loss_bound_c, bound_n, holds_t1, holds_cor,
//   global_test_risk, global_test_accuracy, clients[]
// Each clients[] entry: id, n_train, n_test, weight, train_risk, test_risk,
//   train_accuracy, test_accuracy, kl, weighted_kl, local_objective.

#include <array>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fedpb/fed.hpp"
#include "fedpb/pacbayes.hpp"

namespace fedpb {

inline constexpr std::array<std::string_view, 19> round_record_fields() {
  return {"type",          "round",          "train_risk", "test_risk",        "gen_gap",
          "kl_sum",        "complexity_t1",  "complexity_cor", "bound_t1",     "bound_cor",
          "lambda_used",   "lambda_star",    "loss_bound_c", "bound_n",        "holds_t1",
          "holds_cor",     "global_test_risk", "global_test_accuracy", "clients"};
}

inline constexpr std::array<std::string_view, 11> client_record_fields() {
  return {"id",        "n_train",        "n_test", "weight",     "train_risk",     "test_risk",
          "train_accuracy", "test_accuracy", "kl",   "weighted_kl", "local_objective"};
}

inline nlohmann::ordered_json to_json(const ClientMetrics& m) {
  return {{"id", m.id},
          {"n_train", m.n_train},
          {"n_test", m.n_test},
          {"weight", m.weight},
          {"train_risk", m.train_risk},
          {"test_risk", m.test_risk},
          {"train_accuracy", m.train_accuracy},
          {"test_accuracy", m.test_accuracy},
          {"kl", m.kl},
          {"weighted_kl", m.weighted_kl},
          {"local_objective", m.local_objective}};
}

inline nlohmann::ordered_json to_json(const RoundMetrics& m) {
  nlohmann::ordered_json j = {{"type", "round"},
                              {"round", m.round},
                              {"train_risk", m.train_risk},
                              {"test_risk", m.test_risk},
                              {"gen_gap", m.gen_gap},
                              {"kl_sum", m.kl_sum},
                              {"complexity_t1", m.complexity_t1},
                              {"complexity_cor", m.complexity_cor},
                              {"bound_t1", m.bound_t1},
                              {"bound_cor", m.bound_cor},
                              {"lambda_used", m.lambda_used},
                              {"lambda_star", m.lambda_star},
                              {"loss_bound_c", m.loss_bound_c},
                              {"bound_n", m.bound_n},
                              {"holds_t1", m.holds_t1},
                              {"holds_cor", m.holds_cor},
                              {"global_test_risk", m.global_test_risk},
                              {"global_test_accuracy", m.global_test_accuracy}};
  auto clients = nlohmann::ordered_json::array();
  for (const auto& c : m.clients) clients.push_back(to_json(c));
  j["clients"] = std::move(clients);
  return j;
}

inline nlohmann::ordered_json to_json(const BoundCertificate& c) {
  return {{"empirical_risk", c.empirical_risk},
          {"complexity", c.complexity},
          {"bound_value", c.bound_value},
          {"measured_population_proxy", c.measured_population_proxy},
          {"lambda", c.lambda},
          {"holds", c.holds}};
}

/// Names of required fields missing from a round record (empty when valid).
inline std::vector<std::string> missing_round_fields(const nlohmann::json& record) {
  std::vector<std::string> missing;
  if (!record.is_object()) return {"<record is not an object>"};
  for (auto f : round_record_fields()) {
    if (!record.contains(std::string(f))) missing.emplace_back(f);
  }
  if (record.contains("clients")) {
    if (!record["clients"].is_array()) {
      missing.emplace_back("clients[]");
    } else {
      for (std::size_t i = 0; i < record["clients"].size(); ++i) {
        for (auto f : client_record_fields()) {
          if (!record["clients"][i].contains(std::string(f))) {
            missing.push_back("clients[" + std::to_string(i) + "]." + std::string(f));
          }
        }
      }
    }
  }
  return missing;
}

inline void write_jsonl(std::ostream& out, const nlohmann::ordered_json& record) { out << record.dump() << '\n'; }

}  // namespace fedpb
