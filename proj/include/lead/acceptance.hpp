#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lead/bench.hpp"

namespace lead {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

using CriterionSink = std::function<void(const CriterionResult&)>;

// Checks over bench outputs, shared by `--assert` and the acceptance suite.
std::vector<CriterionResult> check_range(const ExperimentConfig& cfg,
                                         const std::map<std::pair<std::string, std::int64_t>, RangeStat>& stats);
CriterionResult check_lookup(const ExperimentConfig& cfg, const std::map<std::string, LookupStat>& stats);
CriterionResult check_balance(const std::map<int, BalanceStat>& stats);
CriterionResult check_drift(const UpdateStat& stats);
CriterionResult check_convergence(const ExperimentConfig& cfg, const UpdateStat& stats);
CriterionResult check_churn(const std::map<std::string, ChurnStat>& stats);

CriterionResult check_order_preservation(std::uint64_t seed);
CriterionResult check_range_exactness(const ExperimentConfig& cfg);
CriterionResult check_fingers(std::uint64_t seed);
CriterionResult check_gradients(std::uint64_t seed);
CriterionResult check_model_trend(std::uint64_t seed, std::uint32_t branching);
CriterionResult check_determinism(const ExperimentConfig& cfg);

/// All fourteen criteria in order; `sink` sees each result as it completes.
std::vector<CriterionResult> run_acceptance(const ExperimentConfig& cfg, const CriterionSink& sink = {});

std::string format_result(const CriterionResult& r);

}  // namespace lead
