#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmc/eval.hpp"
#include "dmc/trainer.hpp"

namespace dmc::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kInvalidArgs = 2,
  kIoFailure = 3,
  kNumericalFailure = 4,
};

struct DataConfig {
  std::size_t concept_count = 360;
  std::size_t function_count = 40;
  std::size_t n_train = 5000;
  std::size_t n_validation = 500;
  std::size_t n_test = 1000;
  std::size_t len_min = 3;
  std::size_t len_max = 12;
  double noise_rate = 0.1;
  WordOrder order_a = WordOrder::Identity;
  WordOrder order_b = WordOrder::Reverse;
  std::size_t n_sts = 1000;
  std::size_t n_nli = 6000;
  std::size_t mining_n_a = 1000;
  std::size_t mining_n_b = 1000;
  double mining_parallel_fraction = 0.1;
};

struct EvalConfig {
  std::size_t k = 3;
  MarginVariant margin = MarginVariant::Distance;
  std::string split = "test";
};

// Everything a run needs; every field has a default and unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  TrainConfig train;
  bool use_nli = false;
  EvalConfig eval;
};

nlohmann::json to_json(const RunConfig& config);
/// Throws ConfigInvalid for unknown keys, wrong types or invalid values.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Entry point shared by the executable and the tests. argv[0] is the program name.
int run_command(const std::vector<std::string>& argv);

}  // namespace dmc::cli
