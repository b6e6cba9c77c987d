#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rflab/data.hpp"
#include "rflab/finetune.hpp"
#include "rflab/model.hpp"
#include "rflab/pretrain.hpp"

#include <json.hpp>

namespace rflab {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PosthocConfig {
  std::vector<double> wise_lambdas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<std::string> wise_methods{"FT", "LIPSUM"};
  std::vector<double> tpgm_regs{0.0, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0};
  std::vector<std::string> tpgm_methods{"FT"};
  std::size_t tpgm_steps = 200;
  double tpgm_lr = 1e-2;
  std::vector<double> soup_lr_factors{0.5, 1.0, 2.0};
  std::vector<std::size_t> soup_step_counts{300, 500};
  std::size_t ensemble_max = 4;
};

struct EvalConfig {
  std::size_t token_pool = 2000;
  std::size_t ece_bins = 15;
  std::string energy_inputs = "reference_test";  // or "reference_val"
};

// Per-method regularization coefficients; negative entries fall back to the
// built-in defaults.
struct LambdaConfig {
  double l2sp = 3e-4;
  double kd = 0.1;
  double carft = 1.0;
  double lipsum = 1.0;
  double featkd = 1.0;
};

struct ExperimentConfig {
  BenchmarkSpec benchmark;
  ModelConfig model;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  LambdaConfig lambdas;
  std::vector<std::string> methods{"FT", "L2SP", "KD", "CARFT", "LIPSUM", "EMA"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  PosthocConfig posthoc;
  EvalConfig eval;
  std::string output_dir = "runs/default";

  double lambda_for(Variant v) const;
};

// Strict parse: unknown fields anywhere are an error, as are invariant
// violations. The benchmark/pretrain/finetune seeds come from the sweep's
// seed list, not the file.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config_file(const std::string& path);

// FNV-1a over the canonical dump; identifies the config in reports.
std::string config_hash(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);

}  // namespace rflab
