#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rflab/array.hpp"
#include "rflab/model.hpp"

#include <json.hpp>

namespace rflab {

// Fraction of rows whose argmax matches the label; ties go to the lowest
// class index.
double accuracy(const DenseArray& logits, const std::vector<int>& labels);

// Expected calibration error over equal-width confidence bins on (0, 1].
double ece(const DenseArray& probs, const std::vector<int>& labels, std::size_t bins = 15);

// Mean negative log probability of the true label. The probability-input form
// validates its rows; the logit form goes through log_softmax and is what the
// evaluation pipeline uses.
double nll(const DenseArray& probs, const std::vector<int>& labels);
double nll_from_logits(const DenseArray& logits, const std::vector<int>& labels);

double pearson_cc(const std::vector<double>& xs, const std::vector<double>& ys);

// Mean over inputs and token pool of the squared energy difference between
// the two vision encoders under a shared text encoder.
double energy_gap(const VisionParams& theta, const VisionParams& theta0, const TextParams& phi,
                  const DenseArray& inputs, const std::vector<TokenSeq>& pool);

// Mean Euclidean distance between features of the two encoders.
double feature_distortion(const VisionParams& theta, const VisionParams& theta0,
                          const DenseArray& inputs);

struct DomainMetrics {
  std::string name;
  double accuracy = 0.0;
  double ece = 0.0;
  double nll = 0.0;
  double feature_distortion = 0.0;
};

struct MetricsReport {
  std::string method;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<DomainMetrics> domains;  // reference first, then shifted
  double energy_gap = 0.0;
  double shift_acc_mean = 0.0;
  double rel_shift_acc = 0.0;  // shift_acc_mean / reference accuracy
};

nlohmann::json report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

}  // namespace rflab
