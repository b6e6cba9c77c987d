#include "rflab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rflab/numerics.hpp"

namespace rflab {

static void check_rows(const DenseArray& a, const std::vector<int>& labels, const char* what) {
  if (a.shape.size() != 2) throw std::invalid_argument(std::string(what) + ": need a [n, K] array");
  if (a.rows() == 0) throw std::invalid_argument(std::string(what) + ": empty input");
  if (labels.size() != a.rows())
    throw std::invalid_argument(std::string(what) + ": label count mismatch");
  for (int y : labels)
    if (y < 0 || std::size_t(y) >= a.cols())
      throw std::invalid_argument(std::string(what) + ": label out of range");
}

double accuracy(const DenseArray& logits, const std::vector<int>& labels) {
  check_rows(logits, labels, "accuracy");
  std::size_t n = logits.rows(), K = logits.cols();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (logits(i, k) > logits(i, arg)) arg = k;
    if (arg == std::size_t(labels[i])) ++correct;
  }
  return double(correct) / double(n);
}

static void check_probs(const DenseArray& probs, const char* what) {
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      double p = probs(i, k);
      if (!(p >= 0.0 && p <= 1.0))
        throw std::invalid_argument(std::string(what) + ": probability outside [0,1]");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-6)
      throw std::invalid_argument(std::string(what) + ": row does not sum to 1");
  }
}

double ece(const DenseArray& probs, const std::vector<int>& labels, std::size_t bins) {
  check_rows(probs, labels, "ece");
  if (bins < 1) throw std::invalid_argument("ece: need at least one bin");
  check_probs(probs, "ece");
  std::size_t n = probs.rows(), K = probs.cols();
  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t arg = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (probs(i, k) > probs(i, arg)) arg = k;
    double conf = probs(i, arg);
    // Bin b covers (b/bins, (b+1)/bins]; confidence is always > 0.
    std::size_t b = static_cast<std::size_t>(std::ceil(conf * double(bins))) - 1;
    if (b >= bins) b = bins - 1;
    conf_sum[b] += conf;
    acc_sum[b] += arg == std::size_t(labels[i]) ? 1.0 : 0.0;
    count[b] += 1;
  }
  double e = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    double cb = double(count[b]);
    e += (cb / double(n)) * std::abs(acc_sum[b] / cb - conf_sum[b] / cb);
  }
  return e;
}

double nll(const DenseArray& probs, const std::vector<int>& labels) {
  check_rows(probs, labels, "nll");
  check_probs(probs, "nll");
  double s = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i)
    s -= std::log(probs(i, std::size_t(labels[i])));
  return s / double(probs.rows());
}

double nll_from_logits(const DenseArray& logits, const std::vector<int>& labels) {
  check_rows(logits, labels, "nll");
  std::size_t n = logits.rows(), K = logits.cols();
  std::vector<double> row(K);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < K; ++k) row[k] = logits(i, k);
    s += cross_entropy(row, std::size_t(labels[i]));
  }
  return s / double(n);
}

double pearson_cc(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("pearson_cc: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("pearson_cc: need at least 2 points");
  double n = double(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i] / n;
    my += ys[i] / n;
  }
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw std::invalid_argument("pearson_cc: zero variance input");
  return sxy / std::sqrt(sxx * syy);
}

double energy_gap(const VisionParams& theta, const VisionParams& theta0, const TextParams& phi,
                  const DenseArray& inputs, const std::vector<TokenSeq>& pool) {
  if (inputs.rows() == 0) throw std::invalid_argument("energy_gap: empty inputs");
  if (pool.empty()) throw std::invalid_argument("energy_gap: empty token pool");
  DenseArray g = text_forward(phi, pool);
  DenseArray f = vision_forward(theta, inputs);
  DenseArray f0 = vision_forward(theta0, inputs);
  std::size_t n = inputs.rows(), M = pool.size(), D = g.cols();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < M; ++m) {
      double d = 0.0;
      for (std::size_t j = 0; j < D; ++j) d += (f(i, j) - f0(i, j)) * g(m, j);
      acc += d * d;
    }
  return acc / (double(n) * double(M));
}

double feature_distortion(const VisionParams& theta, const VisionParams& theta0,
                          const DenseArray& inputs) {
  if (inputs.rows() == 0) throw std::invalid_argument("feature_distortion: empty inputs");
  DenseArray f = vision_forward(theta, inputs);
  DenseArray f0 = vision_forward(theta0, inputs);
  std::size_t n = inputs.rows(), D = f.cols();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < D; ++j) {
      double d = f(i, j) - f0(i, j);
      s += d * d;
    }
    acc += std::sqrt(s);
  }
  return acc / double(n);
}

nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json domains = nlohmann::json::array();
  for (const DomainMetrics& d : r.domains) {
    domains.push_back({{"name", d.name},
                       {"accuracy", d.accuracy},
                       {"ece", d.ece},
                       {"nll", d.nll},
                       {"feature_distortion", d.feature_distortion}});
  }
  return {{"metadata", {{"method", r.method}, {"seed", r.seed}, {"config_hash", r.config_hash}}},
          {"metrics",
           {{"domains", domains},
            {"energy_gap", r.energy_gap},
            {"shift_acc_mean", r.shift_acc_mean},
            {"rel_shift_acc", r.rel_shift_acc}}}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  const auto& meta = j.at("metadata");
  r.method = meta.at("method").get<std::string>();
  r.seed = meta.at("seed").get<std::uint64_t>();
  r.config_hash = meta.at("config_hash").get<std::string>();
  const auto& m = j.at("metrics");
  for (const auto& d : m.at("domains")) {
    DomainMetrics dm;
    dm.name = d.at("name").get<std::string>();
    dm.accuracy = d.at("accuracy").get<double>();
    dm.ece = d.at("ece").get<double>();
    dm.nll = d.at("nll").get<double>();
    dm.feature_distortion = d.at("feature_distortion").get<double>();
    r.domains.push_back(dm);
  }
  r.energy_gap = m.at("energy_gap").get<double>();
  r.shift_acc_mean = m.at("shift_acc_mean").get<double>();
  r.rel_shift_acc = m.at("rel_shift_acc").get<double>();
  return r;
}

}  // namespace rflab
