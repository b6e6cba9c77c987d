#include "rflab/posthoc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rflab/finetune.hpp"
#include "rflab/metrics.hpp"
#include "rflab/numerics.hpp"

namespace rflab {

ParamSet wise(const ParamSet& theta0, const ParamSet& thetaT, double lambda) {
  require_same_structure(theta0, thetaT);
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("wise: lambda outside [0,1]");
  if (lambda == 0.0) return theta0;
  if (lambda == 1.0) return thetaT;
  ParamSet out = theta0;
  auto io = out.begin();
  auto it = thetaT.begin();
  for (; io != out.end(); ++io, ++it)
    for (std::size_t i = 0; i < io->second.data.size(); ++i)
      io->second.data[i] = (1.0 - lambda) * io->second.data[i] + lambda * it->second.data[i];
  return out;
}

ParamSet tpgm_project(const ParamSet& theta0, const ParamSet& thetaT, const GammaVector& gamma) {
  require_same_structure(theta0, thetaT);
  ParamSet out = theta0;
  auto i0 = theta0.begin();
  auto iT = thetaT.begin();
  for (; i0 != theta0.end(); ++i0, ++iT) {
    auto g = gamma.find(i0->first);
    if (g == gamma.end()) throw std::invalid_argument("tpgm_project: missing gamma for " + i0->first);
    if (!(g->second >= 0.0)) throw std::invalid_argument("tpgm_project: negative gamma");
    double norm = 0.0;
    for (std::size_t i = 0; i < i0->second.data.size(); ++i) {
      double d = iT->second.data[i] - i0->second.data[i];
      norm += d * d;
    }
    norm = std::sqrt(norm);
    DenseArray& dst = out.at(i0->first);
    if (norm <= g->second || norm == 0.0) {
      dst = iT->second;  // inactive constraint: pass the layer through verbatim
      continue;
    }
    double scale = g->second / norm;
    for (std::size_t i = 0; i < dst.data.size(); ++i)
      dst.data[i] = i0->second.data[i] + scale * (iT->second.data[i] - i0->second.data[i]);
  }
  return out;
}

double tpgm_gamma_objective(const ParamSet& theta0, const ParamSet& thetaT, const GammaVector& gamma,
                            const Dataset& val, GammaVector* grad) {
  if (val.x.rows() == 0) throw std::invalid_argument("tpgm_gamma_objective: empty validation set");
  ParamSet projected = tpgm_project(theta0, thetaT, gamma);
  VisionParams vision;
  HeadWeights head;
  unpack_trainable(projected, vision, head);

  VisionParams gv = zeros_like(vision);
  DenseArray gw = DenseArray::zeros(head.W.shape);
  double nll = ce_loss(vision, head, val.x, val.labels, grad ? &gv : nullptr, grad ? &gw : nullptr);
  if (!grad) return nll;

  ParamSet pg = pack_trainable(gv, HeadWeights{gw});
  grad->clear();
  auto i0 = theta0.begin();
  auto iT = thetaT.begin();
  for (; i0 != theta0.end(); ++i0, ++iT) {
    double g_val = 0.0;
    double gam = gamma.at(i0->first);
    double norm = 0.0;
    for (std::size_t i = 0; i < i0->second.data.size(); ++i) {
      double d = iT->second.data[i] - i0->second.data[i];
      norm += d * d;
    }
    norm = std::sqrt(norm);
    // Inside the constraint the projection does not depend on gamma; on the
    // active side d(theta_proj)/d(gamma) = delta / ||delta||.
    if (norm > 0.0 && gam <= norm) {
      const DenseArray& gp = pg.at(i0->first);
      double dot = 0.0;
      for (std::size_t i = 0; i < gp.data.size(); ++i)
        dot += gp.data[i] * (iT->second.data[i] - i0->second.data[i]);
      g_val = dot / norm;
    }
    (*grad)[i0->first] = g_val;
  }
  return nll;
}

static double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
static double softplus_inv(double y) {
  if (y > 30.0) return y;
  if (y <= 0.0) return -30.0;
  return std::log(std::expm1(y));
}

GammaVector tpgm_optimize(const ParamSet& theta0, const ParamSet& thetaT, const Dataset& val,
                          std::size_t steps, double lr, double reg,
                          std::vector<double>* nll_trace) {
  if (steps < 1) throw std::invalid_argument("tpgm_optimize: need at least one step");
  if (val.x.rows() == 0) throw std::invalid_argument("tpgm_optimize: empty validation set");
  require_same_structure(theta0, thetaT);

  // rho is the softplus preimage of gamma, initialized at the per-layer
  // distance so the projection starts inactive.
  std::vector<std::string> names;
  std::vector<double> rho;
  auto i0 = theta0.begin();
  auto iT = thetaT.begin();
  for (; i0 != theta0.end(); ++i0, ++iT) {
    double norm = 0.0;
    for (std::size_t i = 0; i < i0->second.data.size(); ++i) {
      double d = iT->second.data[i] - i0->second.data[i];
      norm += d * d;
    }
    names.push_back(i0->first);
    rho.push_back(std::max(-30.0, softplus_inv(std::sqrt(norm))));
  }

  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> m(rho.size(), 0.0), v(rho.size(), 0.0);
  GammaVector gamma;
  for (std::size_t s = 0; s < steps; ++s) {
    gamma.clear();
    for (std::size_t i = 0; i < names.size(); ++i) gamma[names[i]] = softplus(rho[i]);
    GammaVector ggrad;
    double nll = tpgm_gamma_objective(theta0, thetaT, gamma, val, &ggrad);
    if (nll_trace) nll_trace->push_back(nll);
    double c1 = 1.0 - std::pow(b1, double(s + 1));
    double c2 = 1.0 - std::pow(b2, double(s + 1));
    for (std::size_t i = 0; i < rho.size(); ++i) {
      double sig = 1.0 / (1.0 + std::exp(-rho[i]));
      double g = (ggrad.at(names[i]) + reg) * sig;
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      rho[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
  gamma.clear();
  for (std::size_t i = 0; i < names.size(); ++i) gamma[names[i]] = softplus(rho[i]);
  if (nll_trace) nll_trace->push_back(tpgm_gamma_objective(theta0, thetaT, gamma, val, nullptr));
  return gamma;
}

static double pool_val_accuracy(const ParamSet& params, const Dataset& val) {
  VisionParams vision;
  HeadWeights head;
  unpack_trainable(params, vision, head);
  return accuracy(head_logits(head, vision_forward(vision, val.x)), val.labels);
}

static ParamSet uniform_average(const std::vector<ParamSet>& pool,
                                const std::vector<std::size_t>& members) {
  ParamSet avg = zeros_like(pool[members[0]]);
  for (std::size_t idx : members) add_scaled(avg, 1.0 / double(members.size()), pool[idx]);
  return avg;
}

static std::vector<std::size_t> accuracy_order(const std::vector<ParamSet>& pool,
                                               const Dataset& val, std::vector<double>& accs) {
  accs.resize(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) accs[i] = pool_val_accuracy(pool[i], val);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return accs[a] > accs[b]; });
  return order;
}

ParamSet greedy_soup(const std::vector<ParamSet>& pool, const Dataset& val,
                     std::vector<std::size_t>* members_out) {
  if (pool.empty()) throw std::invalid_argument("greedy_soup: empty pool");
  for (const ParamSet& p : pool) require_same_structure(pool[0], p);
  std::vector<double> accs;
  std::vector<std::size_t> order = accuracy_order(pool, val, accs);

  std::vector<std::size_t> members{order[0]};
  double best = accs[order[0]];
  for (std::size_t r = 1; r < order.size(); ++r) {
    std::vector<std::size_t> tentative = members;
    tentative.push_back(order[r]);
    double acc = pool_val_accuracy(uniform_average(pool, tentative), val);
    if (acc >= best) {
      members = std::move(tentative);
      best = acc;
    }
  }
  if (members_out) *members_out = members;
  return uniform_average(pool, members);
}

DenseArray ensemble_probs(const std::vector<ParamSet>& pool, const std::vector<std::size_t>& members,
                          const DenseArray& inputs) {
  if (members.empty()) throw std::invalid_argument("ensemble_probs: no members");
  DenseArray avg;
  for (std::size_t idx : members) {
    VisionParams vision;
    HeadWeights head;
    unpack_trainable(pool[idx], vision, head);
    DenseArray u = head_logits(head, vision_forward(vision, inputs));
    if (avg.data.empty()) avg = DenseArray::zeros(u.shape);
    std::vector<double> row(u.cols());
    for (std::size_t i = 0; i < u.rows(); ++i) {
      for (std::size_t k = 0; k < u.cols(); ++k) row[k] = u(i, k);
      std::vector<double> p = softmax(row);
      for (std::size_t k = 0; k < u.cols(); ++k) avg(i, k) += p[k] / double(members.size());
    }
  }
  return avg;
}

static double prob_accuracy(const DenseArray& probs, const std::vector<int>& labels) {
  return accuracy(probs, labels);  // argmax is the same on probabilities
}

std::vector<std::size_t> greedy_ensemble(const std::vector<ParamSet>& pool, const Dataset& val,
                                         std::size_t max_size) {
  if (pool.empty()) throw std::invalid_argument("greedy_ensemble: empty pool");
  if (max_size < 1) throw std::invalid_argument("greedy_ensemble: max_size must be at least 1");
  for (const ParamSet& p : pool) require_same_structure(pool[0], p);
  std::vector<double> accs;
  std::vector<std::size_t> order = accuracy_order(pool, val, accs);

  std::vector<std::size_t> members{order[0]};
  double best = prob_accuracy(ensemble_probs(pool, members, val.x), val.labels);
  for (std::size_t r = 1; r < order.size() && members.size() < max_size; ++r) {
    std::vector<std::size_t> tentative = members;
    tentative.push_back(order[r]);
    double acc = prob_accuracy(ensemble_probs(pool, tentative, val.x), val.labels);
    if (acc >= best) {
      members = std::move(tentative);
      best = acc;
    }
  }
  return members;
}

}  // namespace rflab
