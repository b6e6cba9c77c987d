#include "rflab/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rflab {

static void check_logits(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("logits: empty input");
  for (double x : v)
    if (!std::isfinite(x)) throw std::invalid_argument("logits: non-finite entry");
}

std::vector<double> softmax(const std::vector<double>& v) {
  check_logits(v);
  double m = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - m);
    z += out[i];
  }
  for (double& x : out) x /= z;
  return out;
}

std::vector<double> log_softmax(const std::vector<double>& v) {
  check_logits(v);
  double m = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (double x : v) z += std::exp(x - m);
  double lse = m + std::log(z);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
  return out;
}

double cross_entropy(const std::vector<double>& logits, std::size_t label) {
  if (label >= logits.size()) throw std::invalid_argument("cross_entropy: label out of range");
  return -log_softmax(logits)[label];
}

double kld_tempered(const std::vector<double>& v_student, const std::vector<double>& v_teacher,
                    double tau) {
  if (v_student.size() != v_teacher.size())
    throw std::invalid_argument("kld_tempered: length mismatch");
  if (!(tau > 0.0)) throw std::invalid_argument("kld_tempered: tau must be positive");
  std::vector<double> s(v_student.size()), t(v_teacher.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = v_student[i] / tau;
    t[i] = v_teacher[i] / tau;
  }
  std::vector<double> p = softmax(t);
  std::vector<double> lq = log_softmax(s);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += p[i] * lq[i];
  return -tau * tau * acc;
}

double mse_half(const std::vector<double>& u, const std::vector<double>& v, std::size_t m) {
  if (u.size() != v.size()) throw std::invalid_argument("mse_half: length mismatch");
  if (m == 0 || m != u.size()) throw std::invalid_argument("mse_half: m must equal the length");
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    double d = u[i] - v[i];
    s += d * d;
  }
  return s / (2.0 * static_cast<double>(m));
}

ParamSet finite_diff_grad(const std::function<double(const ParamSet&)>& loss, const ParamSet& params,
                          double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  ParamSet grad = zeros_like(params);
  ParamSet work = params;
  for (auto& [name, arr] : work) {
    DenseArray& g = grad[name];
    for (std::size_t i = 0; i < arr.data.size(); ++i) {
      double saved = arr.data[i];
      arr.data[i] = saved + eps;
      double up = loss(work);
      arr.data[i] = saved - eps;
      double down = loss(work);
      arr.data[i] = saved;
      g.data[i] = (up - down) / (2.0 * eps);
    }
  }
  return grad;
}

}  // namespace rflab
