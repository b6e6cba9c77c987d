#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "rflab/array.hpp"

namespace rflab {

// Stable probability transforms. All take logits and subtract the max before
// exponentiating, so entries of magnitude ~1e3 are fine.
std::vector<double> softmax(const std::vector<double>& v);
std::vector<double> log_softmax(const std::vector<double>& v);

// -log_softmax(logits)[label]
double cross_entropy(const std::vector<double>& logits, std::size_t label);

// Tempered distillation loss: -tau^2 * sum_k softmax(v_teacher/tau)[k] *
// log_softmax(v_student/tau)[k]. The teacher-entropy constant stays included;
// subtract kld_tempered(v_teacher, v_teacher, tau) for a value that is zero at
// v_student == v_teacher.
double kld_tempered(const std::vector<double>& v_student, const std::vector<double>& v_teacher,
                    double tau);

// (1/(2m)) * sum_i (u_i - v_i)^2, with m required to equal the vector length.
double mse_half(const std::vector<double>& u, const std::vector<double>& v, std::size_t m);

// Central-difference gradient oracle: (f(p + eps*e_i) - f(p - eps*e_i)) / (2 eps)
// per coordinate. f must be deterministic.
ParamSet finite_diff_grad(const std::function<double(const ParamSet&)>& loss, const ParamSet& params,
                          double eps);

}  // namespace rflab
