#pragma once

#include <map>
#include <string>
#include <vector>

#include "rflab/array.hpp"
#include "rflab/data.hpp"
#include "rflab/model.hpp"

namespace rflab {

// Per-layer projection radii, keyed by layer name.
using GammaVector = std::map<std::string, double>;

// theta = (1 - lambda) * theta0 + lambda * thetaT per layer. The endpoints are
// returned as verbatim copies so lambda 0 and 1 are bitwise exact.
ParamSet wise(const ParamSet& theta0, const ParamSet& thetaT, double lambda);

// Layer-wise projection of thetaT onto the L2 ball of radius gamma around
// theta0. gamma 0 collapses a layer to theta0.
ParamSet tpgm_project(const ParamSet& theta0, const ParamSet& thetaT, const GammaVector& gamma);

// Validation NLL of the projected model as a function of gamma, with its
// gradient. At the constraint boundary the active-side derivative is used, so
// descent can move radii that start exactly at ||thetaT - theta0||.
double tpgm_gamma_objective(const ParamSet& theta0, const ParamSet& thetaT, const GammaVector& gamma,
                            const Dataset& val, GammaVector* grad = nullptr);

// Adam descent on the softplus-reparameterized radii; reg > 0 adds reg * sum(gamma)
// (the constrained variant), reg = 0 recovers the plain projection objective.
GammaVector tpgm_optimize(const ParamSet& theta0, const ParamSet& thetaT, const Dataset& val,
                          std::size_t steps, double lr, double reg,
                          std::vector<double>* nll_trace = nullptr);

// Greedy weight averaging over a candidate pool, ordered by validation
// accuracy; a candidate stays in the soup only if the tentative average does
// not lower validation accuracy. members, when given, receives the accepted
// pool indices.
ParamSet greedy_soup(const std::vector<ParamSet>& pool, const Dataset& val,
                     std::vector<std::size_t>* members = nullptr);

// Same acceptance rule over softmax-output averaging; returns the indices of
// the chosen members, capped at max_size.
std::vector<std::size_t> greedy_ensemble(const std::vector<ParamSet>& pool, const Dataset& val,
                                         std::size_t max_size);

// Mean of member softmax outputs, [n, K].
DenseArray ensemble_probs(const std::vector<ParamSet>& pool, const std::vector<std::size_t>& members,
                          const DenseArray& inputs);

}  // namespace rflab
