#pragma once

#include <cstdint>
#include <vector>

#include "cmvae/numerics.hpp"
#include "cmvae/sem.hpp"

namespace cmvae {

struct StructureFitConfig {
  SemKind kind = SemKind::kLinear;
  std::size_t hidden = 8;
  double lambda1 = 1.0;
  double lambda2 = 1e-3;
  double learning_rate = 3e-2;
  std::size_t iterations = 1000;
  /// lambda1 is multiplied by `lambda_growth` after each round until the
  /// acyclicity penalty falls below `penalty_tolerance`.
  std::size_t max_rounds = 3;
  double lambda_growth = 10.0;
  double penalty_tolerance = 1e-8;
  double init_scale = 0.1;
  std::uint64_t seed = 0;
};

struct StructureFit {
  StructuralModel model;
  Matrix adjacency;
  double penalty = 0.0;
  double final_lambda1 = 0.0;
  std::vector<double> loss_history;  // one entry per round
};

/// Objective value and parameter gradient of
///   (1/2n) ||Z - h(Z)||^2 + lambda1 R_D(A) + lambda2 ||A||_1,   A = adjacency(h).
double structure_objective(const StructuralModel& h, const Matrix& z, double lambda1,
                           double lambda2, StructuralModel* grad);

/// Fits h to codes Z by penalized least squares with an escalating DAG penalty.
StructureFit fit_structure(const Matrix& z, const StructureFitConfig& cfg);

}  // namespace cmvae
