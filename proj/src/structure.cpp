#include "cmvae/structure.hpp"

#include <cmath>
#include <utility>

#include "cmvae/errors.hpp"
#include "cmvae/optim.hpp"

namespace cmvae {

double structure_objective(const StructuralModel& h, const Matrix& z, double lambda1,
                           double lambda2, StructuralModel* grad) {
  const double n = static_cast<double>(z.rows());
  const Matrix resid = h.residual_rows(z);
  double fit = 0.0;
  for (double r : resid.values()) fit += r * r;
  fit /= 2.0 * n;

  const Matrix w = adjacency(h);
  const Penalty dag = notears_penalty(w);
  const Penalty l1 = l1_penalty(w);
  if (grad) {
    // d/dh(Z) of (1/2n)||Z - h(Z)||^2 is -(Z - h(Z))/n.
    Matrix upstream = resid * (-1.0 / n);
    sem_backward(h, z, upstream, *grad, nullptr);
    adjacency_backward(h, dag.grad * lambda1 + l1.grad * lambda2, *grad);
    grad->enforce_mask();
  }
  return fit + lambda1 * dag.value + lambda2 * l1.value;
}

StructureFit fit_structure(const Matrix& z, const StructureFitConfig& cfg) {
  if (z.rows() == 0) throw ArgumentError("fit_structure: no samples");
  const std::size_t d = z.cols();
  Rng rng(cfg.seed);
  StructuralModel h = cfg.kind == SemKind::kLinear
                          ? StructuralModel::zero_linear(d)
                          : StructuralModel::random_nonlinear(d, cfg.hidden, cfg.init_scale, rng);

  StructureFit out;
  double lambda1 = cfg.lambda1;
  for (std::size_t round = 0; round < cfg.max_rounds; ++round) {
    Adam adam(cfg.learning_rate);
    double loss = 0.0;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
      StructuralModel grad = h.zeros_like();
      loss = structure_objective(h, z, lambda1, cfg.lambda2, &grad);
      if (!std::isfinite(loss)) throw DivergenceError("fit_structure: objective diverged");
      adam.step(h.blocks(), std::as_const(grad).blocks());
      h.enforce_mask();
    }
    out.loss_history.push_back(loss);
    out.penalty = notears_penalty(adjacency(h)).value;
    out.final_lambda1 = lambda1;
    if (out.penalty < cfg.penalty_tolerance) break;
    lambda1 *= cfg.lambda_growth;
  }
  out.adjacency = adjacency(h);
  out.model = std::move(h);
  return out;
}

}  // namespace cmvae
