#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cmvae/numerics.hpp"
#include "cmvae/sem.hpp"

namespace cmvae {

inline constexpr double kVarianceFloor = 1e-6;

/// Causal mixture of Gaussians: component k has z ~ N(mu_k, diag(sigma2_k)) and
/// the mean itself is scored under N(mu_k | h(mu_k), gamma2 I).
struct CmogPrior {
  Vector pi;      // K mixture weights
  Matrix mu;      // K x d
  Matrix sigma2;  // K x d
  double gamma2 = 1.0;
  Vector scale2;  // optional per-component s_k^2; empty means gamma2 everywhere

  std::size_t components() const { return pi.size(); }
  double scale2_at(std::size_t k) const { return scale2.empty() ? gamma2 : scale2[k]; }
  std::size_t dim() const { return mu.cols(); }

  /// K components, uniform weights, zero means, unit variances.
  static CmogPrior uniform(std::size_t k, std::size_t d, double gamma2);
  /// Throws when the invariants (simplex weights, floored variances, gamma2 > 0) fail.
  void validate() const;
};

/// log N(mu_k | h(mu_k), s_k^2 I), with s_k^2 = gamma2 unless scale2 is set.
double causal_regularizer(const CmogPrior& prior, const StructuralModel& h, std::size_t k);
Vector causal_regularizers(const CmogPrior& prior, const StructuralModel& h);

/// log N(z | mu_k, sigma2_k) with diagonal covariance.
double component_log_density(const CmogPrior& prior, std::span<const double> z, std::size_t k);

/// log[N(z | mu_k, sigma2_k) N(mu_k | h(mu_k), gamma2 I)].
double cmog_log_score(const CmogPrior& prior, const StructuralModel& h,
                      std::span<const double> z, std::size_t k);

struct CmogSample {
  Matrix codes;
  std::vector<std::size_t> labels;
};

CmogSample cmog_sample(const CmogPrior& prior, Rng& rng, std::size_t n);

struct WeightedSum {
  Vector mean;                  // w^T Z
  double variance_scale = 0.0;  // w^T w
  Vector residual;              // mean - h(mean)
};

/// Weighted sum of causal codes. Under a shared linear h with z_i ~ N(h(z_i), I),
/// the residual is distributed as N(0, w^T w I).
WeightedSum weighted_sum_cals(const Matrix& z, std::span<const double> w,
                              const StructuralModel& h);

}  // namespace cmvae
