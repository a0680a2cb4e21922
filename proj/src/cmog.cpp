#include "cmvae/cmog.hpp"

#include <cmath>
#include <numbers>

#include "cmvae/errors.hpp"

namespace cmvae {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // ln(2 pi)
}

CmogPrior CmogPrior::uniform(std::size_t k, std::size_t d, double gamma2) {
  CmogPrior p;
  p.pi.assign(k, 1.0 / static_cast<double>(k));
  p.mu = Matrix(k, d);
  p.sigma2 = Matrix(k, d, 1.0);
  p.gamma2 = gamma2;
  return p;
}

void CmogPrior::validate() const {
  const std::size_t k = components();
  if (k == 0) throw ArgumentError("CMoG prior needs at least one component");
  if (mu.rows() != k || sigma2.rows() != k || sigma2.cols() != mu.cols()) {
    throw DimensionError("CMoG prior arrays disagree on K or d");
  }
  double total = 0.0;
  for (double p : pi) {
    if (!(p >= 0.0)) throw ArgumentError("CMoG weights must be nonnegative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("CMoG weights must sum to 1");
  for (double s : sigma2.values()) {
    if (!(s >= kVarianceFloor * (1.0 - 1e-12))) throw ArgumentError("CMoG variance below floor");
  }
  if (!(gamma2 > 0.0)) throw ArgumentError("gamma2 must be positive");
  if (!scale2.empty()) {
    if (scale2.size() != k) throw DimensionError("CMoG scale2 needs one entry per component");
    for (double s : scale2) {
      if (!(s > 0.0)) throw ArgumentError("CMoG scale2 entries must be positive");
    }
  }
  if (!all_finite(mu)) throw NumericalError("CMoG means must be finite");
}

double causal_regularizer(const CmogPrior& prior, const StructuralModel& h, std::size_t k) {
  const auto mean = prior.mu.row(k);
  const Vector eps = h.residual(mean);
  double q = 0.0;
  for (double e : eps) q += e * e;
  const double d = static_cast<double>(prior.dim());
  const double s2 = prior.scale2_at(k);
  return -0.5 * q / s2 - 0.5 * d * (kLog2Pi + std::log(s2));
}

Vector causal_regularizers(const CmogPrior& prior, const StructuralModel& h) {
  Vector out(prior.components());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = causal_regularizer(prior, h, k);
  return out;
}

double component_log_density(const CmogPrior& prior, std::span<const double> z, std::size_t k) {
  if (z.size() != prior.dim()) throw DimensionError("code length does not match prior");
  const auto mean = prior.mu.row(k);
  const auto var = prior.sigma2.row(k);
  double s = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double diff = z[j] - mean[j];
    s += diff * diff / var[j] + std::log(var[j]) + kLog2Pi;
  }
  return -0.5 * s;
}

double cmog_log_score(const CmogPrior& prior, const StructuralModel& h,
                      std::span<const double> z, std::size_t k) {
  if (k >= prior.components()) {
    throw ArgumentError("component " + std::to_string(k) + " out of range (K = " +
                        std::to_string(prior.components()) + ")");
  }
  return component_log_density(prior, z, k) + causal_regularizer(prior, h, k);
}

CmogSample cmog_sample(const CmogPrior& prior, Rng& rng, std::size_t n) {
  if (n == 0) throw ArgumentError("cmog_sample: n must be positive");
  const std::size_t k = prior.components();
  const std::size_t d = prior.dim();
  CmogSample out{Matrix(n, d), std::vector<std::size_t>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t label = k - 1;
    for (std::size_t c = 0; c < k; ++c) {
      acc += prior.pi[c];
      if (u < acc) {
        label = c;
        break;
      }
    }
    // A zero-weight tail component is never chosen by rounding.
    while (label > 0 && prior.pi[label] == 0.0) --label;
    out.labels[i] = label;
    for (std::size_t j = 0; j < d; ++j) {
      out.codes(i, j) = prior.mu(label, j) + std::sqrt(prior.sigma2(label, j)) * rng.normal();
    }
  }
  return out;
}

WeightedSum weighted_sum_cals(const Matrix& z, std::span<const double> w,
                              const StructuralModel& h) {
  if (w.size() != z.rows()) throw DimensionError("weighted_sum_cals: one weight per code");
  double total = 0.0;
  double sq = 0.0;
  for (double x : w) {
    total += x;
    sq += x * x;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("weighted_sum_cals: weights must sum to 1");
  WeightedSum out;
  out.mean = vecmat(w, z);
  out.variance_scale = sq;
  out.residual = h.residual(out.mean);
  return out;
}

}  // namespace cmvae
