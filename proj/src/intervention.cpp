#include "cmvae/intervention.hpp"

#include <cmath>

#include "cmvae/errors.hpp"
#include "cmvae/kernels.hpp"

namespace cmvae {

Matrix adjust_codes(std::span<const double> z, const StructuralModel& h, Rng& rng,
                    std::size_t n_adjust) {
  if (n_adjust == 0) throw ArgumentError("adjust_codes: n_adjust must be positive");
  const Vector center = h.apply(z);
  Matrix out(n_adjust, center.size());
  for (std::size_t r = 0; r < n_adjust; ++r) {
    for (std::size_t j = 0; j < center.size(); ++j) out(r, j) = center[j] + rng.normal();
  }
  return out;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw ArgumentError("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

PredictionResult predict_query(const CmogPrior& prior, const StructuralModel& h,
                               const Matrix& query, Rng& rng, std::size_t n_adjust,
                               bool regularize) {
  const std::size_t kk = prior.components();
  if (kk == 0 || prior.mu.rows() != kk) throw ArgumentError("predict_query: prior is not fitted");
  if (query.cols() != prior.dim() || h.dim() != prior.dim()) {
    throw DimensionError("predict_query: code length does not match prior");
  }
  Vector off(kk, 0.0);
  if (regularize) off = causal_regularizers(prior, h);

  PredictionResult out{Matrix(query.rows(), kk), std::vector<std::size_t>(query.rows())};
  if (n_adjust == 0) {
    out.probs = kernels::estep(prior, off, query).omega;
  } else {
    const double inv = 1.0 / static_cast<double>(n_adjust);
    for (std::size_t q = 0; q < query.rows(); ++q) {
      const Matrix draws = adjust_codes(query.row(q), h, rng, n_adjust);
      const Matrix post = kernels::estep(prior, off, draws).omega;
      auto dst = out.probs.row(q);
      for (std::size_t r = 0; r < n_adjust; ++r) {
        for (std::size_t k = 0; k < kk; ++k) dst[k] += post(r, k) * inv;
      }
    }
  }
  for (std::size_t q = 0; q < query.rows(); ++q) out.labels[q] = argmax(out.probs.row(q));
  return out;
}

void InterventionSpec::validate(std::size_t dim) const {
  if (targets.size() != values.size()) {
    throw ArgumentError("intervention: one clamp value per target");
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= dim) {
      throw ArgumentError("intervention target " + std::to_string(targets[i]) +
                          " out of range (d = " + std::to_string(dim) + ")");
    }
    if (!std::isfinite(values[i])) throw ArgumentError("intervention value must be finite");
    for (std::size_t j = 0; j < i; ++j) {
      if (targets[j] == targets[i]) throw ArgumentError("intervention target repeated");
    }
  }
}

Vector do_intervene(std::span<const double> z, const InterventionSpec& spec,
                    const StructuralModel& h, const DagStructure& order) {
  const std::size_t d = h.dim();
  if (z.size() != d) throw DimensionError("do_intervene: code length");
  if (order.nodes() != d) throw DimensionError("do_intervene: order has the wrong node count");
  spec.validate(d);

  const Vector fitted = h.apply(z);
  Vector out(z.begin(), z.end());
  std::vector<bool> clamped(d, false);
  std::vector<bool> changed(d, false);
  for (std::size_t i = 0; i < spec.targets.size(); ++i) {
    const std::size_t t = spec.targets[i];
    clamped[t] = true;
    out[t] = spec.values[i];
    changed[t] = out[t] != z[t];
  }
  for (std::size_t j : order.order()) {
    if (clamped[j]) continue;
    bool touched = false;
    for (std::size_t p : order.parents(j)) touched = touched || changed[p];
    if (!touched) continue;
    const double noise = z[j] - fitted[j];
    out[j] = h.apply_node(j, out) + noise;
    changed[j] = out[j] != z[j];
  }
  return out;
}

Vector do_intervene(std::span<const double> z, const InterventionSpec& spec,
                    const StructuralModel& h, double threshold) {
  return do_intervene(z, spec, h, dag_extract(adjacency(h), threshold));
}

}  // namespace cmvae
