#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cmvae/cmog.hpp"
#include "cmvae/numerics.hpp"
#include "cmvae/sem.hpp"

namespace cmvae {

inline constexpr std::size_t kDefaultAdjustDraws = 32;

/// n_adjust draws z' ~ N(h(z), I).
Matrix adjust_codes(std::span<const double> z, const StructuralModel& h, Rng& rng,
                    std::size_t n_adjust);

struct PredictionResult {
  Matrix probs;                     // Q x K
  std::vector<std::size_t> labels;  // argmax, lowest index on ties
};

/// Class posteriors under fixed 1/K weights. With n_adjust > 0 each query is
/// replaced by adjusted draws and the per-draw posteriors are averaged.
/// `regularize` adds log N(mu_k | h(mu_k), s_k^2 I) to every class score.
PredictionResult predict_query(const CmogPrior& prior, const StructuralModel& h,
                               const Matrix& query, Rng& rng, std::size_t n_adjust,
                               bool regularize = true);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(std::span<const double> v);

struct InterventionSpec {
  std::vector<std::size_t> targets;
  Vector values;

  void validate(std::size_t dim) const;
};

/// Counterfactual under do(z_targets = values): exogenous noise u = z - h(z) is
/// abducted from the factual code, targets are clamped, and every other node on a
/// changed path is recomputed as h_j(z) + u_j in topological order.
Vector do_intervene(std::span<const double> z, const InterventionSpec& spec,
                    const StructuralModel& h, const DagStructure& order);

/// Same, with the order extracted from adjacency(h) at `threshold`.
Vector do_intervene(std::span<const double> z, const InterventionSpec& spec,
                    const StructuralModel& h, double threshold = 0.3);

}  // namespace cmvae
