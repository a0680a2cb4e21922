#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cmvae/numerics.hpp"
#include "cmvae/sem.hpp"

namespace cmvae {

/// Node indices of the three-node toy graph wing <- flying -> sky.
inline constexpr std::size_t kFlying = 0;
inline constexpr std::size_t kWing = 1;
inline constexpr std::size_t kSky = 2;

struct GroundTruth {
  StructuralModel h;
  DagStructure dag;
  std::vector<std::size_t> class_dims;  // exogenous class offsets land here
  double class_shift = 1.0;
  std::size_t confounder = 0;
  double confounder_shift = 2.0;        // |exogenous value| carried by the confounder
  double confounder_noise = 0.5;
  Matrix projection;                    // d x p observation map; empty means x = z

  std::size_t dim() const { return h.dim(); }
  std::size_t obs_dim() const { return projection.empty() ? dim() : projection.cols(); }
  void validate() const;
};

/// wing <- flying -> sky with unit edge weights. The nonlinear variant uses
/// h_j(z) = tanh(z_flying) for both children, built from logistic units.
GroundTruth toy_flying_wing_sky(SemKind kind);

/// Random linear DAG: edges follow a random node order with probability
/// `edge_prob`, weights uniform in [w_min, w_max] with random sign.
StructuralModel random_linear_dag(std::size_t d, double edge_prob, double w_min, double w_max,
                                  Rng& rng);

/// Fixed d x p map with N(0, 1/d) entries; x = z P.
Matrix random_projection(std::size_t d, std::size_t p, Rng& rng);

/// z_j = h_j(z) + u_j in topological order, row by row.
Matrix solve_sem(const StructuralModel& h, const DagStructure& dag, const Matrix& u);

/// n samples with u ~ N(0, I).
Matrix gen_sem_dataset(const GroundTruth& truth, std::size_t n, Rng& rng);

Matrix observe(const GroundTruth& truth, const Matrix& z);

struct BiasSpec {
  std::size_t confounder = 0;
  double level = 0.9;  // P(confounder sign agrees with class sign) = (1 + level) / 2

  void validate(std::size_t dim) const;
};

struct Episode {
  std::size_t way = 0;
  std::size_t shot = 0;
  Matrix support_x;
  std::vector<std::size_t> support_y;
  Matrix query_x;
  std::vector<std::size_t> query_y;  // hidden from fitting
  Matrix support_z;                  // latent codes when known
  Matrix query_z;
};

/// Support labels are class-major (S rows per class). Queries draw labels uniformly.
/// Class k gets an exogenous offset on the class dimensions (+-class_shift for
/// K = 2, N(0, class_shift^2) draws per episode otherwise); the confounder's
/// exogenous value is sign * confounder_shift + noise, where in the support the
/// sign agrees with the class sign at the bias level and in the query it is random.
std::vector<Episode> gen_biased_tasks(const GroundTruth& truth, const BiasSpec& bias,
                                      std::size_t k, std::size_t shot, std::size_t query,
                                      std::size_t n_tasks, Rng& rng);

std::vector<Episode> gen_biased_tasks(const GroundTruth& truth, const BiasSpec& bias,
                                      std::size_t k, std::size_t shot, std::size_t query,
                                      std::size_t n_tasks, std::uint64_t seed);

struct LabeledData {
  Matrix x;
  std::vector<std::size_t> y;
  Matrix z;  // optional latent codes, same row count when present
};

/// K distinct classes, S support and about Q / K query rows per class, disjoint.
Episode sample_episode(const LabeledData& data, std::size_t k, std::size_t shot,
                       std::size_t query, Rng& rng);

/// Labeled dataset: classes share the truth SEM and differ by exogenous offsets.
LabeledData gen_labeled_dataset(const GroundTruth& truth, std::size_t classes,
                                std::size_t per_class, Rng& rng);

}  // namespace cmvae
