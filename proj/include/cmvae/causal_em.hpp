#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmvae/cmog.hpp"
#include "cmvae/kernels.hpp"
#include "cmvae/numerics.hpp"
#include "cmvae/sem.hpp"

namespace cmvae {

enum class EmMode { kUnsupervised, kSemisupervised };

/// kCausal: regularized E-step and adjusted means. kInverse: plain E-step with
/// adjusted means. kVanilla: ordinary (semi-supervised) Gaussian-mixture EM.
enum class EmVariant { kCausal, kInverse, kVanilla };

/// Mean update used by the M-step.
///   kReduced: mu = m (I + E E^T)^{-1}, rows of E are eps(s^{-1} sigma_j e_j).
///   kFull:    the same with eps(0) subtracted from every row of E, plus the
///             first-order offset -eps(s^{-2} sigma^2 * eps(0)) + eps(0).
///   kExact:   exact maximizer for linear h, mu = m (I + C C^T D^2 / s^2)^{-1},
///             C = I - A, D = diag(sigma).
enum class MeanForm { kReduced, kFull, kExact };

/// kFixed: s_k^2 = gamma2. kData: s_k^2 is the squared norm of the normalized
/// responsibility column of component k.
enum class ScaleMode { kFixed, kData };

const char* to_string(EmMode m);
const char* to_string(EmVariant v);
const char* to_string(MeanForm f);
const char* to_string(ScaleMode s);
EmMode em_mode_from_string(const std::string& s);
EmVariant em_variant_from_string(const std::string& s);
MeanForm mean_form_from_string(const std::string& s);
ScaleMode scale_mode_from_string(const std::string& s);

struct EmConfig {
  std::size_t steps = 10;
  double gamma2 = 1.0;
  EmMode mode = EmMode::kUnsupervised;
  std::uint64_t seed = 0;
  EmVariant variant = EmVariant::kCausal;
  MeanForm form = MeanForm::kReduced;
  ScaleMode scale = ScaleMode::kFixed;
  Exec exec = Exec::kSerial;

  void validate() const;
};

struct Responsibilities {
  Matrix omega;  // M x K

  /// Throws unless every row is nonnegative and sums to 1 within 1e-9.
  void validate() const;
};

struct McpTrace {
  Vector objective;  // steps + 1 entries, the first at initialization
  CmogPrior prior;
  Responsibilities omega;       // final responsibilities (queries in semi mode)
  std::vector<bool> empty;      // components that ever lost all mass
};

/// Solves the adjusted-mean systems for a fixed structural model. The linear
/// case caches C C^T so each system costs O(d^2) to assemble.
class MeanAdjuster {
 public:
  MeanAdjuster(const StructuralModel& h, MeanForm form);

  /// Symmetric system matrix for per-dimension std `sigma` and scale s2.
  Matrix system(std::span<const double> sigma, double s2) const;
  Vector adjust(std::span<const double> m, std::span<const double> sigma, double s2) const;
  /// Unit sigma; the same system for every row of m, factored once.
  Matrix adjust_rows(const Matrix& m, double s2) const;

 private:
  const StructuralModel* h_;
  MeanForm form_;
  Matrix cct_;  // linear only
  Vector eps0_;
};

/// Adjusted K x d means from the codes selected by `picks` (one component per pick).
Matrix init_means_from(const Matrix& z, std::span<const std::size_t> picks,
                       const StructuralModel& h, double gamma2,
                       MeanForm form = MeanForm::kReduced);
/// K distinct codes drawn from rng, then init_means_from.
Matrix init_means_unsup(const Matrix& z, std::size_t k, const StructuralModel& h, double gamma2,
                        Rng& rng, MeanForm form = MeanForm::kReduced);

/// Unit z-covariance E-step; the prior's sigma2 is ignored.
Responsibilities e_step_unsup(const CmogPrior& prior, const StructuralModel& h, const Matrix& z,
                              EmVariant variant = EmVariant::kCausal, Exec exec = Exec::kSerial);

struct MStep {
  Vector alpha;
  Matrix mu;
  Vector scale2;            // filled in data-scale mode
  std::vector<bool> empty;  // components with total mass below 1e-12
};

/// `previous_mu` supplies the mean kept by an empty component (zero when null).
MStep m_step_unsup(const Responsibilities& omega, const Matrix& z, const StructuralModel& h,
                   const EmConfig& cfg, const Matrix* previous_mu = nullptr);

/// sum_i log sum_k alpha_k exp(cmog_log_score(z_i, k)).
double mcp_objective(const CmogPrior& prior, const StructuralModel& h, const Matrix& z);

McpTrace fit_unsupervised(const Matrix& z, std::size_t k, const StructuralModel& h,
                          const EmConfig& cfg);

/// Adjusted per-class support means. Throws when a class has no support code.
Matrix init_means_semi(const Matrix& support, std::span<const std::size_t> labels, std::size_t k,
                       const StructuralModel& h, double gamma2,
                       MeanForm form = MeanForm::kReduced);

/// Initial semi-supervised prior: adjusted support means, unit variances, 1/K weights.
CmogPrior init_prior_semi(const Matrix& support, std::span<const std::size_t> labels,
                          std::size_t k, const StructuralModel& h, const EmConfig& cfg);

/// One E/M alternation. The query E-step uses sigma_k^2; weights stay at 1/K.
CmogPrior semi_em_step(const CmogPrior& prior, const StructuralModel& h, const Matrix& support,
                       std::span<const std::size_t> labels, const Matrix& query,
                       const EmConfig& cfg, Responsibilities* query_omega = nullptr);

/// Query responsibilities under a semi-supervised prior.
Responsibilities e_step_semi(const CmogPrior& prior, const StructuralModel& h,
                             const Matrix& query, EmVariant variant = EmVariant::kCausal,
                             Exec exec = Exec::kSerial);

/// Complete-data log score of labeled support plus the mixture log score of the queries.
double semi_objective(const CmogPrior& prior, const StructuralModel& h, const Matrix& support,
                      std::span<const std::size_t> labels, const Matrix& query,
                      EmVariant variant = EmVariant::kCausal);

McpTrace fit_semisupervised(const Matrix& support, std::span<const std::size_t> labels,
                            const Matrix& query, std::size_t k, const StructuralModel& h,
                            const EmConfig& cfg);

}  // namespace cmvae
