#include "cmvae/causal_em.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "cmvae/errors.hpp"

namespace cmvae {

namespace {

constexpr double kEmptyMass = 1e-12;

bool uses_regularizer(EmVariant v) { return v == EmVariant::kCausal; }
bool uses_adjustment(EmVariant v) { return v != EmVariant::kVanilla; }

// E-step offsets: log alpha_k plus the causal regularizer when the variant uses it.
Vector offsets(const CmogPrior& prior, const StructuralModel& h, EmVariant variant) {
  Vector off(prior.components());
  for (std::size_t k = 0; k < off.size(); ++k) {
    off[k] = std::log(prior.pi[k]);
    if (uses_regularizer(variant)) off[k] += causal_regularizer(prior, h, k);
  }
  return off;
}

void check_codes(const Matrix& z, const StructuralModel& h, const char* what) {
  if (z.cols() != h.dim()) {
    throw DimensionError(std::string(what) + ": code length " + std::to_string(z.cols()) +
                         " does not match structural model dimension " +
                         std::to_string(h.dim()));
  }
}

void check_labels(std::span<const std::size_t> labels, std::size_t rows, std::size_t k) {
  if (labels.size() != rows) throw DimensionError("one label per support code required");
  for (std::size_t y : labels) {
    if (y >= k) throw ArgumentError("support label " + std::to_string(y) + " out of range");
  }
}

Matrix class_means(const Matrix& support, std::span<const std::size_t> labels, std::size_t k) {
  const std::size_t d = support.cols();
  Matrix means(k, d);
  Vector count(k, 0.0);
  for (std::size_t s = 0; s < support.rows(); ++s) {
    count[labels[s]] += 1.0;
    for (std::size_t j = 0; j < d; ++j) means(labels[s], j) += support(s, j);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (count[c] == 0.0) {
      throw ArgumentError("class " + std::to_string(c) + " has no support code");
    }
    for (double& v : means.row(c)) v /= count[c];
  }
  return means;
}

CmogPrior unit_prior(Vector alpha, Matrix mu, double gamma2) {
  CmogPrior p;
  p.pi = std::move(alpha);
  p.sigma2 = Matrix(mu.rows(), mu.cols(), 1.0);
  p.mu = std::move(mu);
  p.gamma2 = gamma2;
  return p;
}

CmogPrior with_unit_sigma(const CmogPrior& prior) {
  CmogPrior p = prior;
  p.sigma2.fill(1.0);
  return p;
}

double objective_with(const CmogPrior& prior, const StructuralModel& h, const Matrix& z,
                      EmVariant variant) {
  const Vector off = offsets(prior, h, variant);
  const kernels::EStep e = kernels::estep(prior, off, z);
  double total = 0.0;
  for (double v : e.lse) total += v;
  return total;
}

}  // namespace

const char* to_string(EmMode m) {
  return m == EmMode::kUnsupervised ? "unsupervised" : "semisupervised";
}

const char* to_string(EmVariant v) {
  switch (v) {
    case EmVariant::kCausal: return "causal";
    case EmVariant::kInverse: return "inverse";
    case EmVariant::kVanilla: return "vanilla";
  }
  return "?";
}

const char* to_string(MeanForm f) {
  switch (f) {
    case MeanForm::kReduced: return "reduced";
    case MeanForm::kFull: return "full";
    case MeanForm::kExact: return "exact";
  }
  return "?";
}

const char* to_string(ScaleMode s) { return s == ScaleMode::kFixed ? "fixed" : "data"; }

EmMode em_mode_from_string(const std::string& s) {
  if (s == "unsupervised") return EmMode::kUnsupervised;
  if (s == "semisupervised") return EmMode::kSemisupervised;
  throw FormatError("unknown EM mode '" + s + "'");
}

EmVariant em_variant_from_string(const std::string& s) {
  if (s == "causal") return EmVariant::kCausal;
  if (s == "inverse") return EmVariant::kInverse;
  if (s == "vanilla") return EmVariant::kVanilla;
  throw FormatError("unknown EM variant '" + s + "'");
}

MeanForm mean_form_from_string(const std::string& s) {
  if (s == "reduced") return MeanForm::kReduced;
  if (s == "full") return MeanForm::kFull;
  if (s == "exact") return MeanForm::kExact;
  throw FormatError("unknown mean form '" + s + "'");
}

ScaleMode scale_mode_from_string(const std::string& s) {
  if (s == "fixed") return ScaleMode::kFixed;
  if (s == "data") return ScaleMode::kData;
  throw FormatError("unknown scale mode '" + s + "'");
}

void EmConfig::validate() const {
  if (steps < 1) throw ArgumentError("EM steps must be at least 1");
  if (!(gamma2 > 0.0) || !std::isfinite(gamma2)) throw ArgumentError("gamma2 must be positive");
}

void Responsibilities::validate() const {
  for (std::size_t i = 0; i < omega.rows(); ++i) {
    double s = 0.0;
    for (double w : omega.row(i)) {
      if (!(w >= 0.0)) throw NumericalError("responsibility is negative or NaN");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-9) throw NumericalError("responsibility row does not sum to 1");
  }
}

MeanAdjuster::MeanAdjuster(const StructuralModel& h, MeanForm form) : h_(&h), form_(form) {
  const std::size_t d = h.dim();
  if (h.kind() == SemKind::kLinear) {
    Matrix c = Matrix::identity(d) - h.weights();
    cct_ = matmul_transposed(c, c);
    eps0_.assign(d, 0.0);
  } else {
    if (form == MeanForm::kExact) {
      throw ArgumentError("exact mean form requires a linear structural model");
    }
    eps0_ = h.residual(Vector(d, 0.0));
  }
}

Matrix MeanAdjuster::system(std::span<const double> sigma, double s2) const {
  const std::size_t d = h_->dim();
  if (sigma.size() != d) throw DimensionError("MeanAdjuster: sigma length");
  const double s = std::sqrt(s2);
  Matrix m(d, d);
  if (h_->kind() == SemKind::kLinear) {
    if (form_ == MeanForm::kExact) {
      // Symmetrized: D^-2 + C C^T / s^2.
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) m(i, j) = cct_(i, j) / s2;
        m(i, i) += 1.0 / (sigma[i] * sigma[i]);
      }
      return m;
    }
    // Rows of E are t_j C_j, so E E^T = T C C^T T.
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) m(i, j) = cct_(i, j) * sigma[i] * sigma[j] / s2;
    }
  } else {
    Matrix t(d, d);
    for (std::size_t j = 0; j < d; ++j) t(j, j) = sigma[j] / s;
    Matrix e = h_->residual_rows(t);
    if (form_ == MeanForm::kFull) {
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) e(i, j) -= eps0_[j];
      }
    }
    m = matmul_transposed(e, e);
  }
  for (std::size_t i = 0; i < d; ++i) m(i, i) += 1.0;
  return m;
}

Vector MeanAdjuster::adjust(std::span<const double> mean, std::span<const double> sigma,
                            double s2) const {
  const std::size_t d = h_->dim();
  if (mean.size() != d) throw DimensionError("MeanAdjuster: mean length");
  const Cholesky chol(system(sigma, s2));
  Vector out;
  if (form_ == MeanForm::kExact) {
    // mu^T = S^{-1} D^{-2} m^T.
    Vector rhs(d);
    for (std::size_t j = 0; j < d; ++j) rhs[j] = mean[j] / (sigma[j] * sigma[j]);
    out = chol.solve(rhs);
  } else {
    out = chol.solve(mean);
  }
  if (form_ == MeanForm::kFull && h_->kind() == SemKind::kNonlinear) {
    Vector arg(d);
    for (std::size_t j = 0; j < d; ++j) arg[j] = sigma[j] * sigma[j] / s2 * eps0_[j];
    const Vector shift = h_->residual(arg);
    for (std::size_t j = 0; j < d; ++j) out[j] += -shift[j] + eps0_[j];
  }
  return out;
}

Matrix MeanAdjuster::adjust_rows(const Matrix& m, double s2) const {
  const std::size_t d = h_->dim();
  if (m.cols() != d) throw DimensionError("MeanAdjuster: mean length");
  const Vector ones(d, 1.0);
  if (form_ == MeanForm::kFull && h_->kind() == SemKind::kNonlinear) {
    Matrix out(m.rows(), d);
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const Vector row = adjust(m.row(r), ones, s2);
      std::copy(row.begin(), row.end(), out.row(r).begin());
    }
    return out;
  }
  const Cholesky chol(system(ones, s2));
  return chol.solve(m.transpose()).transpose();
}

Matrix init_means_from(const Matrix& z, std::span<const std::size_t> picks,
                       const StructuralModel& h, double gamma2, MeanForm form) {
  check_codes(z, h, "init_means");
  Matrix chosen(picks.size(), z.cols());
  for (std::size_t k = 0; k < picks.size(); ++k) {
    if (picks[k] >= z.rows()) throw ArgumentError("init_means: pick out of range");
    const auto src = z.row(picks[k]);
    std::copy(src.begin(), src.end(), chosen.row(k).begin());
  }
  return MeanAdjuster(h, form).adjust_rows(chosen, gamma2);
}

Matrix init_means_unsup(const Matrix& z, std::size_t k, const StructuralModel& h, double gamma2,
                        Rng& rng, MeanForm form) {
  if (k == 0) throw ArgumentError("init_means_unsup: K must be positive");
  if (z.rows() < k) {
    throw ArgumentError("init_means_unsup: need at least K = " + std::to_string(k) +
                        " codes, got " + std::to_string(z.rows()));
  }
  const std::vector<std::size_t> picks = rng.sample_without_replacement(z.rows(), k);
  return init_means_from(z, picks, h, gamma2, form);
}

Responsibilities e_step_unsup(const CmogPrior& prior, const StructuralModel& h, const Matrix& z,
                              EmVariant variant, Exec exec) {
  check_codes(z, h, "e_step_unsup");
  const CmogPrior unit = with_unit_sigma(prior);
  const Vector off = offsets(unit, h, variant);
  return {kernels::estep(unit, off, z, exec).omega};
}

MStep m_step_unsup(const Responsibilities& omega, const Matrix& z, const StructuralModel& h,
                   const EmConfig& cfg, const Matrix* previous_mu) {
  check_codes(z, h, "m_step_unsup");
  const std::size_t n = z.rows();
  const std::size_t kk = omega.omega.cols();
  const std::size_t d = z.cols();
  if (omega.omega.rows() != n) throw DimensionError("m_step_unsup: one responsibility row per code");

  MStep out{Vector(kk), Matrix(kk, d), Vector(), std::vector<bool>(kk, false)};
  Vector mass(kk, 0.0);
  Matrix weighted(kk, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < kk; ++k) {
      const double w = omega.omega(i, k);
      mass[k] += w;
      for (std::size_t j = 0; j < d; ++j) weighted(k, j) += w * z(i, j);
    }
  }
  double total = 0.0;
  for (double m : mass) total += m;
  for (std::size_t k = 0; k < kk; ++k) out.alpha[k] = mass[k] / total;

  if (cfg.scale == ScaleMode::kData) {
    out.scale2.assign(kk, cfg.gamma2);
    for (std::size_t k = 0; k < kk; ++k) {
      if (mass[k] < kEmptyMass) continue;
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = omega.omega(i, k) / mass[k];
        s += w * w;
      }
      out.scale2[k] = std::max(s, kVarianceFloor);
    }
  }

  std::optional<MeanAdjuster> adjuster;
  if (uses_adjustment(cfg.variant)) adjuster.emplace(h, cfg.form);
  std::optional<Cholesky> shared;
  if (adjuster && cfg.scale == ScaleMode::kFixed &&
      !(cfg.form == MeanForm::kFull && h.kind() == SemKind::kNonlinear)) {
    shared.emplace(adjuster->system(Vector(d, 1.0), cfg.gamma2));
  }
  const Vector ones(d, 1.0);
  for (std::size_t k = 0; k < kk; ++k) {
    auto dst = out.mu.row(k);
    if (mass[k] < kEmptyMass) {
      out.empty[k] = true;
      if (previous_mu) {
        const auto src = previous_mu->row(k);
        std::copy(src.begin(), src.end(), dst.begin());
      }
      continue;
    }
    Vector mean(d);
    for (std::size_t j = 0; j < d; ++j) mean[j] = weighted(k, j) / mass[k];
    Vector mu;
    if (!adjuster) {
      mu = std::move(mean);
    } else if (shared) {
      mu = shared->solve(mean);
    } else {
      mu = adjuster->adjust(mean, ones, out.scale2.empty() ? cfg.gamma2 : out.scale2[k]);
    }
    std::copy(mu.begin(), mu.end(), dst.begin());
  }
  return out;
}

double mcp_objective(const CmogPrior& prior, const StructuralModel& h, const Matrix& z) {
  check_codes(z, h, "mcp_objective");
  return objective_with(prior, h, z, EmVariant::kCausal);
}

McpTrace fit_unsupervised(const Matrix& z, std::size_t k, const StructuralModel& h,
                          const EmConfig& cfg) {
  cfg.validate();
  check_codes(z, h, "fit_unsupervised");
  Rng rng(cfg.seed);
  const MeanForm init_form = uses_adjustment(cfg.variant) ? cfg.form : MeanForm::kReduced;
  Matrix mu = uses_adjustment(cfg.variant)
                  ? init_means_unsup(z, k, h, cfg.gamma2, rng, init_form)
                  : [&] {
                      if (k == 0 || z.rows() < k) {
                        throw ArgumentError("fit_unsupervised: need at least K codes");
                      }
                      const auto picks = rng.sample_without_replacement(z.rows(), k);
                      Matrix m(k, z.cols());
                      for (std::size_t c = 0; c < k; ++c) {
                        const auto src = z.row(picks[c]);
                        std::copy(src.begin(), src.end(), m.row(c).begin());
                      }
                      return m;
                    }();

  McpTrace trace;
  trace.prior = unit_prior(Vector(k, 1.0 / static_cast<double>(k)), std::move(mu), cfg.gamma2);
  trace.empty.assign(k, false);
  trace.objective.push_back(objective_with(trace.prior, h, z, cfg.variant));
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Responsibilities omega = e_step_unsup(trace.prior, h, z, cfg.variant, cfg.exec);
    MStep m = m_step_unsup(omega, z, h, cfg, &trace.prior.mu);
    for (std::size_t c = 0; c < k; ++c) trace.empty[c] = trace.empty[c] || m.empty[c];
    trace.prior.pi = std::move(m.alpha);
    trace.prior.mu = std::move(m.mu);
    trace.prior.scale2 = std::move(m.scale2);
    const double obj = objective_with(trace.prior, h, z, cfg.variant);
    if (!std::isfinite(obj)) throw NumericalError("fit_unsupervised: objective is not finite");
    trace.objective.push_back(obj);
  }
  trace.omega = e_step_unsup(trace.prior, h, z, cfg.variant, cfg.exec);
  return trace;
}

Matrix init_means_semi(const Matrix& support, std::span<const std::size_t> labels, std::size_t k,
                       const StructuralModel& h, double gamma2, MeanForm form) {
  check_codes(support, h, "init_means_semi");
  check_labels(labels, support.rows(), k);
  const Matrix means = class_means(support, labels, k);
  return MeanAdjuster(h, form).adjust_rows(means, gamma2);
}

CmogPrior init_prior_semi(const Matrix& support, std::span<const std::size_t> labels,
                          std::size_t k, const StructuralModel& h, const EmConfig& cfg) {
  Matrix mu;
  if (uses_adjustment(cfg.variant)) {
    mu = init_means_semi(support, labels, k, h, cfg.gamma2, cfg.form);
  } else {
    check_codes(support, h, "init_prior_semi");
    check_labels(labels, support.rows(), k);
    mu = class_means(support, labels, k);
  }
  return unit_prior(Vector(k, 1.0 / static_cast<double>(k)), std::move(mu), cfg.gamma2);
}

Responsibilities e_step_semi(const CmogPrior& prior, const StructuralModel& h,
                             const Matrix& query, EmVariant variant, Exec exec) {
  check_codes(query, h, "e_step_semi");
  const Vector off = offsets(prior, h, variant);
  return {kernels::estep(prior, off, query, exec).omega};
}

CmogPrior semi_em_step(const CmogPrior& prior, const StructuralModel& h, const Matrix& support,
                       std::span<const std::size_t> labels, const Matrix& query,
                       const EmConfig& cfg, Responsibilities* query_omega) {
  const std::size_t kk = prior.components();
  const std::size_t d = prior.dim();
  check_codes(support, h, "semi_em_step");
  check_labels(labels, support.rows(), kk);
  if (query.rows() > 0) check_codes(query, h, "semi_em_step");

  Responsibilities omega{Matrix(query.rows(), kk)};
  if (query.rows() > 0) omega = e_step_semi(prior, h, query, cfg.variant, cfg.exec);

  Vector mass(kk, 0.0);
  Matrix weighted(kk, d);
  for (std::size_t s = 0; s < support.rows(); ++s) {
    mass[labels[s]] += 1.0;
    for (std::size_t j = 0; j < d; ++j) weighted(labels[s], j) += support(s, j);
  }
  for (std::size_t q = 0; q < query.rows(); ++q) {
    for (std::size_t k = 0; k < kk; ++k) {
      const double w = omega.omega(q, k);
      mass[k] += w;
      for (std::size_t j = 0; j < d; ++j) weighted(k, j) += w * query(q, j);
    }
  }

  CmogPrior next = prior;
  next.pi.assign(kk, 1.0 / static_cast<double>(kk));
  if (cfg.scale == ScaleMode::kData) next.scale2.assign(kk, cfg.gamma2);
  std::optional<MeanAdjuster> adjuster;
  if (uses_adjustment(cfg.variant)) adjuster.emplace(h, cfg.form);

  for (std::size_t k = 0; k < kk; ++k) {
    if (mass[k] < kEmptyMass) continue;  // keeps the previous component
    Vector mean(d);
    for (std::size_t j = 0; j < d; ++j) mean[j] = weighted(k, j) / mass[k];

    if (cfg.scale == ScaleMode::kData) {
      double s = 0.0;
      for (std::size_t i = 0; i < support.rows(); ++i) {
        if (labels[i] == k) s += 1.0 / (mass[k] * mass[k]);
      }
      for (std::size_t q = 0; q < query.rows(); ++q) {
        const double w = omega.omega(q, k) / mass[k];
        s += w * w;
      }
      next.scale2[k] = std::max(s, kVarianceFloor);
    }

    Vector mu;
    if (adjuster) {
      Vector sigma(d);
      for (std::size_t j = 0; j < d; ++j) sigma[j] = std::sqrt(prior.sigma2(k, j));
      mu = adjuster->adjust(mean, sigma, next.scale2_at(k));
    } else {
      mu = std::move(mean);
    }

    Vector var(d, 0.0);
    for (std::size_t i = 0; i < support.rows(); ++i) {
      if (labels[i] != k) continue;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = support(i, j) - mu[j];
        var[j] += diff * diff;
      }
    }
    for (std::size_t q = 0; q < query.rows(); ++q) {
      const double w = omega.omega(q, k);
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = query(q, j) - mu[j];
        var[j] += w * diff * diff;
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      next.mu(k, j) = mu[j];
      next.sigma2(k, j) = std::max(var[j] / mass[k], kVarianceFloor);
    }
  }
  if (query_omega) *query_omega = std::move(omega);
  return next;
}

double semi_objective(const CmogPrior& prior, const StructuralModel& h, const Matrix& support,
                      std::span<const std::size_t> labels, const Matrix& query,
                      EmVariant variant) {
  const std::size_t kk = prior.components();
  check_labels(labels, support.rows(), kk);
  const Vector off = offsets(prior, h, variant);
  double total = 0.0;
  if (support.rows() > 0) {
    Matrix joint(support.rows(), kk);
    kernels::log_joint_serial(prior, off, support, joint);
    for (std::size_t s = 0; s < support.rows(); ++s) total += joint(s, labels[s]);
  }
  if (query.rows() > 0) {
    const kernels::EStep e = kernels::estep(prior, off, query);
    for (double v : e.lse) total += v;
  }
  return total;
}

McpTrace fit_semisupervised(const Matrix& support, std::span<const std::size_t> labels,
                            const Matrix& query, std::size_t k, const StructuralModel& h,
                            const EmConfig& cfg) {
  cfg.validate();
  McpTrace trace;
  trace.prior = init_prior_semi(support, labels, k, h, cfg);
  trace.empty.assign(k, false);
  trace.objective.push_back(semi_objective(trace.prior, h, support, labels, query, cfg.variant));
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    trace.prior = semi_em_step(trace.prior, h, support, labels, query, cfg);
    const double obj = semi_objective(trace.prior, h, support, labels, query, cfg.variant);
    if (!std::isfinite(obj)) throw NumericalError("fit_semisupervised: objective is not finite");
    trace.objective.push_back(obj);
  }
  trace.omega = query.rows() > 0 ? e_step_semi(trace.prior, h, query, cfg.variant, cfg.exec)
                                 : Responsibilities{Matrix(0, k)};
  return trace;
}

}  // namespace cmvae
