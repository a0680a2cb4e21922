#include "cmvae/kernels.hpp"

#include <cmath>

#include "cmvae/errors.hpp"

namespace cmvae::kernels {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

void check(const CmogPrior& prior, std::span<const double> offset, const Matrix& z,
           const Matrix& out) {
  if (offset.size() != prior.components()) throw DimensionError("log_joint: offset length");
  if (z.cols() != prior.dim()) throw DimensionError("log_joint: code length");
  if (out.rows() != z.rows() || out.cols() != prior.components()) {
    throw DimensionError("log_joint: output shape");
  }
}

// Per-component constant: -0.5 * sum_j (log sigma2_kj + log 2 pi).
Vector log_normalizers(const CmogPrior& prior) {
  Vector c(prior.components());
  for (std::size_t k = 0; k < c.size(); ++k) {
    double s = 0.0;
    for (double v : prior.sigma2.row(k)) s += std::log(v) + kLog2Pi;
    c[k] = -0.5 * s;
  }
  return c;
}

inline void joint_row(const CmogPrior& prior, std::span<const double> offset,
                      std::span<const double> norm, std::span<const double> zi,
                      std::span<double> out) {
  const std::size_t d = zi.size();
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto mean = prior.mu.row(k);
    const auto var = prior.sigma2.row(k);
    double q = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = zi[j] - mean[j];
      q += diff * diff / var[j];
    }
    out[k] = offset[k] + norm[k] - 0.5 * q;
  }
}

// Exponents are clamped well above the underflow threshold: the cost of exp stays
// the same for every input and weights below ~1e-304 carry no information.
constexpr double kMinExponent = -700.0;

inline double clamped_exp(double x) { return std::exp(x < kMinExponent ? kMinExponent : x); }

inline void softmax_row(std::span<double> row, double& lse) {
  double peak = row[0];
  for (double v : row) peak = v > peak ? v : peak;
  double s = 0.0;
  for (double v : row) s += clamped_exp(v - peak);
  lse = peak + std::log(s);
  for (double& v : row) v = clamped_exp(v - lse);
}

}  // namespace

void log_joint_serial(const CmogPrior& prior, std::span<const double> offset, const Matrix& z,
                      Matrix& out) {
  check(prior, offset, z, out);
  const Vector norm = log_normalizers(prior);
  for (std::size_t i = 0; i < z.rows(); ++i) joint_row(prior, offset, norm, z.row(i), out.row(i));
}

void log_joint_openmp(const CmogPrior& prior, std::span<const double> offset, const Matrix& z,
                      Matrix& out) {
  check(prior, offset, z, out);
  const Vector norm = log_normalizers(prior);
  const long rows = static_cast<long>(z.rows());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < rows; ++i) {
    joint_row(prior, offset, norm, z.row(static_cast<std::size_t>(i)),
              out.row(static_cast<std::size_t>(i)));
  }
}

void softmax_rows_serial(Matrix& logits, std::span<double> lse) {
  if (lse.size() != logits.rows()) throw DimensionError("softmax_rows: lse length");
  if (logits.cols() == 0) throw ArgumentError("softmax_rows: no columns");
  for (std::size_t i = 0; i < logits.rows(); ++i) softmax_row(logits.row(i), lse[i]);
}

void softmax_rows_openmp(Matrix& logits, std::span<double> lse) {
  if (lse.size() != logits.rows()) throw DimensionError("softmax_rows: lse length");
  if (logits.cols() == 0) throw ArgumentError("softmax_rows: no columns");
  const long rows = static_cast<long>(logits.rows());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < rows; ++i) {
    softmax_row(logits.row(static_cast<std::size_t>(i)), lse[static_cast<std::size_t>(i)]);
  }
}

EStep estep(const CmogPrior& prior, std::span<const double> offset, const Matrix& z, Exec exec) {
  EStep out{Matrix(z.rows(), prior.components()), Vector(z.rows())};
  if (exec == Exec::kOpenMP) {
    log_joint_openmp(prior, offset, z, out.omega);
    softmax_rows_openmp(out.omega, out.lse);
  } else {
    log_joint_serial(prior, offset, z, out.omega);
    softmax_rows_serial(out.omega, out.lse);
  }
  return out;
}

}  // namespace cmvae::kernels
