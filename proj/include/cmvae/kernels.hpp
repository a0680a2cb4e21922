#pragma once

#include <span>

#include "cmvae/cmog.hpp"
#include "cmvae/numerics.hpp"

namespace cmvae {

/// Execution policy for the row-parallel kernels. Both policies produce bitwise
/// identical results; rows are independent and reductions stay inside one row.
enum class Exec { kSerial, kOpenMP };

namespace kernels {

/// out(i, k) = offset[k] + log N(z_i | mu_k, diag(sigma2_k)).
void log_joint_serial(const CmogPrior& prior, std::span<const double> offset, const Matrix& z,
                      Matrix& out);
void log_joint_openmp(const CmogPrior& prior, std::span<const double> offset, const Matrix& z,
                      Matrix& out);

/// Row-wise softmax in place; writes each row's log-normalizer into lse.
void softmax_rows_serial(Matrix& logits, std::span<double> lse);
void softmax_rows_openmp(Matrix& logits, std::span<double> lse);

struct EStep {
  Matrix omega;  // rows on the simplex
  Vector lse;    // per-row log normalizer
};

EStep estep(const CmogPrior& prior, std::span<const double> offset, const Matrix& z,
            Exec exec = Exec::kSerial);

}  // namespace kernels
}  // namespace cmvae
