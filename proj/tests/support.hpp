#pragma once

// Shared fixtures and independent reference implementations for the tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "cmvae/numerics.hpp"
#include "cmvae/sem.hpp"

namespace cmvae::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  return max_abs_diff(a.values(), b.values());
}

/// Rescales a to the requested spectral-radius bound through the infinity norm.
inline Matrix with_radius(Matrix a, double radius) {
  double norm = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (double v : a.row(i)) s += std::abs(v);
    norm = std::max(norm, s);
  }
  if (norm > 0.0) a *= radius / norm;
  return a;
}

/// exp(A) by a plain 30-term Taylor series.
inline Matrix taylor_exp(const Matrix& a, int terms = 30) {
  const std::size_t n = a.rows();
  Matrix sum = Matrix::identity(n);
  Matrix term = Matrix::identity(n);
  for (int k = 1; k < terms; ++k) {
    term = matmul(term, a) * (1.0 / k);
    sum += term;
  }
  return sum;
}

/// Strictly upper-triangular weights under a random node permutation.
inline Matrix random_dag_weights(std::size_t d, double density, Rng& rng, double w_min = 0.5,
                                 double w_max = 2.0) {
  std::vector<std::size_t> perm = rng.sample_without_replacement(d, d);
  Matrix w(d, d);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a + 1; b < d; ++b) {
      if (rng.uniform() >= density) continue;
      const double mag = w_min + (w_max - w_min) * rng.uniform();
      w(perm[a], perm[b]) = rng.uniform() < 0.5 ? -mag : mag;
    }
  }
  return w;
}

/// Central finite-difference gradient of f at x with step h.
inline Vector numeric_gradient(const std::function<double(const Vector&)>& f, Vector x,
                               double h = 1e-5) {
  Vector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(std::span<const double> a, std::span<const double> b,
                             double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

// Plain Gaussian-mixture EM written without the library's EM code.

struct GmmFit {
  Vector alpha;
  Matrix mu;
  Matrix sigma2;
};

inline double log_gauss_diag(std::span<const double> x, std::span<const double> mu,
                             std::span<const double> var) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    s += -0.5 * std::log(2.0 * M_PI * var[j]) - 0.5 * (x[j] - mu[j]) * (x[j] - mu[j]) / var[j];
  }
  return s;
}

inline Matrix posteriors(const GmmFit& g, const Matrix& z) {
  const std::size_t k = g.alpha.size();
  Matrix w(z.rows(), k);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double peak = -INFINITY;
    for (std::size_t c = 0; c < k; ++c) {
      w(i, c) = std::log(g.alpha[c]) + log_gauss_diag(z.row(i), g.mu.row(c), g.sigma2.row(c));
      peak = std::max(peak, w(i, c));
    }
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += (w(i, c) = std::exp(w(i, c) - peak));
    for (std::size_t c = 0; c < k; ++c) w(i, c) /= s;
  }
  return w;
}

/// Unit-covariance EM started from the codes at `picks`.
inline GmmFit vanilla_em(const Matrix& z, const std::vector<std::size_t>& picks,
                         std::size_t steps) {
  const std::size_t k = picks.size(), d = z.cols();
  GmmFit g{Vector(k, 1.0 / k), Matrix(k, d), Matrix(k, d, 1.0)};
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) g.mu(c, j) = z(picks[c], j);
  }
  for (std::size_t t = 0; t < steps; ++t) {
    const Matrix w = posteriors(g, z);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      double mass = 0.0;
      Vector acc(d, 0.0);
      for (std::size_t i = 0; i < z.rows(); ++i) {
        mass += w(i, c);
        for (std::size_t j = 0; j < d; ++j) acc[j] += w(i, c) * z(i, j);
      }
      g.alpha[c] = mass;
      total += mass;
      if (mass > 1e-12) {
        for (std::size_t j = 0; j < d; ++j) g.mu(c, j) = acc[j] / mass;
      }
    }
    for (double& a : g.alpha) a /= total;
  }
  return g;
}

/// Semi-supervised EM: labeled support anchors each class, queries are soft,
/// weights stay uniform, diagonal variances are refit around the new means.
inline GmmFit vanilla_semi_em(const Matrix& support, const std::vector<std::size_t>& labels,
                              const Matrix& query, std::size_t k, std::size_t steps) {
  const std::size_t d = support.cols();
  GmmFit g{Vector(k, 1.0 / k), Matrix(k, d), Matrix(k, d, 1.0)};
  Vector count(k, 0.0);
  for (std::size_t s = 0; s < support.rows(); ++s) {
    count[labels[s]] += 1.0;
    for (std::size_t j = 0; j < d; ++j) g.mu(labels[s], j) += support(s, j);
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) g.mu(c, j) /= count[c];
  }
  for (std::size_t t = 0; t < steps; ++t) {
    const Matrix w = posteriors(g, query);
    GmmFit next = g;
    for (std::size_t c = 0; c < k; ++c) {
      double mass = count[c];
      Vector acc(d, 0.0);
      for (std::size_t s = 0; s < support.rows(); ++s) {
        if (labels[s] != c) continue;
        for (std::size_t j = 0; j < d; ++j) acc[j] += support(s, j);
      }
      for (std::size_t q = 0; q < query.rows(); ++q) {
        mass += w(q, c);
        for (std::size_t j = 0; j < d; ++j) acc[j] += w(q, c) * query(q, j);
      }
      for (std::size_t j = 0; j < d; ++j) next.mu(c, j) = acc[j] / mass;
      Vector var(d, 0.0);
      for (std::size_t s = 0; s < support.rows(); ++s) {
        if (labels[s] != c) continue;
        for (std::size_t j = 0; j < d; ++j) {
          var[j] += (support(s, j) - next.mu(c, j)) * (support(s, j) - next.mu(c, j));
        }
      }
      for (std::size_t q = 0; q < query.rows(); ++q) {
        for (std::size_t j = 0; j < d; ++j) {
          var[j] += w(q, c) * (query(q, j) - next.mu(c, j)) * (query(q, j) - next.mu(c, j));
        }
      }
      for (std::size_t j = 0; j < d; ++j) next.sigma2(c, j) = std::max(var[j] / mass, 1e-6);
    }
    g = std::move(next);
  }
  return g;
}

}  // namespace cmvae::testing
