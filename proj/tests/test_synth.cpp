#include <doctest.h>

#include <cmath>
#include <set>

#include "cmvae/errors.hpp"
#include "cmvae/synth.hpp"
#include "support.hpp"

using namespace cmvae;
using namespace cmvae::testing;

namespace {

double covariance(const Matrix& z, std::size_t a, std::size_t b) {
  const double n = static_cast<double>(z.rows());
  double ma = 0.0, mb = 0.0, s = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    ma += z(r, a);
    mb += z(r, b);
  }
  ma /= n;
  mb /= n;
  for (std::size_t r = 0; r < z.rows(); ++r) s += (z(r, a) - ma) * (z(r, b) - mb);
  return s / (n - 1.0);
}

GroundTruth chain(double w) {
  GroundTruth t;
  t.h = StructuralModel::linear(Matrix{{0.0, w}, {0.0, 0.0}});
  t.dag = DagStructure(2, {{0, 1}});
  t.class_dims = {0};
  t.confounder = 1;
  return t;
}

// Correlation between the class sign (class 1 positive) and the sign of the
// confounder's exogenous value, pooled over episodes.
double sign_correlation(const GroundTruth& truth, const std::vector<Episode>& eps,
                        bool support) {
  double s = 0.0;
  std::size_t n = 0;
  for (const Episode& ep : eps) {
    const Matrix& z = support ? ep.support_z : ep.query_z;
    const auto& y = support ? ep.support_y : ep.query_y;
    const Matrix u = truth.h.residual_rows(z);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      const double cls = y[r] == 1 ? 1.0 : -1.0;
      const double conf = u(r, truth.confounder) > 0.0 ? 1.0 : -1.0;
      s += cls * conf;
      ++n;
    }
  }
  return s / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("synth") {
  TEST_CASE("edge-free SEM gives unit covariance") {
    GroundTruth t = chain(0.0);
    t.dag = DagStructure(2, {});
    Rng rng(1);
    const std::size_t n = 10000;
    const Matrix z = gen_sem_dataset(t, n, rng);
    const double se_var = std::sqrt(2.0 / n), se_cov = std::sqrt(1.0 / n);
    CHECK(std::abs(covariance(z, 0, 0) - 1.0) < 5.0 * se_var);
    CHECK(std::abs(covariance(z, 1, 1) - 1.0) < 5.0 * se_var);
    CHECK(std::abs(covariance(z, 0, 1)) < 5.0 * se_cov);
  }

  TEST_CASE("unit chain: Var(z2) = 2 and Cov(z1, z2) = 1") {
    Rng rng(2);
    const std::size_t n = 100000;
    const Matrix z = gen_sem_dataset(chain(1.0), n, rng);
    CHECK(std::abs(covariance(z, 1, 1) - 2.0) < 5.0 * 2.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(covariance(z, 0, 1) - 1.0) < 5.0 * std::sqrt(3.0 / n));
  }

  TEST_CASE("toy graph: wing and sky share their cause") {
    Rng rng(3);
    const std::size_t n = 100000;
    const GroundTruth t = toy_flying_wing_sky(SemKind::kLinear);
    const Matrix z = gen_sem_dataset(t, n, rng);
    CHECK(std::abs(covariance(z, kWing, kSky) - 1.0) < 5.0 * std::sqrt(5.0 / n));
    CHECK(t.dag.has_edge(kFlying, kWing));
    CHECK(t.dag.has_edge(kFlying, kSky));
    CHECK(t.dag.edges().size() == 2);
  }

  TEST_CASE("linear population covariance matches the closed form") {
    Rng rng(4);
    const StructuralModel h = random_linear_dag(4, 0.6, 0.5, 1.0, rng);
    GroundTruth t;
    t.h = h;
    t.dag = dag_extract(adjacency(h), 0.3);
    t.class_dims = {t.dag.order().front()};
    t.confounder = t.dag.order().back();
    const std::size_t n = 200000;
    const Matrix z = gen_sem_dataset(t, n, rng);
    const Matrix c = Matrix::identity(4) - h.weights();
    // Rows z = u C^{-1}, so Cov = C^{-T} C^{-1} = (C C^T)^{-1}.
    const Matrix want = spd_solve(matmul_transposed(c, c), Matrix::identity(4));
    for (std::size_t a = 0; a < 4; ++a) {
      for (std::size_t b = 0; b < 4; ++b) {
        const double tol = 5.0 * std::sqrt((want(a, a) * want(b, b) + want(a, b) * want(a, b)) / n);
        CHECK(std::abs(covariance(z, a, b) - want(a, b)) < tol);
      }
    }
  }

  TEST_CASE("residual recovers the injected noise") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t d = 2 + rng.uniform_index(8);
      const StructuralModel h = random_linear_dag(d, 0.5, 0.5, 2.0, rng);
      const DagStructure dag = dag_extract(adjacency(h), 0.3);
      const Matrix u = random_matrix(50, d, rng);
      const Matrix z = solve_sem(h, dag, u);
      CHECK(max_abs_diff(h.residual_rows(z), u) < 1e-10);
    }
    const GroundTruth nl = toy_flying_wing_sky(SemKind::kNonlinear);
    const Matrix u = random_matrix(50, 3, rng);
    CHECK(max_abs_diff(nl.h.residual_rows(solve_sem(nl.h, nl.dag, u)), u) < 1e-12);
  }

  TEST_CASE("nonlinear toy children follow tanh of the cause") {
    const GroundTruth t = toy_flying_wing_sky(SemKind::kNonlinear);
    for (double x : {-2.0, -0.3, 0.0, 0.7, 3.0}) {
      const Vector z = {x, 0.0, 0.0};
      CHECK(t.h.apply_node(kWing, z) == doctest::Approx(std::tanh(x)).epsilon(1e-14));
      CHECK(t.h.apply_node(kSky, z) == doctest::Approx(std::tanh(x)).epsilon(1e-14));
      CHECK(t.h.apply_node(kFlying, z) == 0.0);
    }
  }

  TEST_CASE("full bias: support confounder sign predicts the class") {
    const GroundTruth t = toy_flying_wing_sky(SemKind::kLinear);
    const auto eps = gen_biased_tasks(t, BiasSpec{kSky, 1.0}, 2, 4, 1000, 5, 7);
    CHECK(sign_correlation(t, eps, true) == 1.0);
    for (const Episode& ep : eps) {
      CHECK(std::abs(sign_correlation(t, {ep}, false)) < 0.1);
    }
  }

  TEST_CASE("support correlation converges to the bias level") {
    const GroundTruth t = toy_flying_wing_sky(SemKind::kLinear);
    const auto eps = gen_biased_tasks(t, BiasSpec{kSky, 0.6}, 2, 50, 50, 400, 8);
    const double n = 400.0 * 100.0;
    CHECK(std::abs(sign_correlation(t, eps, true) - 0.6) < 5.0 * std::sqrt((1 - 0.36) / n));
    CHECK(std::abs(sign_correlation(t, eps, false)) < 5.0 / std::sqrt(400.0 * 50.0));
  }

  TEST_CASE("zero bias: support and query share their moments") {
    const GroundTruth t = toy_flying_wing_sky(SemKind::kLinear);
    const auto eps = gen_biased_tasks(t, BiasSpec{kSky, 0.0}, 2, 50, 100, 200, 9);
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t cls = 0; cls < 2; ++cls) {
        double s[2] = {0, 0}, ss[2] = {0, 0}, n[2] = {0, 0};
        for (const Episode& ep : eps) {
          for (int part = 0; part < 2; ++part) {
            const Matrix& z = part == 0 ? ep.support_z : ep.query_z;
            const auto& y = part == 0 ? ep.support_y : ep.query_y;
            for (std::size_t r = 0; r < z.rows(); ++r) {
              if (y[r] != cls) continue;
              s[part] += z(r, j);
              ss[part] += z(r, j) * z(r, j);
              n[part] += 1.0;
            }
          }
        }
        const double m0 = s[0] / n[0], m1 = s[1] / n[1];
        const double v0 = ss[0] / n[0] - m0 * m0, v1 = ss[1] / n[1] - m1 * m1;
        CAPTURE(j);
        CHECK(std::abs(m0 - m1) < 5.0 * std::sqrt(v0 / n[0] + v1 / n[1]));
      }
    }
  }

  TEST_CASE("generators are reproducible under seed") {
    const GroundTruth t = toy_flying_wing_sky(SemKind::kNonlinear);
    const auto a = gen_biased_tasks(t, BiasSpec{kSky, 0.9}, 2, 4, 20, 10, 3);
    const auto b = gen_biased_tasks(t, BiasSpec{kSky, 0.9}, 2, 4, 20, 10, 3);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].support_z == b[i].support_z);
      CHECK(a[i].query_z == b[i].query_z);
      CHECK(a[i].query_y == b[i].query_y);
    }
    Rng r1(4), r2(4);
    CHECK(gen_sem_dataset(t, 100, r1) == gen_sem_dataset(t, 100, r2));
    CHECK_THROWS_AS(gen_biased_tasks(t, BiasSpec{kSky, 1.5}, 2, 4, 20, 1, 3), ArgumentError);
  }

  TEST_CASE("cyclic truth is rejected") {
    GroundTruth t = chain(1.0);
    t.h = StructuralModel::linear(Matrix{{0.0, 1.0}, {1.0, 0.0}});
    Rng rng(5);
    CHECK_THROWS_AS(gen_sem_dataset(t, 10, rng), CycleError);
  }

  TEST_CASE("sample_episode: all classes at K equal to the class count") {
    Rng rng(6);
    const GroundTruth t = toy_flying_wing_sky(SemKind::kLinear);
    const LabeledData data = gen_labeled_dataset(t, 5, 20, rng);
    const Episode ep = sample_episode(data, 5, 2, 15, rng);
    std::set<std::size_t> seen(ep.support_y.begin(), ep.support_y.end());
    CHECK(seen.size() == 5);
    CHECK(ep.query_x.rows() == 15);
    CHECK(ep.support_z.rows() == 10);
    CHECK_THROWS_AS(sample_episode(data, 6, 1, 6, rng), ArgumentError);
    CHECK_THROWS_AS(sample_episode(data, 5, 15, 30, rng), ArgumentError);
  }

  TEST_CASE("sample_episode: disjoint rows, seed determinism, uniform classes") {
    // x holds (class, row id) so the source row of every sample is visible.
    LabeledData data;
    const std::size_t classes = 8, per = 12;
    data.x = Matrix(classes * per, 2);
    for (std::size_t c = 0; c < classes; ++c) {
      for (std::size_t i = 0; i < per; ++i) {
        data.x(c * per + i, 0) = static_cast<double>(c);
        data.x(c * per + i, 1) = static_cast<double>(c * per + i);
        data.y.push_back(c);
      }
    }
    Rng a(7), b(7);
    const Episode e1 = sample_episode(data, 3, 2, 9, a);
    const Episode e2 = sample_episode(data, 3, 2, 9, b);
    CHECK(e1.support_x == e2.support_x);
    CHECK(e1.query_x == e2.query_x);

    Rng rng(8);
    Vector count(classes, 0.0);
    const std::size_t n_eps = 1000;
    for (std::size_t t = 0; t < n_eps; ++t) {
      const Episode ep = sample_episode(data, 3, 2, 9, rng);
      std::set<double> rows;
      for (std::size_t r = 0; r < ep.support_x.rows(); ++r) rows.insert(ep.support_x(r, 1));
      for (std::size_t r = 0; r < ep.query_x.rows(); ++r) rows.insert(ep.query_x(r, 1));
      REQUIRE(rows.size() == 15);
      for (std::size_t r = 0; r < ep.support_x.rows(); r += 2) {
        count[static_cast<std::size_t>(ep.support_x(r, 0))] += 1.0;
      }
      // Query labels agree with the source class of their support block.
      for (std::size_t r = 0; r < ep.query_x.rows(); ++r) {
        CHECK(ep.query_x(r, 0) == ep.support_x(2 * ep.query_y[r], 0));
      }
    }
    const double e = 3.0 * n_eps / classes;
    double chi2 = 0.0;
    for (double c : count) chi2 += (c - e) * (c - e) / e;
    CHECK(chi2 < 18.475);  // chi-square(7) 99% quantile
  }
}
