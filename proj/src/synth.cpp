#include "cmvae/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cmvae/errors.hpp"

namespace cmvae {

namespace {

void copy_row(const Matrix& src, std::size_t r, Matrix& dst, std::size_t d) {
  std::copy(src.row(r).begin(), src.row(r).end(), dst.row(d).begin());
}

Matrix gather_rows(const Matrix& src, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) copy_row(src, rows[i], out, i);
  return out;
}

Episode make_biased_episode(const GroundTruth& truth, const BiasSpec& bias, std::size_t k,
                            std::size_t shot, std::size_t query, Rng& rng) {
  const std::size_t d = truth.dim();
  Matrix offsets(k, d);
  Vector conf_sign(k);
  if (k == 2) {
    for (std::size_t c = 0; c < 2; ++c) {
      const double sign = c == 0 ? -1.0 : 1.0;
      for (std::size_t j : truth.class_dims) offsets(c, j) = sign * truth.class_shift;
      conf_sign[c] = sign;
    }
  } else {
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t j : truth.class_dims) offsets(c, j) = truth.class_shift * rng.normal();
      conf_sign[c] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    }
  }

  Episode ep;
  ep.way = k;
  ep.shot = shot;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t s = 0; s < shot; ++s) ep.support_y.push_back(c);
  }
  for (std::size_t q = 0; q < query; ++q) ep.query_y.push_back(rng.uniform_index(k));

  const double agree = (1.0 + bias.level) / 2.0;
  auto exogenous = [&](const std::vector<std::size_t>& labels, bool biased) {
    Matrix u(labels.size(), d);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) u(i, j) = rng.normal() + offsets(labels[i], j);
      double sign;
      if (biased) {
        sign = rng.uniform() < agree ? conf_sign[labels[i]] : -conf_sign[labels[i]];
      } else {
        sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      }
      u(i, bias.confounder) = sign * truth.confounder_shift + truth.confounder_noise * rng.normal();
    }
    return u;
  };
  ep.support_z = solve_sem(truth.h, truth.dag, exogenous(ep.support_y, true));
  ep.query_z = solve_sem(truth.h, truth.dag, exogenous(ep.query_y, false));
  ep.support_x = observe(truth, ep.support_z);
  ep.query_x = observe(truth, ep.query_z);
  return ep;
}

}  // namespace

void GroundTruth::validate() const {
  const std::size_t d = dim();
  if (d == 0) throw ArgumentError("ground truth has no dimensions");
  if (dag.nodes() != d) throw DimensionError("ground truth DAG has the wrong node count");
  for (std::size_t j : class_dims) {
    if (j >= d) throw ArgumentError("class dimension out of range");
  }
  if (confounder >= d) throw ArgumentError("confounder dimension out of range");
  if (!projection.empty() && projection.rows() != d) {
    throw DimensionError("projection must have d rows");
  }
  if (h.dim() != d) throw DimensionError("ground truth SEM dimension mismatch");
  // Every dependence of h must run forward in the DAG order, or z = h(z) + u has no
  // sequential solution.
  const Matrix w = adjacency(h);
  std::vector<std::size_t> position(d);
  for (std::size_t i = 0; i < d; ++i) position[dag.order()[i]] = i;
  for (std::size_t m = 0; m < d; ++m) {
    for (std::size_t i = 0; i < d; ++i) {
      if (w(m, i) > 0.0 && position[m] >= position[i]) {
        throw CycleError("ground truth SEM has a dependence " + std::to_string(m) + " -> " +
                         std::to_string(i) + " against the DAG order");
      }
    }
  }
}

GroundTruth toy_flying_wing_sky(SemKind kind) {
  constexpr std::size_t d = 3;
  GroundTruth truth;
  if (kind == SemKind::kLinear) {
    Matrix a(d, d);
    a(kFlying, kWing) = 1.0;
    a(kFlying, kSky) = 1.0;
    truth.h = StructuralModel::linear(std::move(a));
  } else {
    // sigma(2x) - sigma(-2x) = tanh(x).
    std::vector<std::vector<Matrix>> layers(d);
    for (std::size_t node = 0; node < d; ++node) {
      Matrix first(d, 2);
      Matrix out(2, 1);
      if (node != kFlying) {
        first(kFlying, 0) = 2.0;
        first(kFlying, 1) = -2.0;
        out(0, 0) = 1.0;
        out(1, 0) = -1.0;
      }
      layers[node] = {std::move(first), std::move(out)};
    }
    truth.h = StructuralModel::nonlinear(std::move(layers));
  }
  truth.dag = DagStructure(d, {{kFlying, kWing}, {kFlying, kSky}});
  truth.class_dims = {kFlying};
  truth.confounder = kSky;
  return truth;
}

StructuralModel random_linear_dag(std::size_t d, double edge_prob, double w_min, double w_max,
                                  Rng& rng) {
  if (!(edge_prob >= 0.0 && edge_prob <= 1.0)) throw ArgumentError("edge_prob must be in [0, 1]");
  if (!(w_min >= 0.0 && w_max >= w_min)) throw ArgumentError("need 0 <= w_min <= w_max");
  const std::vector<std::size_t> perm = rng.sample_without_replacement(d, d);
  Matrix a(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      if (rng.uniform() >= edge_prob) continue;
      const double mag = w_min + (w_max - w_min) * rng.uniform();
      a(perm[i], perm[j]) = rng.uniform() < 0.5 ? -mag : mag;
    }
  }
  return StructuralModel::linear(std::move(a));
}

Matrix random_projection(std::size_t d, std::size_t p, Rng& rng) {
  if (d == 0 || p == 0) throw ArgumentError("projection needs positive dimensions");
  Matrix m(d, p);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

Matrix solve_sem(const StructuralModel& h, const DagStructure& dag, const Matrix& u) {
  const std::size_t d = h.dim();
  if (u.cols() != d) throw DimensionError("solve_sem: noise length");
  if (dag.nodes() != d) throw DimensionError("solve_sem: DAG node count");
  Matrix z(u.rows(), d);
  for (std::size_t r = 0; r < u.rows(); ++r) {
    auto row = z.row(r);
    for (std::size_t j : dag.order()) row[j] = h.apply_node(j, row) + u(r, j);
  }
  return z;
}

Matrix gen_sem_dataset(const GroundTruth& truth, std::size_t n, Rng& rng) {
  truth.validate();
  Matrix u(n, truth.dim());
  for (double& v : u.values()) v = rng.normal();
  return solve_sem(truth.h, truth.dag, u);
}

Matrix observe(const GroundTruth& truth, const Matrix& z) {
  return truth.projection.empty() ? z : matmul(z, truth.projection);
}

void BiasSpec::validate(std::size_t dim) const {
  if (!(level >= 0.0 && level <= 1.0)) throw ArgumentError("bias level must be in [0, 1]");
  if (confounder >= dim) throw ArgumentError("bias confounder out of range");
}

std::vector<Episode> gen_biased_tasks(const GroundTruth& truth, const BiasSpec& bias,
                                      std::size_t k, std::size_t shot, std::size_t query,
                                      std::size_t n_tasks, std::uint64_t seed) {
  truth.validate();
  bias.validate(truth.dim());
  if (k < 2) throw ArgumentError("episodes need at least two classes");
  if (shot == 0) throw ArgumentError("episodes need at least one shot");
  const Rng base(seed);
  std::vector<Episode> out;
  out.reserve(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    Rng rng = base.derive(t);
    out.push_back(make_biased_episode(truth, bias, k, shot, query, rng));
  }
  return out;
}

std::vector<Episode> gen_biased_tasks(const GroundTruth& truth, const BiasSpec& bias,
                                      std::size_t k, std::size_t shot, std::size_t query,
                                      std::size_t n_tasks, Rng& rng) {
  return gen_biased_tasks(truth, bias, k, shot, query, n_tasks, rng.next_u64());
}

Episode sample_episode(const LabeledData& data, std::size_t k, std::size_t shot,
                       std::size_t query, Rng& rng) {
  if (data.y.size() != data.x.rows()) throw DimensionError("sample_episode: one label per row");
  const bool has_z = !data.z.empty();
  if (has_z && data.z.rows() != data.x.rows()) throw DimensionError("sample_episode: z rows");
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.y.size(); ++i) by_class[data.y[i]].push_back(i);
  if (by_class.size() < k) {
    throw ArgumentError("sample_episode: need " + std::to_string(k) + " classes, dataset has " +
                        std::to_string(by_class.size()));
  }
  std::vector<const std::vector<std::size_t>*> classes;
  for (const auto& [label, rows] : by_class) classes.push_back(&rows);
  const std::vector<std::size_t> chosen = rng.sample_without_replacement(classes.size(), k);

  std::vector<std::size_t> support_rows, query_rows;
  Episode ep;
  ep.way = k;
  ep.shot = shot;
  for (std::size_t c = 0; c < k; ++c) {
    const auto& rows = *classes[chosen[c]];
    const std::size_t nq = query / k + (c < query % k ? 1 : 0);
    if (rows.size() < shot + nq) {
      throw ArgumentError("sample_episode: a class has only " + std::to_string(rows.size()) +
                          " rows, need " + std::to_string(shot + nq));
    }
    const auto pick = rng.sample_without_replacement(rows.size(), shot + nq);
    for (std::size_t i = 0; i < shot; ++i) {
      support_rows.push_back(rows[pick[i]]);
      ep.support_y.push_back(c);
    }
    for (std::size_t i = shot; i < pick.size(); ++i) {
      query_rows.push_back(rows[pick[i]]);
      ep.query_y.push_back(c);
    }
  }
  // Shuffle queries so their order carries no label information.
  for (std::size_t i = query_rows.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(query_rows[i - 1], query_rows[j]);
    std::swap(ep.query_y[i - 1], ep.query_y[j]);
  }
  ep.support_x = gather_rows(data.x, support_rows);
  ep.query_x = gather_rows(data.x, query_rows);
  if (has_z) {
    ep.support_z = gather_rows(data.z, support_rows);
    ep.query_z = gather_rows(data.z, query_rows);
  }
  return ep;
}

LabeledData gen_labeled_dataset(const GroundTruth& truth, std::size_t classes,
                                std::size_t per_class, Rng& rng) {
  truth.validate();
  if (classes == 0 || per_class == 0) throw ArgumentError("gen_labeled_dataset: empty request");
  const std::size_t d = truth.dim();
  Matrix offsets(classes, d);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t j : truth.class_dims) offsets(c, j) = truth.class_shift * rng.normal();
  }
  LabeledData out;
  Matrix u(classes * per_class, d);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t r = c * per_class + i;
      for (std::size_t j = 0; j < d; ++j) u(r, j) = rng.normal() + offsets(c, j);
      out.y.push_back(c);
    }
  }
  out.z = solve_sem(truth.h, truth.dag, u);
  out.x = observe(truth, out.z);
  return out;
}

}  // namespace cmvae
