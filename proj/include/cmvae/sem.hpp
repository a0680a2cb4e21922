#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmvae/numerics.hpp"

namespace cmvae {

enum class SemKind { kLinear, kNonlinear };

const char* to_string(SemKind kind);
SemKind sem_kind_from_string(const std::string& s);

/// Structural function h over row-vector codes z (1 x d).
///
/// Linear models compute h(z) = z A with a zero diagonal. Nonlinear models keep
/// one weight stack per output node i and compute
///   h_i(z) = sigma(... sigma(z W_i^1) ...) W_i^l
/// with logistic sigma and no biases. Row i of W_i^1 is pinned at zero so no node
/// depends on itself.
class StructuralModel {
 public:
  StructuralModel() = default;

  static StructuralModel linear(Matrix a);
  static StructuralModel nonlinear(std::vector<std::vector<Matrix>> layers);
  static StructuralModel zero_linear(std::size_t dim);
  /// Nonlinear model with one hidden layer; first-layer weights ~ N(0, scale^2).
  static StructuralModel random_nonlinear(std::size_t dim, std::size_t hidden, double scale,
                                          Rng& rng);

  SemKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }

  const Matrix& weights() const { return a_; }
  Matrix& weights() { return a_; }
  const std::vector<Matrix>& layers(std::size_t node) const { return layers_[node]; }
  std::vector<Matrix>& layers(std::size_t node) { return layers_[node]; }

  Vector apply(std::span<const double> z) const;
  Matrix apply_rows(const Matrix& z) const;
  /// h_node(z) for a single output node.
  double apply_node(std::size_t node, std::span<const double> z) const;
  Vector residual(std::span<const double> z) const;
  Matrix residual_rows(const Matrix& z) const;

  /// Parameter blocks in a fixed order (used by optimizers and gradients).
  std::vector<Matrix*> blocks();
  std::vector<const Matrix*> blocks() const;
  std::size_t parameter_count() const;

  /// Same architecture, all parameters zero.
  StructuralModel zeros_like() const;
  /// Re-zeroes self-dependence entries.
  void enforce_mask();

  friend bool operator==(const StructuralModel&, const StructuralModel&) = default;

 private:
  SemKind kind_ = SemKind::kLinear;
  std::size_t dim_ = 0;
  Matrix a_;
  std::vector<std::vector<Matrix>> layers_;

  void check_input(std::size_t n) const;
};

/// Accumulates gradients of a scalar loss through H = h(Z).
/// `upstream` is dL/dH (n x d); parameter gradients are added into `grad`
/// (same architecture as h) and, when non-null, dL/dZ is added into `grad_input`.
void sem_backward(const StructuralModel& h, const Matrix& z, const Matrix& upstream,
                  StructuralModel& grad, Matrix* grad_input);

/// Weighted adjacency W, W(m, i) = influence of node m on node i; nonnegative, zero diagonal.
Matrix adjacency(const StructuralModel& h);

/// Adds dL/dparams given dL/dW for W = adjacency(h).
void adjacency_backward(const StructuralModel& h, const Matrix& grad_w, StructuralModel& grad);

struct Penalty {
  double value = 0.0;
  Matrix grad;
};

/// (tr(exp(W o W)) - d)^2 and its gradient with respect to W.
Penalty notears_penalty(const Matrix& w);

/// Sum of adjacency entries and its gradient (all ones off the diagonal).
Penalty l1_penalty(const Matrix& w);

/// Directed acyclic edge set with a topological order.
class DagStructure {
 public:
  DagStructure() = default;
  DagStructure(std::size_t nodes, std::vector<std::pair<std::size_t, std::size_t>> edges);

  std::size_t nodes() const { return nodes_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& edges() const { return edges_; }
  /// Kahn order with ascending index tie-break.
  const std::vector<std::size_t>& order() const { return order_; }
  bool has_edge(std::size_t from, std::size_t to) const;
  std::vector<std::size_t> parents(std::size_t node) const;
  std::vector<std::size_t> children(std::size_t node) const;
  std::vector<std::size_t> roots() const;
  std::vector<std::size_t> sinks() const;
  /// Every node reachable from `node` (excluding itself).
  std::vector<std::size_t> descendants(std::size_t node) const;
  std::vector<std::size_t> ancestors(std::size_t node) const;

 private:
  std::size_t nodes_ = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges_;
  std::vector<std::size_t> order_;
  std::vector<char> present_;
};

/// Edges where W(m, i) > threshold. Throws CycleError naming one cycle.
DagStructure dag_extract(const Matrix& w, double threshold = 0.3);

/// True when the support of W (entries > 0) contains no directed cycle.
bool is_acyclic(const Matrix& w);

}  // namespace cmvae
