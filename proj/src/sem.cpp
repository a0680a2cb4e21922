#include "cmvae/sem.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <sstream>

#include "cmvae/errors.hpp"

namespace cmvae {

const char* to_string(SemKind kind) {
  return kind == SemKind::kLinear ? "linear" : "nonlinear";
}

SemKind sem_kind_from_string(const std::string& s) {
  if (s == "linear") return SemKind::kLinear;
  if (s == "nonlinear") return SemKind::kNonlinear;
  throw FormatError("unknown SEM kind '" + s + "'");
}

StructuralModel StructuralModel::linear(Matrix a) {
  if (!a.is_square()) throw DimensionError("linear SEM weights must be square");
  if (!all_finite(a)) throw NumericalError("linear SEM weights must be finite");
  StructuralModel m;
  m.kind_ = SemKind::kLinear;
  m.dim_ = a.rows();
  m.a_ = std::move(a);
  m.enforce_mask();
  return m;
}

StructuralModel StructuralModel::nonlinear(std::vector<std::vector<Matrix>> layers) {
  StructuralModel m;
  m.kind_ = SemKind::kNonlinear;
  m.dim_ = layers.size();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& stack = layers[i];
    if (stack.empty()) throw DimensionError("node " + std::to_string(i) + " has no layers");
    if (stack.front().rows() != m.dim_) {
      throw DimensionError("node " + std::to_string(i) + " first layer must have " +
                           std::to_string(m.dim_) + " rows");
    }
    for (std::size_t l = 1; l < stack.size(); ++l) {
      if (stack[l].rows() != stack[l - 1].cols()) {
        throw DimensionError("node " + std::to_string(i) + " layer " + std::to_string(l) +
                             " shape mismatch");
      }
    }
    if (stack.back().cols() != 1) {
      throw DimensionError("node " + std::to_string(i) + " output layer must have one column");
    }
    for (const auto& w : stack) {
      if (!all_finite(w)) throw NumericalError("nonlinear SEM weights must be finite");
    }
  }
  m.layers_ = std::move(layers);
  m.enforce_mask();
  return m;
}

StructuralModel StructuralModel::zero_linear(std::size_t dim) { return linear(Matrix(dim, dim)); }

StructuralModel StructuralModel::random_nonlinear(std::size_t dim, std::size_t hidden,
                                                  double scale, Rng& rng) {
  std::vector<std::vector<Matrix>> layers(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    Matrix first(dim, hidden);
    for (double& v : first.values()) v = scale * rng.normal();
    Matrix head(hidden, 1);
    for (double& v : head.values()) v = scale * rng.normal();
    layers[i] = {std::move(first), std::move(head)};
  }
  return nonlinear(std::move(layers));
}

void StructuralModel::enforce_mask() {
  if (kind_ == SemKind::kLinear) {
    for (std::size_t i = 0; i < dim_; ++i) a_(i, i) = 0.0;
  } else {
    for (std::size_t i = 0; i < dim_; ++i) {
      for (double& v : layers_[i].front().row(i)) v = 0.0;
    }
  }
}

void StructuralModel::check_input(std::size_t n) const {
  if (n != dim_) {
    throw DimensionError("SEM expects codes of length " + std::to_string(dim_) + ", got " +
                         std::to_string(n));
  }
}

double StructuralModel::apply_node(std::size_t node, std::span<const double> z) const {
  check_input(z.size());
  if (kind_ == SemKind::kLinear) {
    double s = 0.0;
    for (std::size_t m = 0; m < dim_; ++m) s += z[m] * a_(m, node);
    return s;
  }
  const auto& stack = layers_[node];
  Vector act(z.begin(), z.end());
  for (std::size_t l = 0; l + 1 < stack.size(); ++l) {
    act = vecmat(act, stack[l]);
    for (double& v : act) v = logistic(v);
  }
  return vecmat(act, stack.back())[0];
}

Vector StructuralModel::apply(std::span<const double> z) const {
  check_input(z.size());
  if (kind_ == SemKind::kLinear) return vecmat(z, a_);
  Vector out(dim_);
  for (std::size_t i = 0; i < dim_; ++i) out[i] = apply_node(i, z);
  return out;
}

Matrix StructuralModel::apply_rows(const Matrix& z) const {
  check_input(z.cols());
  if (kind_ == SemKind::kLinear) return matmul(z, a_);
  Matrix out(z.rows(), dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    const auto& stack = layers_[i];
    Matrix act = z;
    for (std::size_t l = 0; l + 1 < stack.size(); ++l) {
      act = matmul(act, stack[l]);
      for (double& v : act.values()) v = logistic(v);
    }
    const Matrix col = matmul(act, stack.back());
    for (std::size_t r = 0; r < z.rows(); ++r) out(r, i) = col(r, 0);
  }
  return out;
}

Vector StructuralModel::residual(std::span<const double> z) const {
  Vector h = apply(z);
  for (std::size_t j = 0; j < dim_; ++j) h[j] = z[j] - h[j];
  return h;
}

Matrix StructuralModel::residual_rows(const Matrix& z) const {
  Matrix h = apply_rows(z);
  for (std::size_t i = 0; i < h.size(); ++i) h.values()[i] = z.values()[i] - h.values()[i];
  return h;
}

std::vector<Matrix*> StructuralModel::blocks() {
  std::vector<Matrix*> out;
  if (kind_ == SemKind::kLinear) {
    out.push_back(&a_);
  } else {
    for (auto& stack : layers_)
      for (auto& w : stack) out.push_back(&w);
  }
  return out;
}

std::vector<const Matrix*> StructuralModel::blocks() const {
  std::vector<const Matrix*> out;
  for (Matrix* m : const_cast<StructuralModel*>(this)->blocks()) out.push_back(m);
  return out;
}

std::size_t StructuralModel::parameter_count() const {
  std::size_t n = 0;
  for (const Matrix* m : blocks()) n += m->size();
  return n;
}

StructuralModel StructuralModel::zeros_like() const {
  StructuralModel g = *this;
  for (Matrix* m : g.blocks()) m->fill(0.0);
  return g;
}

void sem_backward(const StructuralModel& h, const Matrix& z, const Matrix& upstream,
                  StructuralModel& grad, Matrix* grad_input) {
  const std::size_t d = h.dim();
  if (z.cols() != d || upstream.cols() != d || upstream.rows() != z.rows()) {
    throw DimensionError("sem_backward: shape mismatch");
  }
  if (h.kind() == SemKind::kLinear) {
    grad.weights() += matmul(z.transpose(), upstream);
    if (grad_input) *grad_input += matmul_transposed(upstream, h.weights());
    grad.enforce_mask();
    return;
  }
  const std::size_t n = z.rows();
  for (std::size_t i = 0; i < d; ++i) {
    const auto& stack = h.layers(i);
    const std::size_t depth = stack.size();
    // activations[l] is the input to layer l
    std::vector<Matrix> activations;
    activations.reserve(depth);
    activations.push_back(z);
    for (std::size_t l = 0; l + 1 < depth; ++l) {
      Matrix a = matmul(activations.back(), stack[l]);
      for (double& v : a.values()) v = logistic(v);
      activations.push_back(std::move(a));
    }
    Matrix g(n, 1);
    for (std::size_t r = 0; r < n; ++r) g(r, 0) = upstream(r, i);
    auto& gstack = grad.layers(i);
    for (std::size_t l = depth; l-- > 0;) {
      gstack[l] += matmul(activations[l].transpose(), g);
      Matrix back = matmul_transposed(g, stack[l]);
      if (l == 0) {
        if (grad_input) *grad_input += back;
        break;
      }
      const Matrix& s = activations[l];
      for (std::size_t k = 0; k < back.size(); ++k) {
        const double sv = s.values()[k];
        back.values()[k] *= sv * (1.0 - sv);
      }
      g = std::move(back);
    }
  }
  grad.enforce_mask();
}

Matrix adjacency(const StructuralModel& h) {
  const std::size_t d = h.dim();
  Matrix w(d, d);
  if (h.kind() == SemKind::kLinear) {
    for (std::size_t m = 0; m < d; ++m)
      for (std::size_t i = 0; i < d; ++i) w(m, i) = m == i ? 0.0 : std::abs(h.weights()(m, i));
    return w;
  }
  for (std::size_t i = 0; i < d; ++i) {
    const Matrix& first = h.layers(i).front();
    for (std::size_t m = 0; m < d; ++m) {
      if (m == i) continue;
      double s = 0.0;
      for (double v : first.row(m)) s += v * v;
      w(m, i) = std::sqrt(s);
    }
  }
  return w;
}

void adjacency_backward(const StructuralModel& h, const Matrix& grad_w, StructuralModel& grad) {
  const std::size_t d = h.dim();
  if (grad_w.rows() != d || grad_w.cols() != d) throw DimensionError("adjacency_backward: shape");
  if (h.kind() == SemKind::kLinear) {
    for (std::size_t m = 0; m < d; ++m) {
      for (std::size_t i = 0; i < d; ++i) {
        if (m == i) continue;
        const double a = h.weights()(m, i);
        const double sign = a > 0.0 ? 1.0 : (a < 0.0 ? -1.0 : 0.0);
        grad.weights()(m, i) += grad_w(m, i) * sign;
      }
    }
    return;
  }
  for (std::size_t i = 0; i < d; ++i) {
    const Matrix& first = h.layers(i).front();
    Matrix& gfirst = grad.layers(i).front();
    for (std::size_t m = 0; m < d; ++m) {
      if (m == i) continue;
      double s = 0.0;
      for (double v : first.row(m)) s += v * v;
      const double norm = std::sqrt(s);
      if (norm == 0.0) continue;
      auto src = first.row(m);
      auto dst = gfirst.row(m);
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] += grad_w(m, i) * src[k] / norm;
    }
  }
}

Penalty notears_penalty(const Matrix& w) {
  if (!w.is_square()) throw DimensionError("notears_penalty: non-square adjacency");
  const std::size_t d = w.rows();
  const Matrix sq = hadamard(w, w);
  const Matrix e = mat_exp(sq);
  const double gap = trace(e) - static_cast<double>(d);
  Penalty p;
  p.value = gap * gap;
  p.grad = Matrix(d, d);
  for (std::size_t m = 0; m < d; ++m)
    for (std::size_t i = 0; i < d; ++i) p.grad(m, i) = 2.0 * gap * e(i, m) * 2.0 * w(m, i);
  return p;
}

Penalty l1_penalty(const Matrix& w) {
  Penalty p;
  p.grad = Matrix(w.rows(), w.cols(), 1.0);
  for (std::size_t i = 0; i < std::min(w.rows(), w.cols()); ++i) p.grad(i, i) = 0.0;
  for (std::size_t m = 0; m < w.rows(); ++m)
    for (std::size_t i = 0; i < w.cols(); ++i)
      if (m != i) p.value += std::abs(w(m, i));
  return p;
}

namespace {

// Kahn's algorithm with a min-heap; returns the order and leaves unresolved nodes with
// positive in-degree.
std::vector<std::size_t> kahn_order(std::size_t n, const std::vector<char>& present,
                                    std::vector<std::size_t>& indegree) {
  indegree.assign(n, 0);
  for (std::size_t m = 0; m < n; ++m)
    for (std::size_t i = 0; i < n; ++i)
      if (present[m * n + i]) ++indegree[i];
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.push(i);
  std::vector<std::size_t> order;
  order.reserve(n);
  while (!ready.empty()) {
    const std::size_t v = ready.top();
    ready.pop();
    order.push_back(v);
    for (std::size_t i = 0; i < n; ++i) {
      if (present[v * n + i] && --indegree[i] == 0) ready.push(i);
    }
  }
  return order;
}

std::string describe_cycle(std::size_t n, const std::vector<char>& present,
                           const std::vector<std::size_t>& indegree) {
  // Walk backwards along edges inside the unresolved set until a node repeats.
  std::size_t start = 0;
  while (start < n && indegree[start] == 0) ++start;
  std::vector<std::size_t> path;
  std::vector<int> seen_at(n, -1);
  std::size_t v = start;
  while (seen_at[v] < 0) {
    seen_at[v] = static_cast<int>(path.size());
    path.push_back(v);
    std::size_t pred = n;
    for (std::size_t m = 0; m < n; ++m) {
      if (present[m * n + v] && indegree[m] > 0) {
        pred = m;
        break;
      }
    }
    if (pred == n) break;
    v = pred;
  }
  std::vector<std::size_t> cycle(path.begin() + seen_at[v], path.end());
  std::reverse(cycle.begin(), cycle.end());
  std::ostringstream os;
  for (std::size_t k = 0; k < cycle.size(); ++k) os << cycle[k] << " -> ";
  if (!cycle.empty()) os << cycle.front();
  return os.str();
}

}  // namespace

DagStructure::DagStructure(std::size_t nodes,
                           std::vector<std::pair<std::size_t, std::size_t>> edges)
    : nodes_(nodes), edges_(std::move(edges)), present_(nodes * nodes, 0) {
  for (const auto& [from, to] : edges_) {
    if (from >= nodes_ || to >= nodes_) throw ArgumentError("edge endpoint out of range");
    if (from == to) throw CycleError("self-loop at node " + std::to_string(from));
    present_[from * nodes_ + to] = 1;
  }
  std::sort(edges_.begin(), edges_.end());
  edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  std::vector<std::size_t> indegree;
  order_ = kahn_order(nodes_, present_, indegree);
  if (order_.size() != nodes_) {
    throw CycleError("graph contains a cycle: " + describe_cycle(nodes_, present_, indegree));
  }
}

bool DagStructure::has_edge(std::size_t from, std::size_t to) const {
  return present_[from * nodes_ + to] != 0;
}

std::vector<std::size_t> DagStructure::parents(std::size_t node) const {
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < nodes_; ++m)
    if (has_edge(m, node)) out.push_back(m);
  return out;
}

std::vector<std::size_t> DagStructure::children(std::size_t node) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_; ++i)
    if (has_edge(node, i)) out.push_back(i);
  return out;
}

std::vector<std::size_t> DagStructure::roots() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_; ++i)
    if (parents(i).empty()) out.push_back(i);
  return out;
}

std::vector<std::size_t> DagStructure::sinks() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_; ++i)
    if (children(i).empty()) out.push_back(i);
  return out;
}

std::vector<std::size_t> DagStructure::descendants(std::size_t node) const {
  std::vector<char> seen(nodes_, 0);
  std::vector<std::size_t> stack{node};
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    for (std::size_t c : children(v)) {
      if (!seen[c]) {
        seen[c] = 1;
        stack.push_back(c);
      }
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_; ++i)
    if (seen[i] && i != node) out.push_back(i);
  return out;
}

std::vector<std::size_t> DagStructure::ancestors(std::size_t node) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < nodes_; ++i) {
    if (i == node) continue;
    const auto desc = descendants(i);
    if (std::find(desc.begin(), desc.end(), node) != desc.end()) out.push_back(i);
  }
  return out;
}

DagStructure dag_extract(const Matrix& w, double threshold) {
  if (!w.is_square()) throw DimensionError("dag_extract: non-square adjacency");
  if (!(threshold > 0.0)) throw ArgumentError("dag_extract: threshold must be positive");
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t m = 0; m < w.rows(); ++m)
    for (std::size_t i = 0; i < w.cols(); ++i)
      if (m != i && w(m, i) > threshold) edges.emplace_back(m, i);
  return DagStructure(w.rows(), std::move(edges));
}

bool is_acyclic(const Matrix& w) {
  if (!w.is_square()) throw DimensionError("is_acyclic: non-square adjacency");
  const std::size_t n = w.rows();
  std::vector<char> present(n * n, 0);
  for (std::size_t m = 0; m < n; ++m)
    for (std::size_t i = 0; i < n; ++i) present[m * n + i] = w(m, i) > 0.0;
  std::vector<std::size_t> indegree;
  return kahn_order(n, present, indegree).size() == n;
}

}  // namespace cmvae
