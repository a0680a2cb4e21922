#include "cmvae/vae.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "cmvae/errors.hpp"
#include "cmvae/kernels.hpp"
#include "cmvae/optim.hpp"

namespace cmvae {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kHalfLn2 = 0.34657359027997264;

Matrix random_matrix(std::size_t r, std::size_t c, double scale, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

void add_row_bias(Matrix& m, const Matrix& bias) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] += bias(0, c);
  }
}

Matrix column_sums(const Matrix& m) {
  Matrix out(1, m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out(0, c) += m(r, c);
  }
  return out;
}

// Column means summed in sorted order, so the pooled context does not depend on row order.
Matrix pooled_mean(const Matrix& m) {
  Matrix out(1, m.cols());
  Vector col(m.rows());
  for (std::size_t c = 0; c < m.cols(); ++c) {
    for (std::size_t r = 0; r < m.rows(); ++r) col[r] = m(r, c);
    std::sort(col.begin(), col.end());
    double s = 0.0;
    for (double v : col) s += v;
    out(0, c) = s / static_cast<double>(m.rows());
  }
  return out;
}

// Encoder intermediates kept for the backward pass.
struct EncoderPass {
  Matrix g;        // M x 2r
  Matrix raw_lv;   // M x d, before clamping
  Posterior post;
};

EncoderPass encoder_forward(const EncoderParams& enc, const Matrix& x) {
  if (x.rows() == 0) throw ArgumentError("encode_task: empty task");
  if (x.cols() != enc.input_dim()) {
    throw DimensionError("encode_task: observation length " + std::to_string(x.cols()) +
                         " does not match encoder input " + std::to_string(enc.input_dim()));
  }
  const std::size_t m = x.rows();
  const std::size_t r = enc.embed_dim();
  Matrix emb = matmul(x, enc.we);
  add_row_bias(emb, enc.be);
  const Matrix pooled = pooled_mean(emb);

  EncoderPass pass;
  pass.g = Matrix(m, 2 * r);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < r; ++c) {
      pass.g(i, c) = emb(i, c);
      pass.g(i, r + c) = pooled(0, c);
    }
  }
  pass.post.mu = matmul(pass.g, enc.wmu);
  add_row_bias(pass.post.mu, enc.bmu);
  pass.raw_lv = matmul(pass.g, enc.wlv);
  add_row_bias(pass.raw_lv, enc.blv);
  pass.post.sigma2 = Matrix(m, enc.latent_dim());
  for (std::size_t k = 0; k < pass.raw_lv.size(); ++k) {
    const double lv = std::clamp(pass.raw_lv.values()[k], -kLogVarBound, kLogVarBound);
    pass.post.sigma2.values()[k] = std::exp(lv);
  }
  return pass;
}

void encoder_backward(const EncoderParams& enc, const Matrix& x, const EncoderPass& pass,
                      const Matrix& dmu, Matrix dlv, EncoderParams& grad) {
  const std::size_t m = x.rows();
  const std::size_t r = enc.embed_dim();
  for (std::size_t k = 0; k < dlv.size(); ++k) {
    const double raw = pass.raw_lv.values()[k];
    if (raw < -kLogVarBound || raw > kLogVarBound) dlv.values()[k] = 0.0;
  }
  const Matrix gt = pass.g.transpose();
  grad.wmu += matmul(gt, dmu);
  grad.bmu += column_sums(dmu);
  grad.wlv += matmul(gt, dlv);
  grad.blv += column_sums(dlv);
  Matrix dg = matmul_transposed(dmu, enc.wmu);
  dg += matmul_transposed(dlv, enc.wlv);

  Matrix demb(m, r);
  Matrix dpool(1, r);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < r; ++c) {
      demb(i, c) = dg(i, c);
      dpool(0, c) += dg(i, r + c);
    }
  }
  const double inv = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < r; ++c) demb(i, c) += dpool(0, c) * inv;
  }
  grad.we += matmul(x.transpose(), demb);
  grad.be += column_sums(demb);
}

Matrix concat_columns(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto row = out.row(i);
    std::copy(a.row(i).begin(), a.row(i).end(), row.begin());
    std::copy(b.row(i).begin(), b.row(i).end(), row.begin() + static_cast<long>(a.cols()));
  }
  return out;
}

struct DecoderPass {
  Matrix input;   // N x 2d
  Matrix hidden;  // N x n, after the logistic
  Matrix out;     // N x p
};

DecoderPass decoder_forward(const DecoderParams& dec, const Matrix& z, const Matrix& e) {
  if (z.cols() != dec.latent_dim() || e.cols() != dec.latent_dim()) {
    throw DimensionError("decode: latent length does not match decoder");
  }
  DecoderPass pass;
  pass.input = concat_columns(z, e);
  pass.hidden = matmul(pass.input, dec.w1);
  add_row_bias(pass.hidden, dec.b1);
  for (double& v : pass.hidden.values()) v = logistic(v);
  pass.out = matmul(pass.hidden, dec.w2);
  add_row_bias(pass.out, dec.b2);
  return pass;
}

// Sum over sample rows of the ELBO integrand for one task. When `grad` is set,
// adds d(-scale * sum)/dparams.
double task_terms(const Model& model, const Matrix& x, const CmogPrior& prior,
                  const LatentDraws& draws, double scale, Model* grad) {
  const std::size_t m = x.rows();
  const std::size_t d = model.h.dim();
  const std::size_t p = x.cols();
  if (model.enc.latent_dim() != d || model.dec.latent_dim() != d || prior.dim() != d) {
    throw DimensionError("model blocks disagree on the latent dimension");
  }
  if (model.dec.output_dim() != p) throw DimensionError("decoder output length mismatch");
  const std::size_t n = draws.xi.rows();
  if (n % m != 0) throw DimensionError("latent draws do not tile the task");

  const EncoderPass enc = encoder_forward(model.enc, x);
  const Matrix z = sample_codes(enc.post, draws);
  const Matrix hz = model.h.apply_rows(z);
  Matrix e = hz;
  e += draws.xie;
  const DecoderPass dec = decoder_forward(model.dec, z, e);

  // Prior log density with responsibilities over components.
  const std::size_t kk = prior.components();
  Vector off(kk);
  for (std::size_t k = 0; k < kk; ++k) {
    off[k] = std::log(prior.pi[k]) + causal_regularizer(prior, model.h, k);
  }
  const kernels::EStep pz = kernels::estep(prior, off, z);

  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t i = s % m;
    double recon = 0.0;
    for (std::size_t c = 0; c < p; ++c) {
      const double diff = x(i, c) - dec.out(s, c);
      recon += diff * diff;
    }
    double kl = 0.0;
    double logq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      kl += e_divergence(z(s, j) - hz(s, j));
      const double lv = std::log(enc.post.sigma2(i, j));
      logq += -0.5 * (kLog2Pi + lv) - 0.5 * draws.xi(s, j) * draws.xi(s, j);
    }
    total += -0.5 * recon - 0.5 * static_cast<double>(p) * kLog2Pi - kl + pz.lse[s] - logq;
  }
  if (!grad) return total;

  const double c = scale;
  // Decoder.
  Matrix dout(n, p);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t i = s % m;
    for (std::size_t col = 0; col < p; ++col) dout(s, col) = -c * (x(i, col) - dec.out(s, col));
  }
  grad->dec.w2 += matmul(dec.hidden.transpose(), dout);
  grad->dec.b2 += column_sums(dout);
  Matrix da = matmul_transposed(dout, model.dec.w2);
  for (std::size_t k = 0; k < da.size(); ++k) {
    const double sv = dec.hidden.values()[k];
    da.values()[k] *= sv * (1.0 - sv);
  }
  grad->dec.w1 += matmul(dec.input.transpose(), da);
  grad->dec.b1 += column_sums(da);
  const Matrix dinput = matmul_transposed(da, model.dec.w1);

  Matrix dz(n, d);
  Matrix dh(n, d);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < d; ++j) {
      const double eps = z(s, j) - hz(s, j);
      dz(s, j) = dinput(s, j) + c * 0.5 * eps;
      dh(s, j) = dinput(s, d + j) - c * 0.5 * eps;
    }
  }
  // Prior: d(-lse)/dz = sum_k r_k (z - mu_k) / sigma2_k.
  Vector mass(kk, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t k = 0; k < kk; ++k) {
      const double rk = pz.omega(s, k);
      mass[k] += rk;
      for (std::size_t j = 0; j < d; ++j) {
        dz(s, j) += c * rk * (z(s, j) - prior.mu(k, j)) / prior.sigma2(k, j);
      }
    }
  }
  sem_backward(model.h, z, dh, grad->h, &dz);
  // Regularizer: d(-reg_k)/dh(mu_k) = -(mu_k - h(mu_k)) / s_k^2, weighted by mass.
  {
    const Matrix gap = model.h.residual_rows(prior.mu);
    Matrix up(kk, d);
    for (std::size_t k = 0; k < kk; ++k) {
      for (std::size_t j = 0; j < d; ++j) up(k, j) = -c * mass[k] * gap(k, j) / prior.scale2_at(k);
    }
    sem_backward(model.h, prior.mu, up, grad->h, nullptr);
  }

  Matrix dmu(m, d);
  Matrix dlv(m, d);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t i = s % m;
    for (std::size_t j = 0; j < d; ++j) {
      const double sd = std::sqrt(enc.post.sigma2(i, j));
      dmu(i, j) += dz(s, j);
      dlv(i, j) += dz(s, j) * 0.5 * sd * draws.xi(s, j) - 0.5 * c;
    }
  }
  encoder_backward(model.enc, x, enc, dmu, std::move(dlv), grad->enc);
  return total;
}

}  // namespace

EncoderParams EncoderParams::random(std::size_t p, std::size_t r, std::size_t d, double scale,
                                    Rng& rng) {
  EncoderParams e;
  e.we = random_matrix(p, r, scale, rng);
  e.be = Matrix(1, r);
  e.wmu = random_matrix(2 * r, d, scale, rng);
  e.bmu = Matrix(1, d);
  e.wlv = random_matrix(2 * r, d, scale, rng);
  e.blv = Matrix(1, d);
  return e;
}

EncoderParams EncoderParams::identity(std::size_t d, double log_var) {
  EncoderParams e;
  e.we = Matrix::identity(d);
  e.be = Matrix(1, d);
  e.wmu = Matrix(2 * d, d);
  for (std::size_t j = 0; j < d; ++j) e.wmu(j, j) = 1.0;
  e.bmu = Matrix(1, d);
  e.wlv = Matrix(2 * d, d);
  e.blv = Matrix(1, d, log_var);
  return e;
}

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams e;
  e.we = Matrix(we.rows(), we.cols());
  e.be = Matrix(be.rows(), be.cols());
  e.wmu = Matrix(wmu.rows(), wmu.cols());
  e.bmu = Matrix(bmu.rows(), bmu.cols());
  e.wlv = Matrix(wlv.rows(), wlv.cols());
  e.blv = Matrix(blv.rows(), blv.cols());
  return e;
}

std::vector<Matrix*> EncoderParams::blocks() { return {&we, &be, &wmu, &bmu, &wlv, &blv}; }
std::vector<const Matrix*> EncoderParams::blocks() const {
  return {&we, &be, &wmu, &bmu, &wlv, &blv};
}

DecoderParams DecoderParams::random(std::size_t d, std::size_t hidden, std::size_t p,
                                    double scale, Rng& rng) {
  DecoderParams dec;
  dec.w1 = random_matrix(2 * d, hidden, scale, rng);
  dec.b1 = Matrix(1, hidden);
  dec.w2 = random_matrix(hidden, p, scale, rng);
  dec.b2 = Matrix(1, p);
  return dec;
}

DecoderParams DecoderParams::zeros_like() const {
  DecoderParams dec;
  dec.w1 = Matrix(w1.rows(), w1.cols());
  dec.b1 = Matrix(b1.rows(), b1.cols());
  dec.w2 = Matrix(w2.rows(), w2.cols());
  dec.b2 = Matrix(b2.rows(), b2.cols());
  return dec;
}

std::vector<Matrix*> DecoderParams::blocks() { return {&w1, &b1, &w2, &b2}; }
std::vector<const Matrix*> DecoderParams::blocks() const { return {&w1, &b1, &w2, &b2}; }

Model Model::zeros_like() const { return {enc.zeros_like(), dec.zeros_like(), h.zeros_like()}; }

std::vector<Matrix*> Model::blocks() {
  std::vector<Matrix*> out = enc.blocks();
  for (Matrix* b : dec.blocks()) out.push_back(b);
  for (Matrix* b : h.blocks()) out.push_back(b);
  return out;
}

std::vector<const Matrix*> Model::blocks() const {
  std::vector<const Matrix*> out = enc.blocks();
  for (const Matrix* b : dec.blocks()) out.push_back(b);
  for (const Matrix* b : h.blocks()) out.push_back(b);
  return out;
}

void TrainConfig::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ArgumentError("lambda1, lambda2 must be >= 0");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning rate must be positive");
  if (mc == 0) throw ArgumentError("mc must be positive");
  if (task_size == 0 || batch_tasks == 0) throw ArgumentError("task and batch sizes must be positive");
  if (components == 0) throw ArgumentError("components must be positive");
  if (latent_dim == 0 || embed_dim == 0 || decoder_hidden == 0) {
    throw ArgumentError("layer sizes must be positive");
  }
  if (sem == SemKind::kNonlinear && sem_hidden == 0) throw ArgumentError("sem_hidden must be positive");
  if (!(gamma2 > 0.0)) throw ArgumentError("gamma2 must be positive");
  if (em_steps == 0) throw ArgumentError("em_steps must be positive");
}

Posterior encode_task(const EncoderParams& enc, const Matrix& x) {
  return encoder_forward(enc, x).post;
}

Matrix decode(const DecoderParams& dec, const Matrix& z, const Matrix& e) {
  return decoder_forward(dec, z, e).out;
}

double e_divergence(double eps) { return kHalfLn2 + (1.0 + eps * eps) / 4.0 - 0.5; }

LatentDraws draw_noise(std::size_t m, std::size_t d, std::size_t mc, Rng& rng) {
  LatentDraws out{Matrix(mc * m, d), Matrix(mc * m, d)};
  for (double& v : out.xi.values()) v = rng.normal();
  for (double& v : out.xie.values()) v = rng.normal();
  return out;
}

Matrix sample_codes(const Posterior& post, const LatentDraws& draws) {
  const std::size_t m = post.mu.rows();
  const std::size_t d = post.mu.cols();
  if (draws.xi.cols() != d || draws.xi.rows() % m != 0) {
    throw DimensionError("sample_codes: draws do not match the posterior");
  }
  Matrix z(draws.xi.rows(), d);
  for (std::size_t s = 0; s < z.rows(); ++s) {
    const std::size_t i = s % m;
    for (std::size_t j = 0; j < d; ++j) {
      z(s, j) = post.mu(i, j) + std::sqrt(post.sigma2(i, j)) * draws.xi(s, j);
    }
  }
  return z;
}

double elbo_estimate(const Model& model, const Matrix& x, const CmogPrior& prior, Rng& rng,
                     std::size_t mc) {
  if (mc == 0) throw ArgumentError("elbo_estimate: mc must be positive");
  const LatentDraws draws = draw_noise(x.rows(), model.h.dim(), mc, rng);
  return task_terms(model, x, prior, draws, 0.0, nullptr) / static_cast<double>(draws.xi.rows());
}

LossResult total_loss(const Model& model, const std::vector<Matrix>& tasks,
                      const std::vector<CmogPrior>& priors, const TrainConfig& cfg,
                      std::uint64_t noise_seed, Model* grad) {
  if (tasks.empty()) throw ArgumentError("total_loss: empty batch");
  if (priors.size() != tasks.size()) throw DimensionError("total_loss: one prior per task");
  const Rng base(noise_seed);
  const double b = static_cast<double>(tasks.size());
  LossResult out;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    Rng rng = base.derive(t);
    const LatentDraws draws = draw_noise(tasks[t].rows(), model.h.dim(), cfg.mc, rng);
    const double n = static_cast<double>(draws.xi.rows());
    out.elbo += task_terms(model, tasks[t], priors[t], draws, 1.0 / (b * n), grad) / (n * b);
  }
  const Matrix w = adjacency(model.h);
  const Penalty dag = notears_penalty(w);
  const Penalty l1 = l1_penalty(w);
  out.dag = dag.value;
  out.l1 = l1.value;
  out.loss = -out.elbo + cfg.lambda1 * dag.value + cfg.lambda2 * l1.value;
  if (grad) {
    adjacency_backward(model.h, dag.grad * cfg.lambda1 + l1.grad * cfg.lambda2, grad->h);
    grad->h.enforce_mask();
  }
  return out;
}

std::vector<CmogPrior> fit_task_priors(const Model& model, const std::vector<Matrix>& tasks,
                                       const TrainConfig& cfg, std::uint64_t noise_seed) {
  const Rng base(noise_seed);
  std::vector<CmogPrior> out;
  out.reserve(tasks.size());
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    Rng rng = base.derive(t);
    const LatentDraws draws = draw_noise(tasks[t].rows(), model.h.dim(), cfg.mc, rng);
    const Matrix z = sample_codes(encode_task(model.enc, tasks[t]), draws);
    EmConfig em;
    em.steps = cfg.em_steps;
    em.gamma2 = cfg.gamma2;
    em.seed = splitmix64(noise_seed ^ (0x9e3779b97f4a7c15ULL * (t + 1)));
    out.push_back(fit_unsupervised(z, cfg.components, model.h, em).prior);
  }
  return out;
}

Model init_model(std::size_t p, const TrainConfig& cfg) {
  Rng rng(cfg.seed);
  Model model;
  model.enc = EncoderParams::random(p, cfg.embed_dim, cfg.latent_dim, cfg.init_scale, rng);
  model.dec = DecoderParams::random(cfg.latent_dim, cfg.decoder_hidden, p, cfg.init_scale, rng);
  if (cfg.sem == SemKind::kLinear) {
    Matrix a = random_matrix(cfg.latent_dim, cfg.latent_dim, cfg.init_scale, rng);
    for (std::size_t j = 0; j < cfg.latent_dim; ++j) a(j, j) = 0.0;
    model.h = StructuralModel::linear(std::move(a));
  } else {
    model.h = StructuralModel::random_nonlinear(cfg.latent_dim, cfg.sem_hidden, cfg.init_scale, rng);
  }
  return model;
}

TrainResult train(const Matrix& x, const TrainConfig& cfg) {
  cfg.validate();
  if (x.rows() == 0) throw ArgumentError("train: empty dataset");
  TrainResult out{init_model(x.cols(), cfg), {}};
  Model& model = out.model;
  Adam adam(cfg.learning_rate);
  Rng rng = Rng(cfg.seed).derive(1);
  const std::size_t m = std::min(cfg.task_size, x.rows());
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<Matrix> tasks;
    for (std::size_t t = 0; t < cfg.batch_tasks; ++t) {
      const auto rows = rng.sample_without_replacement(x.rows(), m);
      Matrix task(m, x.cols());
      for (std::size_t i = 0; i < m; ++i) {
        std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), task.row(i).begin());
      }
      tasks.push_back(std::move(task));
    }
    const std::uint64_t noise = rng.next_u64();
    const std::vector<CmogPrior> priors = fit_task_priors(model, tasks, cfg, noise);
    Model grad = model.zeros_like();
    const LossResult loss = total_loss(model, tasks, priors, cfg, noise, &grad);
    if (!std::isfinite(loss.loss)) {
      throw DivergenceError("train: loss is not finite at iteration " + std::to_string(it) +
                            " (elbo " + std::to_string(loss.elbo) + ", dag " +
                            std::to_string(loss.dag) + ")");
    }
    out.loss_history.push_back(loss.loss);
    adam.step(model.blocks(), std::as_const(grad).blocks());
    model.h.enforce_mask();
  }
  return out;
}

}  // namespace cmvae
