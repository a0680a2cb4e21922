#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cmvae/causal_em.hpp"
#include "cmvae/cmog.hpp"
#include "cmvae/numerics.hpp"
#include "cmvae/sem.hpp"

namespace cmvae {

inline constexpr double kLogVarBound = 10.0;

/// Set encoder: H = X We + be, c = mean_i H_i, G = [H | 1 c],
/// mu = G Wmu + bmu, log sigma^2 = clamp(G Wlv + blv, +-kLogVarBound).
struct EncoderParams {
  Matrix we, be;    // p x r, 1 x r
  Matrix wmu, bmu;  // 2r x d, 1 x d
  Matrix wlv, blv;  // 2r x d, 1 x d

  std::size_t input_dim() const { return we.rows(); }
  std::size_t embed_dim() const { return we.cols(); }
  std::size_t latent_dim() const { return wmu.cols(); }

  static EncoderParams random(std::size_t p, std::size_t r, std::size_t d, double scale, Rng& rng);
  /// mu = x, log sigma^2 = log_var; requires p == d.
  static EncoderParams identity(std::size_t d, double log_var);
  EncoderParams zeros_like() const;
  std::vector<Matrix*> blocks();
  std::vector<const Matrix*> blocks() const;
  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

/// Decoder mean: x_hat = sigma([z | e] W1 + b1) W2 + b2, unit observation variance.
struct DecoderParams {
  Matrix w1, b1;  // 2d x n, 1 x n
  Matrix w2, b2;  // n x p, 1 x p

  std::size_t latent_dim() const { return w1.rows() / 2; }
  std::size_t output_dim() const { return w2.cols(); }

  static DecoderParams random(std::size_t d, std::size_t hidden, std::size_t p, double scale,
                              Rng& rng);
  DecoderParams zeros_like() const;
  std::vector<Matrix*> blocks();
  std::vector<const Matrix*> blocks() const;
  friend bool operator==(const DecoderParams&, const DecoderParams&) = default;
};

struct Model {
  EncoderParams enc;
  DecoderParams dec;
  StructuralModel h;

  Model zeros_like() const;
  std::vector<Matrix*> blocks();
  std::vector<const Matrix*> blocks() const;
  friend bool operator==(const Model&, const Model&) = default;
};

struct TrainConfig {
  double lambda1 = 1.0;
  double lambda2 = 1e-4;
  double learning_rate = 1e-3;
  std::size_t iterations = 500;
  std::size_t mc = 32;
  std::size_t task_size = 32;
  std::size_t batch_tasks = 4;
  std::size_t components = 2;
  std::size_t latent_dim = 3;
  std::size_t embed_dim = 16;
  std::size_t decoder_hidden = 16;
  SemKind sem = SemKind::kNonlinear;
  std::size_t sem_hidden = 8;
  double init_scale = 0.1;
  double gamma2 = 1.0;
  std::size_t em_steps = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Posterior {
  Matrix mu;      // M x d
  Matrix sigma2;  // M x d
};

Posterior encode_task(const EncoderParams& enc, const Matrix& x);

/// Decoder mean for each row of [z | e].
Matrix decode(const DecoderParams& dec, const Matrix& z, const Matrix& e);

/// Per-dimension KL(N(h(z), I) || N(z, 2 I)) given eps = z - h(z).
double e_divergence(double eps);

/// Reparameterized draws: z = mu + sigma * xi (rows grouped by draw: sample s of
/// point i is row s * M + i) and e = h(z) + xi'.
struct LatentDraws {
  Matrix xi;   // (mc * M) x d
  Matrix xie;  // (mc * M) x d
};

LatentDraws draw_noise(std::size_t m, std::size_t d, std::size_t mc, Rng& rng);
Matrix sample_codes(const Posterior& post, const LatentDraws& draws);

/// Mean per-point Monte Carlo ELBO of one task under a fixed prior.
double elbo_estimate(const Model& model, const Matrix& x, const CmogPrior& prior, Rng& rng,
                     std::size_t mc);

struct LossResult {
  double loss = 0.0;
  double elbo = 0.0;      // batch mean of per-point ELBO
  double dag = 0.0;       // notears penalty of adjacency(h)
  double l1 = 0.0;
};

/// -mean ELBO + lambda1 R_D(A) + lambda2 |A|_1 over a batch, priors held fixed.
/// Noise for task t comes from Rng(noise_seed).derive(t). Gradients are added to `grad`.
LossResult total_loss(const Model& model, const std::vector<Matrix>& tasks,
                      const std::vector<CmogPrior>& priors, const TrainConfig& cfg,
                      std::uint64_t noise_seed, Model* grad);

/// Fits one unsupervised causal-EM prior per task on its pooled latent draws.
std::vector<CmogPrior> fit_task_priors(const Model& model, const std::vector<Matrix>& tasks,
                                       const TrainConfig& cfg, std::uint64_t noise_seed);

Model init_model(std::size_t p, const TrainConfig& cfg);

struct TrainResult {
  Model model;
  Vector loss_history;
};

TrainResult train(const Matrix& x, const TrainConfig& cfg);

}  // namespace cmvae
