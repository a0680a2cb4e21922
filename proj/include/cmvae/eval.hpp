#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cmvae/causal_em.hpp"
#include "cmvae/synth.hpp"
#include "cmvae/vae.hpp"

namespace cmvae {

struct ShdResult {
  std::size_t distance = 0;
  std::size_t missing = 0;
  std::size_t extra = 0;
  std::size_t reversed = 0;
};

/// Edit distance from `learned` to `truth`; a reversed edge counts once.
ShdResult shd(const DagStructure& learned, const DagStructure& truth);

/// causal: causal-EM plus adjusted prediction. vanilla: Gaussian-mixture EM,
/// no regularizer, no adjustment. no-adjust: causal-EM without adjustment.
enum class EvalMode { kCausal, kVanilla, kNoAdjust };

const char* to_string(EvalMode m);
EvalMode eval_mode_from_string(const std::string& s);

struct EvalOptions {
  EvalMode mode = EvalMode::kCausal;
  std::size_t em_steps = 10;
  double gamma2 = 1.0;
  MeanForm form = MeanForm::kReduced;
  ScaleMode scale = ScaleMode::kFixed;
  std::size_t n_adjust = 32;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  /// Fit on the true latent codes and skip the encoder.
  bool use_latents = false;
};

struct AccuracyReport {
  std::size_t n_tasks = 0;
  double mean = 0.0;  // percent
  double ci95 = 0.0;  // half-width, percent
  Vector per_episode;
};

/// Accuracy of one episode under the options; codes come from the encoder
/// applied to support and query jointly (or from the true latents).
double episode_accuracy(const Model& model, const Episode& ep, const EvalOptions& opt,
                        std::uint64_t episode_seed);

AccuracyReport evaluate_episodes(const Model& model, const std::vector<Episode>& episodes,
                                 const EvalOptions& opt);

/// Mean and normal-approximation 95% half-width of per-episode accuracies.
AccuracyReport summarize(Vector per_episode);

struct BenchVariant {
  std::string name;
  double seconds = 0.0;
  double overhead_pct = 0.0;  // relative to vanilla
};

struct BenchReport {
  std::vector<BenchVariant> variants;
  std::size_t episodes = 0;
  std::uint64_t stream_hash = 0;
};

struct BenchOptions {
  std::size_t em_steps = 10;
  double gamma2 = 1.0;
  std::size_t repeats = 5;  // best-of timing per chunk of episodes and variant
};

/// FNV-1a over the bit patterns of every episode's codes and labels.
std::uint64_t hash_episodes(const std::vector<Episode>& episodes);

/// Times fit_semisupervised + predict_query (no adjustment) over the latent codes
/// of every episode for vanilla, inverse and causal EM on one thread.
BenchReport bench_em(const std::vector<Episode>& episodes, const StructuralModel& h,
                     const BenchOptions& opt);

}  // namespace cmvae
