#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmvae/cmog.hpp"
#include "cmvae/eval.hpp"
#include "cmvae/numerics.hpp"
#include "cmvae/sem.hpp"
#include "cmvae/synth.hpp"
#include "cmvae/vae.hpp"

namespace cmvae::io {

using Json = nlohmann::ordered_json;

Json to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);
Json to_json(std::span<const double> v);
Vector vector_from_json(const Json& j);

/// {"kind": "linear", "dim": d, "A": [[...]]} or
/// {"kind": "nonlinear", "dim": d, "layers": [[W_i^1, ..., W_i^l], ...]}.
Json to_json(const StructuralModel& h);
StructuralModel sem_from_json(const Json& j);

Json to_json(const DagStructure& g);
DagStructure dag_from_json(const Json& j);

Json to_json(const CmogPrior& p);
CmogPrior prior_from_json(const Json& j);

Json to_json(const EncoderParams& e);
EncoderParams encoder_from_json(const Json& j);
Json to_json(const DecoderParams& d);
DecoderParams decoder_from_json(const Json& j);
Json to_json(const Model& m);
Model model_from_json(const Json& j);

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

struct Checkpoint {
  Model model;
  TrainConfig config;
  Vector loss_history;
};

Json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const Json& j);

Json to_json(const ShdResult& r);
Json to_json(const AccuracyReport& r, bool per_episode = false);
Json to_json(const BenchReport& r);

Json to_json(const GroundTruth& t);
GroundTruth truth_from_json(const Json& j);

/// Throws FormatError with the path when the file is missing or malformed.
Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

/// One {"x": [...], "y": int|null, "z_true": [...]} object per line.
/// Rows without a label get kNoLabel.
inline constexpr std::size_t kNoLabel = static_cast<std::size_t>(-1);
void write_dataset(const std::filesystem::path& path, const LabeledData& data);
LabeledData read_dataset(const std::filesystem::path& path);

/// One episode object per line.
Json to_json(const Episode& e);
Episode episode_from_json(const Json& j);
void write_episodes(const std::filesystem::path& path, const std::vector<Episode>& episodes);
std::vector<Episode> read_episodes(const std::filesystem::path& path);

/// One row per episode: index,accuracy.
void write_accuracy_csv(const std::filesystem::path& path, const AccuracyReport& r);

}  // namespace cmvae::io
