#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>

#include "cmvae/io.hpp"

namespace cmvae::cli {

/// Every tunable of every subcommand, with built-in defaults.
struct RunConfig {
  // common
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0 = available parallelism
  std::string output;
  std::string config;
  std::string manifest;

  // data generation
  std::string toy = "flying-wing-sky";
  std::string sem = "linear";
  std::size_t samples = 1000;
  std::size_t dim = 8;
  double edge_prob = 0.3;
  double weight_min = 0.5;
  double weight_max = 2.0;
  std::size_t classes = 0;
  std::size_t project = 0;
  double class_shift = 1.0;
  double confounder_shift = 2.0;
  double confounder_noise = 0.5;

  // episodes
  std::size_t episodes = 0;
  std::size_t way = 2;
  std::size_t shot = 4;
  std::size_t query = 15;
  double bias = 0.9;
  std::string episodes_file;
  std::string truth;
  std::string data;

  // training
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
  std::size_t sem_hidden = 8;
  double init_scale = 0.1;
  double gamma2 = 1.0;
  std::size_t em_steps = 10;

  // structure fitting
  double threshold = 0.3;
  double dag_lambda1 = 1.0;
  double dag_lambda2 = 1e-3;
  double dag_learning_rate = 3e-2;
  std::size_t dag_iterations = 1000;
  std::size_t dag_rounds = 3;
  std::size_t dag_hidden = 8;
  std::string bundle;
  std::string model;

  // evaluation
  std::string mode = "causal";
  std::size_t n_adjust = 32;
  std::string mean_form = "reduced";
  std::string scale = "fixed";
  bool use_latents = false;
  std::string csv;

  // intervention
  std::string code;
  std::size_t row = 0;
  std::vector<std::string> set;
  std::string sem_file;

  // shd
  std::string learned;

  // bench
  std::size_t repeats = 5;
};

using FieldRef =
    std::variant<double*, unsigned long*, unsigned long long*, std::string*, bool*,
                 std::vector<std::string>*>;

struct Field {
  std::string name;
  FieldRef ref;
  std::string help;
};

/// Binds a subset of RunConfig to one CLI11 subcommand and layers a JSON
/// config file under the flags that were given explicitly.
class Binding {
 public:
  Binding(CLI::App* app, RunConfig& cfg) : app_(app), cfg_(cfg) {}

  Binding& add(const std::string& name, FieldRef ref, const std::string& help);
  /// Fields shared by every subcommand (seed, workers, output, config, manifest).
  Binding& common();

  CLI::App* app() const { return app_; }

  /// Applies --config (a plain object or a run manifest) to fields not set on the
  /// command line. Throws FormatError on unknown keys or type mismatches.
  void apply_config() const;
  io::Json resolved() const;

 private:
  CLI::App* app_;
  RunConfig& cfg_;
  std::vector<Field> fields_;
  std::map<std::string, CLI::Option*> options_;
};

}  // namespace cmvae::cli
