// cmvae: data generation, training, structure fitting, evaluation, intervention,
// benchmarking and SHD from the command line.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "cmvae/errors.hpp"
#include "cmvae/eval.hpp"
#include "cmvae/intervention.hpp"
#include "cmvae/io.hpp"
#include "cmvae/structure.hpp"
#include "cmvae/synth.hpp"
#include "cmvae/vae.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using cmvae::io::Json;

namespace cmvae::cli {
namespace {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kBadArgument = 3,
  kBadDimension = 4,
  kBadFormat = 5,
  kCyclic = 6,
  kNumerical = 7,
  kDiverged = 8,
};

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kArgument: return kBadArgument;
    case ErrorKind::kDimension: return kBadDimension;
    case ErrorKind::kFormat: return kBadFormat;
    case ErrorKind::kCycle: return kCyclic;
    case ErrorKind::kNumerical: return kNumerical;
    case ErrorKind::kDivergence: return kDiverged;
  }
  return kInternal;
}

void report_error(const std::string& kind, const std::string& message, int code) {
  Json j;
  j["error"] = kind;
  j["message"] = message;
  j["exit_code"] = code;
  std::cerr << j.dump() << '\n';
}

std::size_t worker_count(const RunConfig& c) {
  if (c.workers > 0) return c.workers;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ArgumentError(message);
}

void require_output(const RunConfig& c) { require(!c.output.empty(), "--output is required"); }

fs::path manifest_path(const RunConfig& c) {
  if (!c.manifest.empty()) return c.manifest;
  const fs::path out = c.output.empty() ? fs::path("out") : fs::path(c.output);
  return out.has_parent_path() ? out.parent_path() / "run-manifest.json" : "run-manifest.json";
}

void write_manifest(const std::string& sub, const Binding& b, const RunConfig& c,
                    const Json& artifacts) {
  Json j;
  j["format"] = "cmvae-run-manifest";
  j["subcommand"] = sub;
  j["seed"] = c.seed;
  j["config"] = b.resolved();
  j["artifacts"] = artifacts;
  io::write_json(manifest_path(c), j);
}

SemKind sem_kind(const RunConfig& c) { return sem_kind_from_string(c.sem); }

GroundTruth build_truth(const RunConfig& c) {
  GroundTruth truth;
  if (!c.truth.empty()) {
    const Json j = io::read_json(c.truth);
    return io::truth_from_json(j.contains("truth") ? j.at("truth") : j);
  }
  Rng rng = Rng(c.seed).derive(0x7275);
  if (c.toy == "flying-wing-sky") {
    truth = toy_flying_wing_sky(sem_kind(c));
  } else if (c.toy == "random") {
    require(sem_kind(c) == SemKind::kLinear, "--toy random supports --sem linear only");
    require(c.dim >= 2, "--dim must be at least 2");
    truth.h = random_linear_dag(c.dim, c.edge_prob, c.weight_min, c.weight_max, rng);
    truth.dag = dag_extract(adjacency(truth.h), 1e-12);
    truth.class_dims = {truth.dag.order().front()};
    truth.confounder = truth.dag.order().back();
  } else {
    throw ArgumentError("unknown --toy '" + c.toy + "' (expected flying-wing-sky or random)");
  }
  truth.class_shift = c.class_shift;
  truth.confounder_shift = c.confounder_shift;
  truth.confounder_noise = c.confounder_noise;
  if (c.project > 0) truth.projection = random_projection(truth.dim(), c.project, rng);
  truth.validate();
  return truth;
}

Json truth_sidecar(const GroundTruth& t) {
  Json j;
  j["truth"] = io::to_json(t);
  Json edges = Json::array();
  for (const auto& [a, b] : t.dag.edges()) edges.push_back(Json::array({a, b}));
  j["edges"] = std::move(edges);
  return j;
}

std::string summary_number(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------- gen

int run_gen(const RunConfig& c, const Binding& b) {
  require_output(c);
  const GroundTruth truth = build_truth(c);
  const fs::path truth_path = fs::path(c.output).string() + ".truth.json";
  Json artifacts;
  if (c.episodes > 0) {
    const BiasSpec bias{truth.confounder, c.bias};
    const auto eps = gen_biased_tasks(truth, bias, c.way, c.shot, c.query, c.episodes, c.seed);
    io::write_episodes(c.output, eps);
    std::cout << "gen: wrote " << eps.size() << " episodes (" << c.way << "-way " << c.shot
              << "-shot, bias " << c.bias << ") to " << c.output << '\n';
  } else {
    require(c.samples > 0, "--samples must be positive");
    Rng rng(c.seed);
    LabeledData data;
    if (c.classes > 0) {
      require(c.samples % c.classes == 0, "--samples must be divisible by --classes");
      data = gen_labeled_dataset(truth, c.classes, c.samples / c.classes, rng);
    } else {
      data.z = gen_sem_dataset(truth, c.samples, rng);
      data.x = observe(truth, data.z);
    }
    io::write_dataset(c.output, data);
    std::cout << "gen: wrote " << data.x.rows() << " samples (d=" << truth.dim()
              << ", p=" << truth.obs_dim() << ") to " << c.output << '\n';
  }
  io::write_json(truth_path, truth_sidecar(truth));
  artifacts["output"] = c.output;
  artifacts["truth"] = truth_path.string();
  write_manifest("gen", b, c, artifacts);
  return kOk;
}

// ---------------------------------------------------------------- train

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.lambda1 = c.lambda1;
  t.lambda2 = c.lambda2;
  t.learning_rate = c.learning_rate;
  t.iterations = c.iterations;
  t.mc = c.mc;
  t.task_size = c.task_size;
  t.batch_tasks = c.batch_tasks;
  t.components = c.components;
  t.latent_dim = c.latent_dim;
  t.embed_dim = c.embed_dim;
  t.decoder_hidden = c.decoder_hidden;
  t.sem = sem_kind(c);
  t.sem_hidden = c.sem_hidden;
  t.init_scale = c.init_scale;
  t.gamma2 = c.gamma2;
  t.em_steps = c.em_steps;
  t.seed = c.seed;
  t.validate();
  return t;
}

int run_train(const RunConfig& c, const Binding& b) {
  require_output(c);
  require(!c.data.empty(), "--data is required");
  const LabeledData data = io::read_dataset(c.data);
  const TrainConfig cfg = train_config(c);
  TrainResult res = train(data.x, cfg);
  io::Checkpoint ck{std::move(res.model), cfg, std::move(res.loss_history)};
  io::write_json(c.output, io::to_json(ck));
  write_manifest("train", b, c, Json{{"output", c.output}});
  std::cout << "train: " << cfg.iterations << " iterations, loss "
            << summary_number(ck.loss_history.front()) << " -> "
            << summary_number(ck.loss_history.back()) << ", checkpoint " << c.output << '\n';
  return kOk;
}

// ---------------------------------------------------------------- fit-dag

Model load_model(const std::string& path) {
  return io::checkpoint_from_json(io::read_json(path)).model;
}

DagStructure load_dag(const std::string& path, double threshold) {
  const Json j = io::read_json(path);
  if (j.contains("dag")) return io::dag_from_json(j.at("dag"));
  if (j.contains("truth")) return io::dag_from_json(j.at("truth").at("dag"));
  if (j.contains("kind")) return dag_extract(adjacency(io::sem_from_json(j)), threshold);
  if (j.contains("edges") && j.contains("nodes")) return io::dag_from_json(j);
  throw FormatError(path + ": expected a DAG, a ground-truth sidecar or a structural model");
}

int run_fit_dag(const RunConfig& c, const Binding& b) {
  require_output(c);
  require(!c.data.empty(), "--data is required");
  require(c.threshold > 0.0, "--threshold must be positive");
  const LabeledData data = io::read_dataset(c.data);
  Matrix codes = data.x;
  if (!c.model.empty()) codes = encode_task(load_model(c.model).enc, data.x).mu;

  StructureFitConfig cfg;
  cfg.kind = sem_kind(c);
  cfg.hidden = c.dag_hidden;
  cfg.lambda1 = c.dag_lambda1;
  cfg.lambda2 = c.dag_lambda2;
  cfg.learning_rate = c.dag_learning_rate;
  cfg.iterations = c.dag_iterations;
  cfg.max_rounds = c.dag_rounds;
  cfg.seed = c.seed;
  const StructureFit fit = fit_structure(codes, cfg);
  const DagStructure dag = dag_extract(fit.adjacency, c.threshold);

  Json out;
  out["sem"] = io::to_json(fit.model);
  out["adjacency"] = io::to_json(fit.adjacency);
  out["dag"] = io::to_json(dag);
  out["threshold"] = c.threshold;
  out["penalty"] = fit.penalty;
  out["final_lambda1"] = fit.final_lambda1;
  std::string extra;
  if (!c.truth.empty()) {
    const ShdResult r = shd(dag, load_dag(c.truth, c.threshold));
    out["shd"] = io::to_json(r);
    extra = ", SHD " + std::to_string(r.distance);
  }
  io::write_json(c.output, out);
  Json artifacts{{"output", c.output}};
  if (!c.bundle.empty()) {
    require(c.model.empty(), "--bundle builds an identity-encoder model; drop --model");
    const std::size_t d = codes.cols();
    TrainConfig tc;
    tc.latent_dim = d;
    tc.sem = cfg.kind;
    tc.gamma2 = c.gamma2;
    tc.seed = c.seed;
    Rng rng(c.seed);
    Model m{EncoderParams::identity(d, 0.0),
            DecoderParams::random(d, tc.decoder_hidden, d, tc.init_scale, rng), fit.model};
    io::write_json(c.bundle, io::to_json(io::Checkpoint{std::move(m), tc, fit.loss_history}));
    artifacts["bundle"] = c.bundle;
  }
  write_manifest("fit-dag", b, c, artifacts);
  std::cout << "fit-dag: " << dag.edges().size() << " edges at threshold " << c.threshold
            << ", penalty " << summary_number(fit.penalty) << extra << '\n';
  return kOk;
}

// ---------------------------------------------------------------- eval

std::vector<Episode> eval_episodes(const RunConfig& c) {
  if (!c.episodes_file.empty()) return io::read_episodes(c.episodes_file);
  const std::size_t n = c.episodes == 0 ? 1000 : c.episodes;
  if (!c.data.empty()) {
    const LabeledData data = io::read_dataset(c.data);
    for (std::size_t y : data.y) require(y != io::kNoLabel, "--data rows must all be labeled");
    std::vector<Episode> out;
    const Rng base(c.seed);
    for (std::size_t t = 0; t < n; ++t) {
      Rng rng = base.derive(t);
      out.push_back(sample_episode(data, c.way, c.shot, c.query, rng));
    }
    return out;
  }
  const GroundTruth truth = build_truth(c);
  return gen_biased_tasks(truth, BiasSpec{truth.confounder, c.bias}, c.way, c.shot, c.query, n,
                          c.seed);
}

int run_eval(const RunConfig& c, const Binding& b) {
  require_output(c);
  require(!c.model.empty(), "--model is required");
  const Model model = load_model(c.model);
  const std::vector<Episode> eps = eval_episodes(c);
  EvalOptions opt;
  opt.mode = eval_mode_from_string(c.mode);
  opt.em_steps = c.em_steps;
  opt.gamma2 = c.gamma2;
  opt.form = mean_form_from_string(c.mean_form);
  opt.scale = scale_mode_from_string(c.scale);
  opt.n_adjust = c.n_adjust;
  opt.seed = c.seed;
  opt.workers = worker_count(c);
  opt.use_latents = c.use_latents;
  const AccuracyReport rep = evaluate_episodes(model, eps, opt);
  Json out = io::to_json(rep);
  out["mode"] = c.mode;
  out["way"] = c.way;
  out["shot"] = c.shot;
  io::write_json(c.output, out);
  Json artifacts{{"output", c.output}};
  if (!c.csv.empty()) {
    io::write_accuracy_csv(c.csv, rep);
    artifacts["csv"] = c.csv;
  }
  write_manifest("eval", b, c, artifacts);
  std::cout << "eval: " << c.mode << " accuracy " << summary_number(rep.mean) << " +- "
            << summary_number(rep.ci95) << " over " << rep.n_tasks << " episodes\n";
  return kOk;
}

// ---------------------------------------------------------------- intervene

InterventionSpec parse_sets(const std::vector<std::string>& sets) {
  InterventionSpec spec;
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    require(eq != std::string::npos, "--set expects idx=value, got '" + s + "'");
    try {
      std::size_t used = 0;
      const std::string idx = s.substr(0, eq);
      const unsigned long i = std::stoul(idx, &used);
      require(used == idx.size(), "bad index in --set '" + s + "'");
      const std::string val = s.substr(eq + 1);
      const double v = std::stod(val, &used);
      require(used == val.size(), "bad value in --set '" + s + "'");
      spec.targets.push_back(i);
      spec.values.push_back(v);
    } catch (const std::logic_error&) {
      throw ArgumentError("cannot parse --set '" + s + "'");
    }
  }
  return spec;
}

Vector parse_code(const std::string& s) {
  Vector v;
  std::stringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      require(used == tok.size(), "bad number '" + tok + "' in --code");
    } catch (const std::logic_error&) {
      throw ArgumentError("bad number '" + tok + "' in --code");
    }
  }
  return v;
}

int run_intervene(const RunConfig& c, const Binding& b) {
  require_output(c);
  require(!c.model.empty() || !c.sem_file.empty(), "--model or --sem-file is required");
  std::unique_ptr<Model> model;
  StructuralModel h;
  if (!c.model.empty()) {
    model = std::make_unique<Model>(load_model(c.model));
    h = model->h;
  } else {
    const Json j = io::read_json(c.sem_file);
    h = io::sem_from_json(j.contains("sem") ? j.at("sem") : j);
  }
  Vector z;
  if (!c.code.empty()) {
    z = parse_code(c.code);
  } else {
    require(!c.data.empty(), "--code or --data is required");
    const LabeledData data = io::read_dataset(c.data);
    require(c.row < data.x.rows(), "--row out of range");
    Matrix x(1, data.x.cols());
    std::copy(data.x.row(c.row).begin(), data.x.row(c.row).end(), x.row(0).begin());
    const Vector row(x.row(0).begin(), x.row(0).end());
    z = model ? Vector(encode_task(model->enc, x).mu.row(0).begin(),
                       encode_task(model->enc, x).mu.row(0).end())
              : row;
  }
  if (z.size() != h.dim()) {
    throw DimensionError("code has " + std::to_string(z.size()) + " entries, model expects " +
                         std::to_string(h.dim()));
  }
  const InterventionSpec spec = parse_sets(c.set);
  const DagStructure order = dag_extract(adjacency(h), c.threshold);
  const Vector cf = do_intervene(z, spec, h, order);
  Vector delta(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) delta[j] = cf[j] - z[j];

  Json out;
  out["factual"] = io::to_json(z);
  out["counterfactual"] = io::to_json(cf);
  out["delta"] = io::to_json(delta);
  out["targets"] = spec.targets;
  out["values"] = io::to_json(spec.values);
  out["order"] = order.order();
  out["dag"] = io::to_json(order);
  if (model) {
    const Matrix zf = Matrix::row_vector(z);
    const Matrix zc = Matrix::row_vector(cf);
    out["decoded_factual"] = io::to_json(decode(model->dec, zf, h.apply_rows(zf)).row(0));
    out["decoded_counterfactual"] = io::to_json(decode(model->dec, zc, h.apply_rows(zc)).row(0));
  }
  io::write_json(c.output, out);
  write_manifest("intervene", b, c, Json{{"output", c.output}});
  double norm = 0.0;
  for (double d : delta) norm += d * d;
  std::cout << "intervene: " << spec.targets.size() << " targets, |delta z| "
            << summary_number(std::sqrt(norm)) << '\n';
  return kOk;
}

// ---------------------------------------------------------------- bench

int run_bench(const RunConfig& c, const Binding& b) {
  require_output(c);
  const std::size_t n = c.episodes == 0 ? 1000 : c.episodes;
  require(c.dim >= 2, "--dim must be at least 2");
  Rng rng = Rng(c.seed).derive(0x7275);
  GroundTruth truth;
  truth.h = random_linear_dag(c.dim, c.edge_prob, c.weight_min, c.weight_max, rng);
  truth.dag = dag_extract(adjacency(truth.h), 1e-12);
  truth.class_dims = {truth.dag.order().front()};
  truth.confounder = truth.dag.order().back();
  truth.class_shift = c.class_shift;
  truth.confounder_shift = c.confounder_shift;
  truth.confounder_noise = c.confounder_noise;
  const auto eps = gen_biased_tasks(truth, BiasSpec{truth.confounder, c.bias}, c.way, c.shot,
                                    c.query, n, c.seed);
  BenchOptions opt;
  opt.em_steps = c.em_steps;
  opt.gamma2 = c.gamma2;
  opt.repeats = c.repeats;
  const BenchReport rep = bench_em(eps, truth.h, opt);
  Json out = io::to_json(rep);
  out["way"] = c.way;
  out["shot"] = c.shot;
  out["query"] = c.query;
  out["dim"] = c.dim;
  out["workers"] = 1;
  io::write_json(c.output, out);
  write_manifest("bench", b, c, Json{{"output", c.output}});
  std::cout << "bench:";
  for (const BenchVariant& v : rep.variants) {
    std::cout << ' ' << v.name << ' ' << summary_number(v.seconds) << "s ("
              << (v.overhead_pct >= 0 ? "+" : "") << summary_number(v.overhead_pct) << "%)";
  }
  std::cout << '\n';
  return kOk;
}

// ---------------------------------------------------------------- shd

int run_shd(const RunConfig& c, const Binding& b) {
  require(!c.learned.empty() && !c.truth.empty(), "--learned and --truth are required");
  const ShdResult r = shd(load_dag(c.learned, c.threshold), load_dag(c.truth, c.threshold));
  const Json out = io::to_json(r);
  if (!c.output.empty()) {
    io::write_json(c.output, out);
    write_manifest("shd", b, c, Json{{"output", c.output}});
  }
  std::cout << "shd: " << r.distance << " (missing " << r.missing << ", extra " << r.extra
            << ", reversed " << r.reversed << ")\n";
  return kOk;
}

// ---------------------------------------------------------------- wiring

struct Command {
  std::string name;
  int (*run)(const RunConfig&, const Binding&);
  Binding binding;
};

void bind_truth(Binding& b, RunConfig& c) {
  b.add("toy", &c.toy, "ground truth: flying-wing-sky or random")
      .add("sem", &c.sem, "SEM kind: linear or nonlinear")
      .add("dim", &c.dim, "latent dimension for --toy random")
      .add("edge_prob", &c.edge_prob, "edge probability for --toy random")
      .add("weight_min", &c.weight_min, "minimum |edge weight| for --toy random")
      .add("weight_max", &c.weight_max, "maximum |edge weight| for --toy random")
      .add("project", &c.project, "observation dimension of a random projection (0 = none)")
      .add("class_shift", &c.class_shift, "class offset on the class dimensions")
      .add("confounder_shift", &c.confounder_shift, "confounder magnitude in episodes")
      .add("confounder_noise", &c.confounder_noise, "confounder noise scale in episodes")
      .add("truth", &c.truth, "ground-truth sidecar JSON (overrides --toy)");
}

void bind_episodes(Binding& b, RunConfig& c) {
  b.add("episodes", &c.episodes, "number of episodes")
      .add("way", &c.way, "classes per episode")
      .add("shot", &c.shot, "support samples per class")
      .add("query", &c.query, "query samples per episode")
      .add("bias", &c.bias, "support confounder bias level in [0, 1]");
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  CLI::App app{"cmvae: causal latent-space few-shot toolkit"};
  app.require_subcommand(1);
  std::vector<Command> commands;
  commands.reserve(7);

  auto make = [&](const std::string& name, const std::string& help,
                  int (*run)(const RunConfig&, const Binding&)) -> Binding& {
    commands.push_back({name, run, Binding(app.add_subcommand(name, help), cfg)});
    return commands.back().binding.common();
  };

  {
    Binding& b = make("gen", "generate a synthetic dataset or biased episodes", run_gen);
    bind_truth(b, cfg);
    bind_episodes(b, cfg);
    b.add("samples", &cfg.samples, "number of samples")
        .add("classes", &cfg.classes, "labeled classes (0 = unlabeled SEM samples)");
  }
  {
    Binding& b = make("train", "train encoder, decoder and SEM", run_train);
    b.add("data", &cfg.data, "JSONL dataset")
        .add("sem", &cfg.sem, "SEM kind: linear or nonlinear")
        .add("lambda1", &cfg.lambda1, "acyclicity penalty weight")
        .add("lambda2", &cfg.lambda2, "l1 penalty weight")
        .add("learning_rate", &cfg.learning_rate, "Adam learning rate")
        .add("iterations", &cfg.iterations, "outer gradient steps")
        .add("mc", &cfg.mc, "Monte Carlo samples per point")
        .add("task_size", &cfg.task_size, "points per training task")
        .add("batch_tasks", &cfg.batch_tasks, "tasks per step")
        .add("components", &cfg.components, "mixture components per task")
        .add("latent_dim", &cfg.latent_dim, "latent dimension")
        .add("embed_dim", &cfg.embed_dim, "encoder embedding width")
        .add("decoder_hidden", &cfg.decoder_hidden, "decoder hidden width")
        .add("sem_hidden", &cfg.sem_hidden, "hidden units per node of a nonlinear SEM")
        .add("init_scale", &cfg.init_scale, "initial weight scale")
        .add("gamma2", &cfg.gamma2, "causal regularizer variance")
        .add("em_steps", &cfg.em_steps, "causal-EM steps per task");
  }
  {
    Binding& b = make("fit-dag", "learn a DAG from codes", run_fit_dag);
    b.add("data", &cfg.data, "JSONL dataset")
        .add("model", &cfg.model, "checkpoint whose encoder maps x to codes")
        .add("sem", &cfg.sem, "SEM kind: linear or nonlinear")
        .add("threshold", &cfg.threshold, "edge threshold on the weighted adjacency")
        .add("dag_lambda1", &cfg.dag_lambda1, "initial acyclicity penalty weight")
        .add("dag_lambda2", &cfg.dag_lambda2, "l1 penalty weight")
        .add("dag_learning_rate", &cfg.dag_learning_rate, "Adam learning rate")
        .add("dag_iterations", &cfg.dag_iterations, "Adam steps per penalty round")
        .add("dag_rounds", &cfg.dag_rounds, "maximum penalty rounds")
        .add("dag_hidden", &cfg.dag_hidden, "hidden units per node (nonlinear)")
        .add("gamma2", &cfg.gamma2, "gamma2 recorded in --bundle")
        .add("truth", &cfg.truth, "ground truth for SHD")
        .add("bundle", &cfg.bundle, "also write an identity-encoder model checkpoint");
  }
  {
    Binding& b = make("eval", "few-shot accuracy with a 95% confidence interval", run_eval);
    bind_truth(b, cfg);
    bind_episodes(b, cfg);
    b.add("model", &cfg.model, "model checkpoint")
        .add("episodes_file", &cfg.episodes_file, "episodes JSONL (overrides generation)")
        .add("data", &cfg.data, "labeled dataset to sample episodes from")
        .add("mode", &cfg.mode, "causal, vanilla or no-adjust")
        .add("gamma2", &cfg.gamma2, "causal regularizer variance")
        .add("em_steps", &cfg.em_steps, "causal-EM steps")
        .add("n_adjust", &cfg.n_adjust, "adjusting draws per query (causal mode)")
        .add("mean_form", &cfg.mean_form, "reduced, full or exact")
        .add("scale", &cfg.scale, "fixed or data")
        .add("use_latents", &cfg.use_latents, "fit on true latent codes")
        .add("csv", &cfg.csv, "per-episode CSV path");
  }
  {
    Binding& b = make("intervene", "counterfactual codes under do(z_i = v)", run_intervene);
    b.add("model", &cfg.model, "model checkpoint")
        .add("sem_file", &cfg.sem_file, "structural model JSON (instead of --model)")
        .add("code", &cfg.code, "comma-separated factual code")
        .add("data", &cfg.data, "dataset holding the factual observation")
        .add("row", &cfg.row, "row of --data")
        .add("set", &cfg.set, "intervention idx=value (repeatable)")
        .add("threshold", &cfg.threshold, "edge threshold for the propagation order");
  }
  {
    Binding& b = make("bench", "time vanilla, inverse and causal EM", run_bench);
    bind_episodes(b, cfg);
    b.add("dim", &cfg.dim, "latent dimension")
        .add("edge_prob", &cfg.edge_prob, "edge probability of the random DAG")
        .add("weight_min", &cfg.weight_min, "minimum |edge weight|")
        .add("weight_max", &cfg.weight_max, "maximum |edge weight|")
        .add("class_shift", &cfg.class_shift, "class offset")
        .add("confounder_shift", &cfg.confounder_shift, "confounder magnitude")
        .add("confounder_noise", &cfg.confounder_noise, "confounder noise scale")
        .add("gamma2", &cfg.gamma2, "causal regularizer variance")
        .add("em_steps", &cfg.em_steps, "EM steps")
        .add("repeats", &cfg.repeats, "timing repeats (best is reported)");
  }
  {
    Binding& b = make("shd", "structural Hamming distance between two graphs", run_shd);
    b.add("learned", &cfg.learned, "learned DAG, fit-dag output or SEM JSON")
        .add("truth", &cfg.truth, "reference DAG or ground-truth sidecar")
        .add("threshold", &cfg.threshold, "edge threshold when a SEM is given");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what(), kUsage);
    return kUsage;
  }

  for (Command& cmd : commands) {
    if (!cmd.binding.app()->parsed()) continue;
    if (cmd.name == "bench") cfg.workers = 1;
    try {
      cmd.binding.apply_config();
      if (cmd.name == "bench") cfg.workers = 1;
      return cmd.run(cfg, cmd.binding);
    } catch (const Error& e) {
      const int code = exit_code_for(e.kind());
      report_error(to_string(e.kind()), e.what(), code);
      return code;
    } catch (const std::exception& e) {
      report_error("internal", e.what(), kInternal);
      return kInternal;
    }
  }
  return kUsage;
}

}  // namespace cmvae::cli

int main(int argc, char** argv) { return cmvae::cli::main(argc, argv); }
