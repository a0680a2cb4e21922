#include "cmvae/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "cmvae/errors.hpp"

namespace cmvae::io {

namespace {

template <class F>
auto guarded(const char* what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

double finite_number(const Json& j) {
  if (!j.is_number()) throw FormatError("expected a number, got " + j.dump());
  return j.get<double>();
}

void require_finite(std::span<const double> v, const char* what) {
  if (!all_finite(v)) throw NumericalError(std::string(what) + " contains non-finite values");
}

}  // namespace

Json to_json(std::span<const double> v) {
  require_finite(v, "vector");
  Json j = Json::array();
  for (double x : v) j.push_back(x);
  return j;
}

Vector vector_from_json(const Json& j) {
  if (!j.is_array()) throw FormatError("expected an array of numbers");
  Vector v;
  v.reserve(j.size());
  for (const Json& x : j) v.push_back(finite_number(x));
  return v;
}

Json to_json(const Matrix& m) {
  Json j = Json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) j.push_back(to_json(m.row(r)));
  return j;
}

Matrix matrix_from_json(const Json& j) {
  if (!j.is_array()) throw FormatError("expected a matrix (array of rows)");
  if (j.empty()) return Matrix();
  const std::size_t cols = j.front().size();
  Matrix m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Vector row = vector_from_json(j[r]);
    if (row.size() != cols) throw FormatError("ragged matrix rows");
    std::copy(row.begin(), row.end(), m.row(r).begin());
  }
  return m;
}

Json to_json(const StructuralModel& h) {
  Json j;
  j["kind"] = to_string(h.kind());
  j["dim"] = h.dim();
  if (h.kind() == SemKind::kLinear) {
    j["A"] = to_json(h.weights());
  } else {
    Json layers = Json::array();
    for (std::size_t i = 0; i < h.dim(); ++i) {
      Json stack = Json::array();
      for (const Matrix& w : h.layers(i)) stack.push_back(to_json(w));
      layers.push_back(std::move(stack));
    }
    j["layers"] = std::move(layers);
  }
  return j;
}

StructuralModel sem_from_json(const Json& j) {
  return guarded("structural model", [&] {
    const SemKind kind = sem_kind_from_string(j.at("kind").get<std::string>());
    const std::size_t dim = j.at("dim").get<std::size_t>();
    StructuralModel h;
    if (kind == SemKind::kLinear) {
      h = StructuralModel::linear(matrix_from_json(j.at("A")));
    } else {
      std::vector<std::vector<Matrix>> layers;
      for (const Json& stack : j.at("layers")) {
        std::vector<Matrix> ws;
        for (const Json& w : stack) ws.push_back(matrix_from_json(w));
        layers.push_back(std::move(ws));
      }
      h = StructuralModel::nonlinear(std::move(layers));
    }
    if (h.dim() != dim) throw FormatError("structural model: dim does not match weights");
    return h;
  });
}

Json to_json(const DagStructure& g) {
  Json j;
  j["nodes"] = g.nodes();
  Json edges = Json::array();
  for (const auto& [a, b] : g.edges()) edges.push_back(Json::array({a, b}));
  j["edges"] = std::move(edges);
  return j;
}

DagStructure dag_from_json(const Json& j) {
  return guarded("DAG", [&] {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (const Json& e : j.at("edges")) {
      edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
    }
    return DagStructure(j.at("nodes").get<std::size_t>(), std::move(edges));
  });
}

Json to_json(const CmogPrior& p) {
  Json j;
  j["pi"] = to_json(p.pi);
  j["mu"] = to_json(p.mu);
  j["sigma2"] = to_json(p.sigma2);
  j["gamma2"] = p.gamma2;
  if (!p.scale2.empty()) j["scale2"] = to_json(p.scale2);
  return j;
}

CmogPrior prior_from_json(const Json& j) {
  return guarded("CMoG prior", [&] {
    CmogPrior p;
    p.pi = vector_from_json(j.at("pi"));
    p.mu = matrix_from_json(j.at("mu"));
    p.sigma2 = matrix_from_json(j.at("sigma2"));
    p.gamma2 = finite_number(j.at("gamma2"));
    if (j.contains("scale2")) p.scale2 = vector_from_json(j.at("scale2"));
    p.validate();
    return p;
  });
}

Json to_json(const EncoderParams& e) {
  Json j;
  j["we"] = to_json(e.we);
  j["be"] = to_json(e.be);
  j["wmu"] = to_json(e.wmu);
  j["bmu"] = to_json(e.bmu);
  j["wlv"] = to_json(e.wlv);
  j["blv"] = to_json(e.blv);
  return j;
}

EncoderParams encoder_from_json(const Json& j) {
  return guarded("encoder", [&] {
    EncoderParams e;
    e.we = matrix_from_json(j.at("we"));
    e.be = matrix_from_json(j.at("be"));
    e.wmu = matrix_from_json(j.at("wmu"));
    e.bmu = matrix_from_json(j.at("bmu"));
    e.wlv = matrix_from_json(j.at("wlv"));
    e.blv = matrix_from_json(j.at("blv"));
    const std::size_t r = e.we.cols();
    const std::size_t d = e.wmu.cols();
    if (e.be.rows() != 1 || e.be.cols() != r || e.wmu.rows() != 2 * r || e.wlv.rows() != 2 * r ||
        e.wlv.cols() != d || e.bmu.cols() != d || e.blv.cols() != d) {
      throw FormatError("encoder: inconsistent block shapes");
    }
    return e;
  });
}

Json to_json(const DecoderParams& d) {
  Json j;
  j["w1"] = to_json(d.w1);
  j["b1"] = to_json(d.b1);
  j["w2"] = to_json(d.w2);
  j["b2"] = to_json(d.b2);
  return j;
}

DecoderParams decoder_from_json(const Json& j) {
  return guarded("decoder", [&] {
    DecoderParams d;
    d.w1 = matrix_from_json(j.at("w1"));
    d.b1 = matrix_from_json(j.at("b1"));
    d.w2 = matrix_from_json(j.at("w2"));
    d.b2 = matrix_from_json(j.at("b2"));
    if (d.w1.rows() % 2 != 0 || d.b1.cols() != d.w1.cols() || d.w2.rows() != d.w1.cols() ||
        d.b2.cols() != d.w2.cols()) {
      throw FormatError("decoder: inconsistent block shapes");
    }
    return d;
  });
}

Json to_json(const Model& m) {
  Json j;
  j["encoder"] = to_json(m.enc);
  j["decoder"] = to_json(m.dec);
  j["sem"] = to_json(m.h);
  return j;
}

Model model_from_json(const Json& j) {
  return guarded("model", [&] {
    Model m{encoder_from_json(j.at("encoder")), decoder_from_json(j.at("decoder")),
            sem_from_json(j.at("sem"))};
    const std::size_t d = m.h.dim();
    if (m.enc.latent_dim() != d || m.dec.latent_dim() != d) {
      throw FormatError("model: encoder, decoder and SEM disagree on the latent dimension");
    }
    if (m.dec.output_dim() != m.enc.input_dim()) {
      throw FormatError("model: decoder output does not match encoder input");
    }
    return m;
  });
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["lambda1"] = c.lambda1;
  j["lambda2"] = c.lambda2;
  j["learning_rate"] = c.learning_rate;
  j["iterations"] = c.iterations;
  j["mc"] = c.mc;
  j["task_size"] = c.task_size;
  j["batch_tasks"] = c.batch_tasks;
  j["components"] = c.components;
  j["latent_dim"] = c.latent_dim;
  j["embed_dim"] = c.embed_dim;
  j["decoder_hidden"] = c.decoder_hidden;
  j["sem"] = to_string(c.sem);
  j["sem_hidden"] = c.sem_hidden;
  j["init_scale"] = c.init_scale;
  j["gamma2"] = c.gamma2;
  j["em_steps"] = c.em_steps;
  j["seed"] = c.seed;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  return guarded("train config", [&] {
    TrainConfig c;
    c.lambda1 = j.value("lambda1", c.lambda1);
    c.lambda2 = j.value("lambda2", c.lambda2);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.iterations = j.value("iterations", c.iterations);
    c.mc = j.value("mc", c.mc);
    c.task_size = j.value("task_size", c.task_size);
    c.batch_tasks = j.value("batch_tasks", c.batch_tasks);
    c.components = j.value("components", c.components);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
    if (j.contains("sem")) c.sem = sem_kind_from_string(j.at("sem").get<std::string>());
    c.sem_hidden = j.value("sem_hidden", c.sem_hidden);
    c.init_scale = j.value("init_scale", c.init_scale);
    c.gamma2 = j.value("gamma2", c.gamma2);
    c.em_steps = j.value("em_steps", c.em_steps);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  });
}

Json to_json(const Checkpoint& c) {
  Json j;
  j["format"] = "cmvae-checkpoint";
  j["version"] = 1;
  j["config"] = to_json(c.config);
  j["model"] = to_json(c.model);
  j["loss_history"] = to_json(c.loss_history);
  return j;
}

Checkpoint checkpoint_from_json(const Json& j) {
  return guarded("checkpoint", [&] {
    if (j.value("format", std::string()) != "cmvae-checkpoint") {
      throw FormatError("checkpoint: missing or wrong \"format\" tag");
    }
    Checkpoint c;
    c.config = train_config_from_json(j.at("config"));
    c.model = model_from_json(j.at("model"));
    c.loss_history = vector_from_json(j.at("loss_history"));
    return c;
  });
}

Json to_json(const ShdResult& r) {
  Json j;
  j["shd"] = r.distance;
  j["missing"] = r.missing;
  j["extra"] = r.extra;
  j["reversed"] = r.reversed;
  return j;
}

Json to_json(const AccuracyReport& r, bool per_episode) {
  Json j;
  j["n_tasks"] = r.n_tasks;
  j["mean"] = r.mean;
  j["ci95"] = r.ci95;
  if (per_episode) j["per_episode"] = to_json(r.per_episode);
  return j;
}

Json to_json(const BenchReport& r) {
  Json j;
  j["episodes"] = r.episodes;
  std::ostringstream hex;
  hex << std::hex << r.stream_hash;
  j["episode_stream_hash"] = hex.str();
  Json vs = Json::array();
  for (const BenchVariant& v : r.variants) {
    Json e;
    e["variant"] = v.name;
    e["seconds"] = v.seconds;
    e["overhead_pct"] = v.overhead_pct;
    vs.push_back(std::move(e));
  }
  j["variants"] = std::move(vs);
  return j;
}

Json to_json(const GroundTruth& t) {
  Json j;
  j["sem"] = to_json(t.h);
  j["dag"] = to_json(t.dag);
  Json dims = Json::array();
  for (std::size_t d : t.class_dims) dims.push_back(d);
  j["class_dims"] = std::move(dims);
  j["class_shift"] = t.class_shift;
  j["confounder"] = t.confounder;
  j["confounder_shift"] = t.confounder_shift;
  j["confounder_noise"] = t.confounder_noise;
  if (!t.projection.empty()) j["projection"] = to_json(t.projection);
  return j;
}

GroundTruth truth_from_json(const Json& j) {
  return guarded("ground truth", [&] {
    GroundTruth t;
    t.h = sem_from_json(j.at("sem"));
    t.dag = dag_from_json(j.at("dag"));
    for (const Json& d : j.at("class_dims")) t.class_dims.push_back(d.get<std::size_t>());
    t.class_shift = finite_number(j.at("class_shift"));
    t.confounder = j.at("confounder").get<std::size_t>();
    t.confounder_shift = finite_number(j.at("confounder_shift"));
    t.confounder_noise = finite_number(j.at("confounder_noise"));
    if (j.contains("projection")) t.projection = matrix_from_json(j.at("projection"));
    t.validate();
    return t;
  });
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw ArgumentError("write failed for " + path.string());
}

void write_dataset(const std::filesystem::path& path, const LabeledData& data) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  const bool has_y = !data.y.empty();
  const bool has_z = !data.z.empty();
  for (std::size_t i = 0; i < data.x.rows(); ++i) {
    Json j;
    j["x"] = to_json(data.x.row(i));
    if (has_y && data.y[i] != kNoLabel) {
      j["y"] = data.y[i];
    } else {
      j["y"] = nullptr;
    }
    if (has_z) j["z_true"] = to_json(data.z.row(i));
    out << j.dump() << '\n';
  }
}

LabeledData read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<Vector> xs, zs;
  LabeledData out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    guarded(where.c_str(), [&] {
      xs.push_back(vector_from_json(j.at("x")));
      const Json& y = j.contains("y") ? j.at("y") : Json();
      out.y.push_back(y.is_null() ? kNoLabel : y.get<std::size_t>());
      if (j.contains("z_true")) zs.push_back(vector_from_json(j.at("z_true")));
      return 0;
    });
    if (xs.back().size() != xs.front().size()) throw FormatError(where + ": ragged x");
  }
  if (xs.empty()) throw FormatError(path.string() + ": empty dataset");
  if (!zs.empty() && zs.size() != xs.size()) {
    throw FormatError(path.string() + ": z_true present on some rows only");
  }
  out.x = Matrix(xs.size(), xs.front().size());
  for (std::size_t i = 0; i < xs.size(); ++i) std::copy(xs[i].begin(), xs[i].end(), out.x.row(i).begin());
  if (!zs.empty()) {
    out.z = Matrix(zs.size(), zs.front().size());
    for (std::size_t i = 0; i < zs.size(); ++i) {
      if (zs[i].size() != zs.front().size()) throw FormatError(path.string() + ": ragged z_true");
      std::copy(zs[i].begin(), zs[i].end(), out.z.row(i).begin());
    }
  }
  return out;
}

Json to_json(const Episode& e) {
  Json j;
  j["way"] = e.way;
  j["shot"] = e.shot;
  j["support_x"] = to_json(e.support_x);
  j["support_y"] = e.support_y;
  j["query_x"] = to_json(e.query_x);
  j["query_y"] = e.query_y;
  if (!e.support_z.empty()) {
    j["support_z"] = to_json(e.support_z);
    j["query_z"] = to_json(e.query_z);
  }
  return j;
}

Episode episode_from_json(const Json& j) {
  return guarded("episode", [&] {
    Episode e;
    e.way = j.at("way").get<std::size_t>();
    e.shot = j.at("shot").get<std::size_t>();
    e.support_x = matrix_from_json(j.at("support_x"));
    e.support_y = j.at("support_y").get<std::vector<std::size_t>>();
    e.query_x = matrix_from_json(j.at("query_x"));
    e.query_y = j.at("query_y").get<std::vector<std::size_t>>();
    if (j.contains("support_z")) {
      e.support_z = matrix_from_json(j.at("support_z"));
      e.query_z = matrix_from_json(j.at("query_z"));
    }
    if (e.support_y.size() != e.support_x.rows() || e.query_y.size() != e.query_x.rows()) {
      throw FormatError("episode: label count does not match rows");
    }
    return e;
  });
}

void write_episodes(const std::filesystem::path& path, const std::vector<Episode>& episodes) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  for (const Episode& e : episodes) out << to_json(e).dump() << '\n';
}

std::vector<Episode> read_episodes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<Episode> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(episode_from_json(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  return out;
}

void write_accuracy_csv(const std::filesystem::path& path, const AccuracyReport& r) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << "episode,accuracy\n";
  out.precision(17);
  for (std::size_t i = 0; i < r.per_episode.size(); ++i) out << i << ',' << r.per_episode[i] << '\n';
}

}  // namespace cmvae::io
