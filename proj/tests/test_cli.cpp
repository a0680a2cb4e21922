#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "cmvae/io.hpp"

namespace fs = std::filesystem;
using cmvae::io::Json;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "cmvae_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

/// Runs the CLI inside the work directory; returns its exit status.
int run(const std::string& args, const std::string& tag = "last") {
  const std::string cmd = "cd '" + workdir().string() + "' && '" CMVAE_CLI_PATH "' " + args +
                          " > " + tag + ".out 2> " + tag + ".err";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read(const std::string& name) { return Json::parse(slurp(workdir() / name)); }

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

// Removes wall-clock fields, which are the only non-reproducible numbers.
Json without_timings(Json j) {
  if (j.is_object()) {
    j.erase("seconds");
    j.erase("overhead_pct");
    for (auto& [k, v] : j.items()) v = without_timings(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = without_timings(v);
  }
  return j;
}

/// Runs a subcommand, reruns it from its manifest, and compares the outputs.
void check_rerun(const std::string& args, const std::string& output, bool timed = false) {
  REQUIRE(run(args) == 0);
  const std::string first = slurp(workdir() / output);
  const fs::path manifest = workdir() / "run-manifest.json";
  REQUIRE(fs::exists(manifest));
  fs::copy_file(manifest, workdir() / "saved-manifest.json", fs::copy_options::overwrite_existing);
  fs::remove(workdir() / output);
  REQUIRE(run("--config saved-manifest.json", "rerun") != 0);  // subcommand is required
  const std::string sub = read("saved-manifest.json").at("subcommand").get<std::string>();
  REQUIRE(run(sub + " --config saved-manifest.json", "rerun") == 0);
  const std::string second = slurp(workdir() / output);
  if (timed) {
    CHECK(without_timings(Json::parse(first)) == without_timings(Json::parse(second)));
  } else {
    CHECK(first == second);
  }
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("gen writes a dataset, a truth sidecar and a manifest") {
    REQUIRE(run("gen --toy flying-wing-sky --samples 1000 --seed 7 -o toy.jsonl") == 0);
    CHECK(line_count(workdir() / "toy.jsonl") == 1000);
    const Json first = Json::parse(slurp(workdir() / "toy.jsonl").substr(0, slurp(workdir() / "toy.jsonl").find('\n')));
    CHECK(first.at("x").size() == 3);
    const Json truth = read("toy.jsonl.truth.json");
    CHECK(truth.contains("truth"));
    const Json m = read("run-manifest.json");
    CHECK(m.at("subcommand") == "gen");
    CHECK(m.at("seed") == 7);
    CHECK(m.at("config").at("samples") == 1000);
  }

  TEST_CASE("train, eval and bench report their schemas") {
    REQUIRE(run("gen --toy flying-wing-sky --samples 256 --seed 1 -o train.jsonl") == 0);
    REQUIRE(run("train --data train.jsonl --iterations 20 --mc 2 --seed 2 -o ckpt.json") == 0);
    REQUIRE(run("eval --model ckpt.json --episodes 50 --way 2 --shot 4 --mode causal -o report.json") == 0);
    const Json r = read("report.json");
    CHECK(r.contains("mean"));
    CHECK(r.contains("ci95"));
    CHECK(r.at("n_tasks") == 50);
    REQUIRE(run("bench --episodes 20 --way 5 --query 25 --dim 4 --repeats 1 -o bench.json") == 0);
    const Json b = read("bench.json");
    REQUIRE(b.at("variants").size() == 3);
    CHECK(b.at("variants")[2].at("variant") == "causal");
  }

  TEST_CASE("fit-dag, shd and intervene") {
    REQUIRE(run("gen --toy flying-wing-sky --samples 1000 --seed 3 -o dag.jsonl") == 0);
    REQUIRE(run("fit-dag --data dag.jsonl --sem linear --truth dag.jsonl.truth.json -o fit.json") == 0);
    const Json fit = read("fit.json");
    CHECK(fit.at("shd").at("shd") == 0);
    REQUIRE(run("shd --learned fit.json --truth dag.jsonl.truth.json -o shd.json") == 0);
    CHECK(read("shd.json").at("shd") == 0);
    REQUIRE(run("intervene --sem-file fit.json --code 1,0.5,-0.5 --set 0=0 -o cf.json") == 0);
    const Json cf = read("cf.json");
    CHECK(cf.at("counterfactual")[0] == 0.0);
  }

  TEST_CASE("reruns from the manifest reproduce the outputs") {
    check_rerun("gen --toy flying-wing-sky --samples 200 --seed 5 -o a.jsonl", "a.jsonl");
    check_rerun("gen --toy flying-wing-sky --episodes 30 --way 2 --shot 4 --seed 5 -o eps.jsonl",
                "eps.jsonl");
    check_rerun("fit-dag --data a.jsonl --sem linear --bundle bundle.json -o f.json", "f.json");
    check_rerun("eval --model bundle.json --episodes-file eps.jsonl --use-latents -o e.json",
                "e.json");
    check_rerun("eval --model bundle.json --episodes 40 --way 2 --shot 4 --n-adjust 8 -o g.json",
                "g.json");
    check_rerun("bench --episodes 10 --way 3 --query 9 --dim 3 --repeats 1 -o b.json", "b.json",
                true);
  }

  TEST_CASE("errors map to distinct exit codes with a JSON object on stderr") {
    CHECK(run("gen --no-such-flag", "usage") == 2);
    CHECK(run("eval --model missing.json -o x.json", "format") == 5);
    const Json err = Json::parse(slurp(workdir() / "format.err"));
    CHECK(err.at("exit_code") == 5);
    CHECK(err.at("error") == "format");
    CHECK(err.contains("message"));
    std::ofstream(workdir() / "cyc.json")
        << R"({"kind": "linear", "dim": 2, "A": [[0, 1], [1, 0]]})";
    CHECK(run("intervene --sem-file cyc.json --code 0,0 --set 0=1 -o y.json", "cycle") == 6);
    CHECK(run("gen --episodes 5 --bias 2 -o z.jsonl", "arg") == 3);
  }
}
