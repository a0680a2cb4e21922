// Serial vs OpenMP kernel timings and the EM timing comparison.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include <CLI11.hpp>

#include "cmvae/eval.hpp"
#include "cmvae/kernels.hpp"
#include "cmvae/synth.hpp"

using namespace cmvae;

namespace {

double best_of(std::size_t repeats, const std::function<void()>& f) {
  double best = 0.0;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto start = std::chrono::steady_clock::now();
    f();
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    best = r == 0 ? secs : std::min(best, secs);
  }
  return best;
}

void report(const char* name, double serial, double parallel, bool same) {
  std::printf("%-12s serial %9.4fs  openmp %9.4fs  speedup %5.2fx  bitwise %s\n", name, serial,
              parallel, serial / parallel, same ? "equal" : "DIFFERENT");
}

struct Stream {
  std::vector<Episode> episodes;
  StructuralModel h;
};

Stream em_stream(std::size_t n, std::size_t shot, std::uint64_t seed) {
  Rng rng(seed);
  GroundTruth truth;
  truth.h = random_linear_dag(8, 0.3, 0.5, 2.0, rng);
  truth.dag = dag_extract(adjacency(truth.h), 1e-12);
  truth.class_dims = {truth.dag.order().front()};
  truth.confounder = truth.dag.order().back();
  return {gen_biased_tasks(truth, BiasSpec{truth.confounder, 0.9}, 20, shot, 300, n, seed),
          truth.h};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cmvae kernel and EM benchmarks"};
  std::size_t rows = 200000, comps = 20, dim = 16, repeats = 5, episodes = 200;
  app.add_option("--rows", rows, "codes per kernel call");
  app.add_option("--components", comps, "mixture components");
  app.add_option("--dim", dim, "code dimension");
  app.add_option("--repeats", repeats, "timing repeats (best is reported)");
  app.add_option("--episodes", episodes, "episodes for the EM comparison");
  CLI11_PARSE(app, argc, argv);

  std::printf("threads %d\n", omp_get_max_threads());
  Rng rng(1);
  CmogPrior prior = CmogPrior::uniform(comps, dim, 1.0);
  for (double& v : prior.mu.values()) v = rng.normal();
  for (double& v : prior.sigma2.values()) v = 0.5 + rng.uniform();
  Matrix z(rows, dim);
  for (double& v : z.values()) v = 2.0 * rng.normal();
  const Vector offset(comps, -1.0);

  Matrix a(rows, comps), b(rows, comps);
  const double js = best_of(repeats, [&] { kernels::log_joint_serial(prior, offset, z, a); });
  const double jp = best_of(repeats, [&] { kernels::log_joint_openmp(prior, offset, z, b); });
  report("log_joint", js, jp, a == b);

  Vector la(rows), lb(rows);
  Matrix sa = a, sb = a;
  const double ss = best_of(repeats, [&] {
    sa = a;
    kernels::softmax_rows_serial(sa, la);
  });
  const double sp = best_of(repeats, [&] {
    sb = a;
    kernels::softmax_rows_openmp(sb, lb);
  });
  report("softmax_rows", ss, sp, sa == sb && la == lb);

  kernels::EStep ea, eb;
  const double es = best_of(repeats, [&] { ea = kernels::estep(prior, offset, z, Exec::kSerial); });
  const double ep = best_of(repeats, [&] { eb = kernels::estep(prior, offset, z, Exec::kOpenMP); });
  report("estep", es, ep, ea.omega == eb.omega && ea.lse == eb.lse);

  BenchOptions opt;
  opt.repeats = 3;
  for (std::size_t shot : {1, 5}) {
    const auto once = em_stream(episodes, shot, 10 + shot);
    const auto twice = em_stream(2 * episodes, shot, 10 + shot);
    const BenchReport r1 = bench_em(once.episodes, once.h, opt);
    const BenchReport r2 = bench_em(twice.episodes, twice.h, opt);
    std::printf("em 20-way %zu-shot, %zu episodes:", shot, episodes);
    for (const BenchVariant& v : r1.variants) {
      std::printf("  %s %.3fs (%+.2f%%)", v.name.c_str(), v.seconds, v.overhead_pct);
    }
    std::printf("\n  doubling the stream scales time by");
    for (std::size_t i = 0; i < r1.variants.size(); ++i) {
      const double ratio = r2.variants[i].seconds / r1.variants[i].seconds;
      std::printf("  %s %.2fx%s", r1.variants[i].name.c_str(), ratio,
                  ratio >= 1.6 && ratio <= 2.4 ? "" : " (outside 2x +-20%)");
    }
    std::printf("\n");
  }
  return 0;
}
