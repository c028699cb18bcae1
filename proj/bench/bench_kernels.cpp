// Wall-clock comparison of the serial reference kernels against their OpenMP versions.
// Usage: bench_kernels [threads] [repeats]

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "uood/dec.hpp"
#include "uood/density.hpp"
#include "uood/php.hpp"
#include "uood/ppca.hpp"
#include "uood/rng.hpp"
#include "uood/scores.hpp"

using namespace uood;

namespace {

double best_of(int repeats, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  const int threads = argc > 1 ? std::atoi(argv[1]) : omp_get_num_procs();
  const int repeats = argc > 2 ? std::atoi(argv[2]) : 3;
  if (threads < 1 || repeats < 1) {
    std::fprintf(stderr, "usage: bench_kernels [threads>=1] [repeats>=1]\n");
    return 1;
  }
  std::printf("cores %d, threads %d, best of %d\n", omp_get_num_procs(), threads, repeats);

  Rng rng(7);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0, 1);

  // Latent records for PHP and the score table.
  Dataset ds;
  for (int i = 0; i < 4000; ++i) {
    SampleRecord r;
    r.sample_id = "b" + std::to_string(i);
    r.split = i < 1000 ? Split::id_train() : i < 3000 ? Split::id_test() : Split::ood("far");
    r.recon_loglik = nd(rng);
    r.kl_prior = 1.0;
    r.mu = {nd(rng), nd(rng), nd(rng), nd(rng)};
    r.logvar = {-1.0, -1.0, -1.0, -1.0};
    r.bits = 100 + 10 * nd(rng);
    ds.records.push_back(r);
  }
  ds.latent_dim = 4;
  std::vector<const SampleRecord*> recs;
  for (const auto& r : ds.records) recs.push_back(&r);
  const DensityModel gmm = fit_id_prior(ds, DensityFamily::Gmm, 3, 1);
  const PhpConfig php{128, 3};

  // 32 x 32 images of mixed rank.
  std::vector<Tensor> imgs;
  for (int i = 0; i < 96; ++i) {
    const int rank = 1 + i % 12;
    Tensor t{{3, 32, 32}, std::vector<float>(3 * 32 * 32, 0.0f)};
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < rank; ++k) {
        std::vector<double> a(32), b(32);
        for (auto& v : a) v = u(rng);
        for (auto& v : b) v = u(rng);
        for (int y = 0; y < 32; ++y)
          for (int x = 0; x < 32; ++x) t.data[(c * 32 + y) * 32 + x] += static_cast<float>(a[y] * b[x] / rank);
      }
    imgs.push_back(std::move(t));
  }
  std::vector<const Tensor*> img_ptrs;
  for (const auto& t : imgs) img_ptrs.push_back(&t);
  const auto profile = calibrate_profile(imgs);

  const auto mm = ppca::MixtureSpec::multi_modal();
  const auto sol = ppca::solve(mm.second_moment(), 1);
  const auto qz = ppca::aggregated_posterior(sol, mm);

  ScoreArtifacts art;
  art.density = gmm;
  art.php = php;
  art.dec = calibrate_dec(ds, gmm, php, ComplexitySource::Bits, {});
  const auto specs = ScoreSpec::parse_list("php,dec,resultant,ic");

  int mismatches = 0;
  auto timed = [&](const char* name, auto serial, auto parallel) {
    decltype(serial()) ref, got;
    omp_set_num_threads(1);
    const double ts = best_of(repeats, [&] { ref = serial(); });
    omp_set_num_threads(threads);
    const double tp = best_of(repeats, [&] { got = parallel(); });
    const bool same = ref == got;
    mismatches += !same;
    std::printf("%-14s serial %8.4f s  parallel %8.4f s  speedup %5.2fx  %s\n", name, ts, tp, ts / tp,
                same ? "identical" : "MISMATCH");
  };

  timed("php", [&] { return php_scores_serial(recs, gmm, php); },
        [&] { return php_scores_parallel(recs, gmm, php); });
  timed("error_curve", [&] { return mean_error_curve_serial(img_ptrs, 32); },
        [&] { return mean_error_curve_parallel(img_ptrs, 32); });
  timed("complexity", [&] { return complexity_serial(img_ptrs, profile); },
        [&] { return complexity_parallel(img_ptrs, profile); });
  auto elbo_column = [](const std::vector<ppca::GridRow>& rows) {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r.elbo_qz);
    return v;
  };
  timed("ppca_grid", [&] { return elbo_column(ppca::evaluate_grid_serial(sol, qz, -6, 6, 61)); },
        [&] { return elbo_column(ppca::evaluate_grid_parallel(sol, qz, -6, 6, 61)); });
  auto flatten = [](const ScoreTable& t) {
    std::vector<double> v;
    for (const auto& c : t.columns)
      for (const auto& kv : c.values) v.push_back(kv.second);
    return v;
  };
  timed("score_table", [&] { return flatten(compute_scores_serial(ds, specs, art)); },
        [&] { return flatten(compute_scores_parallel(ds, specs, art)); });
  return mismatches == 0 ? 0 : 1;
}
