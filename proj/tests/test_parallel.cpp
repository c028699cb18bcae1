#include <doctest.h>

#include <omp.h>

#include "fixtures.hpp"
#include "uood/dec.hpp"
#include "uood/php.hpp"
#include "uood/ppca.hpp"
#include "uood/scores.hpp"

// Parallel kernels must agree bitwise with their serial references at any thread count.

using namespace uood;

namespace {

struct ThreadGuard {
  int saved = omp_get_max_threads();
  explicit ThreadGuard(int n) { omp_set_num_threads(n); }
  ~ThreadGuard() { omp_set_num_threads(saved); }
};

}  // namespace

TEST_CASE("php kernel") {
  std::vector<SampleRecord> recs;
  Rng rng(1);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 97; ++i)
    recs.push_back(fixture::record("r" + std::to_string(i), Split::id_test(), nd(rng), 1.0, {nd(rng), nd(rng)},
                                   {0.2 * nd(rng), 0.2 * nd(rng)}));
  std::vector<const SampleRecord*> ptrs;
  for (const auto& r : recs) ptrs.push_back(&r);
  DensityModel m = fit_gmm(sample(DensityModel::standard_normal(2), 500, 3), {.k = 3, .seed = 2});
  const auto ref = php_scores_serial(ptrs, m, {40, 8});
  for (int t : {1, 3, 8}) {
    ThreadGuard g(t);
    CHECK(php_scores_parallel(ptrs, m, {40, 8}) == ref);
  }
}

TEST_CASE("error curve and complexity kernels") {
  Rng rng(2);
  std::vector<Tensor> imgs;
  for (int i = 0; i < 23; ++i)
    imgs.push_back(i % 2 ? fixture::low_rank_image(1 + static_cast<std::size_t>(i % 5), 12, 12, rng)
                         : fixture::noise_image(1, 12, 12, rng));
  std::vector<const Tensor*> ptrs;
  for (const auto& t : imgs) ptrs.push_back(&t);
  const auto curve = mean_error_curve_serial(ptrs, 12);
  const auto profile = calibrate_profile(imgs);
  const auto c_ref = complexity_serial(ptrs, profile);
  for (int t : {1, 4}) {
    ThreadGuard g(t);
    CHECK(mean_error_curve_parallel(ptrs, 12) == curve);
    CHECK(complexity_parallel(ptrs, profile) == c_ref);
  }
}

TEST_CASE("grid kernel") {
  const auto mm = ppca::MixtureSpec::multi_modal();
  const auto sol = ppca::solve(mm.second_moment(), 1);
  const auto qz = ppca::aggregated_posterior(sol, mm);
  const auto a = ppca::evaluate_grid_serial(sol, qz, -3, 3, 6);
  ThreadGuard g(4);
  const auto b = ppca::evaluate_grid_parallel(sol, qz, -3, 3, 6);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x1 == b[i].x1);
    CHECK(a[i].elbo_qz == b[i].elbo_qz);
    CHECK(a[i].marginal == b[i].marginal);
  }
}

TEST_CASE("score table kernel") {
  Dataset ds;
  Rng rng(3);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 60; ++i) {
    auto r = fixture::record("s" + std::to_string(i), i < 20 ? Split::id_train() : i < 40 ? Split::id_test() : Split::ood("o"),
                             nd(rng), 0.5, {nd(rng)}, {-1.0});
    r.bits = 3 + nd(rng);
    ds.records.push_back(r);
  }
  ScoreArtifacts art;
  art.density = fit_id_prior(ds, DensityFamily::FullGaussian, 1, 1);
  art.php = {16, 2};
  art.dec = calibrate_dec(ds, *art.density, art.php, ComplexitySource::Bits, {});
  const auto specs = ScoreSpec::parse_list("php,dec,resultant,ic");
  const auto a = compute_scores_serial(ds, specs, art);
  ThreadGuard g(5);
  const auto b = compute_scores_parallel(ds, specs, art);
  REQUIRE(a.columns.size() == b.columns.size());
  for (std::size_t c = 0; c < a.columns.size(); ++c) CHECK(a.columns[c].values == b.columns[c].values);
}
