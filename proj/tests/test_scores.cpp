#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "uood/error.hpp"
#include "uood/scores.hpp"

using namespace uood;
using fixture::record;

namespace {

/// id_train/id_test/ood:far records with bits, drawn so OOD has higher likelihood.
Dataset bits_dataset(std::uint64_t seed, double shift) {
  Rng rng(seed);
  std::normal_distribution<double> nd;
  Dataset ds;
  ds.latent_dim = 2;
  auto add = [&](const std::string& prefix, Split split, int n, double mu_shift, double ll_shift, double bits) {
    for (int i = 0; i < n; ++i) {
      auto r = record(prefix + std::to_string(i), split, -10 + ll_shift + nd(rng), 0.0,
                      {mu_shift + 0.3 * nd(rng), 0.3 * nd(rng)}, {std::log(0.05), std::log(0.05)});
      r.kl_prior = gaussian_kl_to_standard(r.mu, r.logvar);
      r.recon_loglik += r.kl_prior;  // keep likelihood = -10 + shift + noise
      r.bits = bits + 0.1 * nd(rng);
      ds.records.push_back(r);
    }
  };
  add("tr", Split::id_train(), 300, 1.0, 0.0, 4.0);
  add("te", Split::id_test(), 100, 1.0, 0.0, 4.0);
  add("ood", Split::ood("far"), 100, -1.0, shift, 2.0);
  return ds;
}

}  // namespace

TEST_CASE("score specs") {
  CHECK(ScoreSpec::parse("llr:3") == ScoreSpec{ScoreKind::Llr, 3});
  CHECK(ScoreSpec::parse("llr:3").name() == "llr:3");
  CHECK_THROWS_AS(ScoreSpec::parse("llr:x"), ValidationError);
  CHECK_THROWS_AS(ScoreSpec::parse("bogus"), ValidationError);
  CHECK(ScoreSpec::parse_list("php,dec,resultant").size() == 3);
  CHECK_THROWS_AS(ScoreSpec::parse_list(","), ValidationError);
}

TEST_CASE("combinator arithmetic") {
  CHECK(likelihood_score(record("a", Split::id_test(), -1, 0)) == -1);
  CHECK(likelihood_score(record("a", Split::id_test(), -100, 25)) == -125);

  auto r = record("a", Split::id_test(), -10, 0);
  r.bits = 0.0;
  CHECK(ic_score(r) == -10);
  r.bits = 4.0;
  CHECK(ic_score(r) == -6);

  r.ens_logliks = std::vector{-10.0, -10.0, -10.0};
  CHECK(waic_score(r) == -10);
  r.ens_logliks = std::vector{-9.0, -11.0};
  CHECK(waic_score(r) == -11);
  r.ens_logliks = std::vector{-8.0, -10.0};
  CHECK(waic_score(r) == -10);
  r.ens_logliks = std::vector{-9.0};
  CHECK_THROWS_AS(waic_score(r), ValidationError);

  auto h = record("h", Split::id_test(), -90, 10);
  h.layer_terms = std::vector<LayerTerm>{{1, -90, 10}, {2, -100, 10}};
  CHECK(llr_score(h, 1) == 0);
  CHECK(llr_score(h, 2) == 10);
  CHECK_THROWS_AS(llr_score(h, 3), ValidationError);

  auto b = record("b", Split::id_test(), -10, 0);
  CHECK_THROWS_AS(lra_score(b), ValidationError);
  b.bg_loglik = -10.0;
  CHECK(lra_score(b) == 0);
  b.bg_loglik = -12.0;
  CHECK(lra_score(b) == 2);
}

TEST_CASE("resultant reduces to php at c = 0") {
  auto r = record("x", Split::id_test(), -4, 0.5, {0.3, -0.2}, {-1.0, 0.2});
  const auto m = DensityModel::gaussian(Vec::Zero(2), 2 * Mat::Identity(2, 2));
  const PhpConfig cfg{64, 3};
  const DecScale s{123.0, -5, 0.5, false};
  CHECK(resultant_score(r, m, 0.0, s, cfg) == php_score(r, m, cfg));
  CHECK(resultant_score(r, m, 0.5, s, cfg) == doctest::Approx(php_score(r, m, cfg) + 61.5).epsilon(1e-14));
}

TEST_CASE("likelihood-only evaluation has zero advantage") {
  const auto ds = bits_dataset(1, 5.0);
  const auto reps = evaluate_all(ds, {ScoreSpec{ScoreKind::Likelihood}}, {});
  REQUIRE(reps.size() == 1);
  REQUIRE(reps[0].rows.size() == 1);
  CHECK(reps[0].rows[0].advantage == 0.0);
  CHECK(reps[0].rows[0].auroc < 0.5);
  CHECK(reps[0].n_id == 100);
  CHECK(reps[0].n_ood == 100);
}

TEST_CASE("dependency checks name the gap") {
  auto ds = bits_dataset(2, 0.0);
  CHECK_THROWS_WITH_AS(compute_scores_serial(ds, {ScoreSpec{ScoreKind::Php}}, {}),
                       doctest::Contains("density"), ValidationError);
  CHECK_THROWS_WITH_AS(compute_scores_serial(ds, {ScoreSpec{ScoreKind::Dec}}, {}),
                       doctest::Contains("calibration"), ValidationError);
  ds.records[350].bits.reset();
  CHECK_THROWS_WITH_AS(compute_scores_serial(ds, {ScoreSpec{ScoreKind::Ic}}, {}),
                       doctest::Contains(ds.records[350].sample_id.c_str()), ValidationError);
  // id_train records are not scored, so their fields are not required.
  auto train_gap = bits_dataset(2, 0.0);
  train_gap.records[0].bits.reset();
  CHECK_NOTHROW(compute_scores_serial(train_gap, {ScoreSpec{ScoreKind::Ic}}, {}));
}

TEST_CASE("php/dec/resultant additivity on the bits source") {
  const auto ds = bits_dataset(3, 5.0);
  ScoreArtifacts art;
  art.density = fit_id_prior(ds, DensityFamily::Gmm, 2, 4);
  art.php = {64, 5};
  art.dec = calibrate_dec(ds, *art.density, art.php, ComplexitySource::Bits, {});
  const auto specs = ScoreSpec::parse_list("php,dec,resultant,ic");
  const auto table = compute_scores_parallel(ds, specs, art);
  CHECK(table.sample_ids.size() == 200);
  CHECK(std::is_sorted(table.sample_ids.begin(), table.sample_ids.end()));
  for (const auto& id : table.sample_ids) {
    const double php = table.column("php").values.at(id), dec = table.column("dec").values.at(id),
                 res = table.column("resultant").values.at(id), lik = table.column("likelihood").values.at(id);
    CHECK(std::abs(res - (php + dec - lik)) <= 1e-9 * std::max(1.0, std::abs(res)));
  }
  const auto rep = evaluate(table, "ood:far");
  CHECK(std::abs(rep.row("resultant").advantage - rep.row("php").advantage - rep.row("dec").advantage) < 1e-9);
  CHECK(rep.row("likelihood").auroc < 0.5);
  CHECK(rep.row("ic").auroc > rep.row("likelihood").auroc);
  CHECK(rep.row("php").advantage > 0);
}

TEST_CASE("permuting the dataset leaves metrics unchanged") {
  const auto ds = bits_dataset(4, 2.0);
  auto shuffled = ds;
  Rng rng(1);
  std::shuffle(shuffled.records.begin(), shuffled.records.end(), rng);
  ScoreArtifacts art;
  art.density = fit_id_prior(ds, DensityFamily::FullGaussian, 1, 2);
  art.php = {32, 9};
  const auto specs = ScoreSpec::parse_list("php,ic");
  const auto a = evaluate_all(ds, specs, art);
  const auto b = evaluate_all(shuffled, specs, art);
  std::ostringstream sa, sb;
  write_report(a[0], sa);
  write_report(b[0], sb);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("shifting bg_loglik shifts lra and leaves auroc") {
  auto ds = bits_dataset(5, 1.0);
  Rng rng(3);
  std::normal_distribution<double> nd;
  for (auto& r : ds.records) r.bg_loglik = -12 + nd(rng);
  auto shifted = ds;
  for (auto& r : shifted.records) *r.bg_loglik -= 3.0;
  const auto specs = ScoreSpec::parse_list("lra");
  const auto ta = compute_scores_serial(ds, specs, {});
  const auto tb = compute_scores_serial(shifted, specs, {});
  for (const auto& id : ta.sample_ids)
    CHECK(tb.column("lra").values.at(id) == doctest::Approx(ta.column("lra").values.at(id) + 3.0).epsilon(1e-14));
  CHECK(evaluate(ta, "ood:far").row("lra").auroc == evaluate(tb, "ood:far").row("lra").auroc);
}

TEST_CASE("score table serialization") {
  const auto ds = bits_dataset(6, 0.0);
  const auto t = compute_scores_serial(ds, ScoreSpec::parse_list("ic"), {});
  std::stringstream ss;
  write_score_table(t, ss);
  const auto back = read_score_table(ss);
  CHECK(back.sample_ids == t.sample_ids);
  CHECK(back.splits == t.splits);
  CHECK(back.column("ic").values == t.column("ic").values);
  CHECK(back.columns.size() == 2);
}
