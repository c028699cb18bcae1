// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "uood/dec.hpp"
#include "uood/density.hpp"
#include "uood/metrics.hpp"
#include "uood/php.hpp"
#include "uood/ppca.hpp"
#include "uood/scores.hpp"
#include "uood/toy_vae.hpp"

using namespace uood;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Advantages of php/dec/resultant on one OOD split, shared by criteria 4-6.
struct AdditivityCase {
  std::string label;
  double a_php = 0, a_dec = 0, a_res = 0;
};
std::vector<AdditivityCase> g_additivity;

AdditivityCase additivity_of(const std::string& label, const EvalReport& rep) {
  return {label, rep.row("php").advantage, rep.row("dec").advantage, rep.row("resultant").advantage};
}

// ---------------------------------------------------------------- 1
Outcome metrics_oracles() {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> size(1, 60);
  std::uniform_int_distribution<int> level(0, 15);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> id(size(rng)), ood(size(rng));
    for (auto& v : id) v = 0.25 * level(rng);
    for (auto& v : ood) v = 0.25 * level(rng) - 0.5;
    worst = std::max(worst, std::abs(auroc(id, ood) - oracle::auroc_pairs(id, ood)));
    worst = std::max(worst, std::abs(auprc(id, ood) - oracle::auprc_sweep(id, ood)));
    for (double t : {0.8, 0.95, 0.5, 1.0})
      worst = std::max(worst, std::abs(fpr_at_tpr(id, ood, t) - oracle::fpr_sweep(id, ood, t)));
  }
  return {worst <= 1e-12, fmt("200 tied instances, max |impl - oracle| = %.3g", worst)};
}

// ---------------------------------------------------------------- 2
Outcome ppca_single_modal() {
  using namespace ppca;
  const auto spec = MixtureSpec::single_modal();
  const auto sol = solve(spec.second_moment(), 1);
  const auto qz = aggregated_posterior(sol, spec);
  const double mean_err = std::abs(qz.means[0](0)), var_err = std::abs(qz.covariances[0](0, 0) - 1.0);
  const bool exact = mean_err <= 1e-12 && var_err <= 1e-12;

  const auto std1 = MixtureSpec::gaussian(Vec::Zero(1), Mat::Identity(1, 1));
  Rng rng(2);
  std::normal_distribution<double> nd(0, 2);
  double elbo_gap = 0;
  for (int i = 0; i < 100; ++i) {
    const Vec x = (Vec(2) << nd(rng), nd(rng)).finished();
    elbo_gap = std::max(elbo_gap, std::abs(linear_elbo(sol, x, std1) - marginal_density(sol, x)));
  }

  const Mat x = gen_mixture(spec, 5000, 3);
  const auto sample_sol = solve(sample_second_moment(x), 1);
  const Vec m = x.colwise().mean().transpose();
  const Mat centered = x.rowwise() - m.transpose();
  const auto empirical = MixtureSpec::gaussian(m, centered.transpose() * centered / static_cast<double>(x.rows()));
  const double kl = kl_quadrature_1d(aggregated_posterior(sample_sol, empirical), std1);

  return {exact && elbo_gap <= 1e-9 && kl < 0.01,
          fmt("q(z) = N(%.2g, 1%+.2g); max |ELBO - log p| = %.3g; sample KL = %.3g", qz.means[0](0),
              qz.covariances[0](0, 0) - 1.0, elbo_gap, kl)};
}

// ---------------------------------------------------------------- 3
Outcome ppca_multi_modal() {
  using namespace ppca;
  const auto spec = MixtureSpec::multi_modal();
  const auto sol = solve(spec.second_moment(), 1);
  const auto qz = aggregated_posterior(sol, spec);
  bool closed = qz.weights.size() == 2 && std::abs(qz.weights[0] - 0.5) < 1e-15;
  for (std::size_t k = 0; k < qz.weights.size(); ++k) {
    closed = closed && std::abs(std::abs(qz.means[k](0)) - 18.0 / 19) < 1e-12 &&
             std::abs(qz.covariances[k](0, 0) - 37.0 / 361) < 1e-12;
  }
  closed = closed && qz.means[0](0) * qz.means[1](0) < 0;

  auto modes = find_modes_1d(qz, -4, 4);
  std::sort(modes.begin(), modes.end());
  const bool modes_ok =
      modes.size() == 2 && std::abs(modes[0] + 0.9474) < 1e-3 && std::abs(modes[1] - 0.9474) < 1e-3;

  const auto std1 = MixtureSpec::gaussian(Vec::Zero(1), Mat::Identity(1, 1));
  const double kl = kl_quadrature_1d(qz, std1);
  const Vec origin = Vec::Zero(2), mu1 = spec.means[0];
  const double p0 = linear_elbo(sol, origin, std1), p1 = linear_elbo(sol, mu1, std1);
  const double q0 = linear_elbo(sol, origin, qz), q1 = linear_elbo(sol, mu1, qz);
  const bool paradox = p0 > p1, fixed = (q1 - q0) > (p1 - p0);
  return {closed && modes_ok && kl > 0.1 && paradox && fixed,
          fmt("modes %s; KL = %.4f; prior N(0,1): ELBO(0)-ELBO(mu1) = %.4f; prior q(z): %.4f",
              modes.size() == 2 ? fmt("%.5f, %.5f", modes[0], modes[1]).c_str() : "not bimodal", kl, p0 - p1,
              q0 - q1)};
}

// ---------------------------------------------------------------- 4
/// Character count of the points at 3 decimals, x8: a crude description length for the bits source.
double description_bits(const Mat& x, Eigen::Index i) {
  return 8.0 * static_cast<double>(fmt("%.3f %.3f", x(i, 0), x(i, 1)).size());
}

void attach_bits(Dataset& ds, const Mat& x, std::size_t first) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) ds.records[first + static_cast<std::size_t>(i)].bits = description_bits(x, i);
}

Outcome toy_direction_one() {
  const auto spec = ppca::MixtureSpec::multi_modal();
  const Mat train_x = ppca::gen_mixture(spec, 5000, 40);
  const Mat test_x = ppca::gen_mixture(spec, 500, 41);
  const Mat ood_x = ppca::gen_mixture(ppca::MixtureSpec::gaussian(Vec::Zero(2), 0.1 * Mat::Identity(2, 2)), 2000, 42);

  const toy::TrainConfig cfg{.lr = 1e-5, .epochs = 200, .batch_size = 100, .seed = 43};
  const auto trained = toy::train(toy::init(44), train_x, cfg);
  const auto& p = trained.params;

  Dataset ds;
  toy::append_encoded(ds, p, train_x, Split::id_train(), "train", 45);
  toy::append_encoded(ds, p, test_x, Split::id_test(), "test", 45);
  toy::append_encoded(ds, p, ood_x, Split::ood("void"), "void", 45);
  attach_bits(ds, train_x, 0);
  attach_bits(ds, test_x, static_cast<std::size_t>(train_x.rows()));
  attach_bits(ds, ood_x, static_cast<std::size_t>(train_x.rows() + test_x.rows()));

  ScoreArtifacts art;
  art.density = fit_id_prior(ds, DensityFamily::Gmm, 2, 46);
  art.php = {128, 47};
  art.dec = calibrate_dec(ds, *art.density, art.php, ComplexitySource::Bits, {});
  const auto table = compute_scores_parallel(ds, ScoreSpec::parse_list("php,dec,resultant"), art);
  const auto rep = evaluate(table, "ood:void");
  g_additivity.push_back(additivity_of("toy", rep));

  const auto& php = rep.row("php");
  const auto& lik = rep.row("likelihood");
  const bool improved = trained.epoch_elbo.back() > trained.epoch_elbo.front();
  return {improved && php.advantage > 0 && php.auroc >= lik.auroc,
          fmt("ELBO %.3f -> %.3f; AUROC likelihood %.4f, php %.4f; A(php) = %.4f", trained.epoch_elbo.front(),
              trained.epoch_elbo.back(), lik.auroc, php.auroc, php.advantage)};
}

// ---------------------------------------------------------------- 5
Outcome dec_construction() {
  const fs::path dir = fs::temp_directory_path() / fmt("uood_acceptance_%d", static_cast<int>(::getpid()));
  fs::create_directories(dir);
  Rng rng(50);
  std::normal_distribution<double> nd;
  Dataset ds;
  ds.root = dir;
  ds.latent_dim = 1;
  std::vector<Tensor> all;
  auto add = [&](const std::string& id, Split split, Tensor img, double mu) {
    // Posterior terms chosen so every record has likelihood exactly -100.
    auto rec = fixture::record(id, std::move(split), 0.0, 0.0, {mu}, {std::log(0.1)});
    rec.kl_prior = gaussian_kl_to_standard(rec.mu, rec.logvar);
    rec.recon_loglik = -100.0 + rec.kl_prior;
    rec.tensor_path = id + ".rten";
    save_tensor(img, dir / *rec.tensor_path);
    all.push_back(std::move(img));
    ds.records.push_back(std::move(rec));
  };
  for (int i = 0; i < 256; ++i)
    add(fmt("id-%03d", i), i < 128 ? Split::id_train() : Split::id_test(), fixture::low_rank_image(5, 32, 32, rng),
        0.3 * nd(rng));
  for (int i = 0; i < 128; ++i)
    add(fmt("ood-r1-%03d", i), Split::ood("synthetic"), fixture::low_rank_image(1, 32, 32, rng), 2.0 + 0.3 * nd(rng));
  for (int i = 0; i < 128; ++i)
    add(fmt("ood-noise-%03d", i), Split::ood("synthetic"), fixture::noise_image(1, 32, 32, rng), 2.0 + 0.3 * nd(rng));

  ScoreArtifacts art;
  art.density = fit_id_prior(ds, DensityFamily::FullGaussian, 1, 51);
  art.php = {128, 52};
  art.dec = calibrate_dec(ds, *art.density, art.php, ComplexitySource::Svd, {.seed = 53});
  const auto& prof = *art.dec->profile;

  std::size_t mismatches = 0;
  double c_max = -INFINITY, c_id = 0, c_ood = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const SvdImage svd(all[i]);
    const auto fast = find_rank(svd, prof, {.binary_search = true});
    const auto slow = find_rank(svd, prof, {.binary_search = false});
    mismatches += fast.n_i != slow.n_i;
    const double c = complexity_from_rank(fast.n_i, prof.n_id);
    c_max = std::max(c_max, c);
    (i < 256 ? c_id : c_ood) += c / 256.0;
  }

  const auto table = compute_scores_parallel(ds, ScoreSpec::parse_list("php,dec,resultant"), art);
  const auto rep = evaluate(table, "ood:synthetic");
  g_additivity.push_back(additivity_of("dec-images", rep));
  fs::remove_all(dir);

  const double a_dec = rep.row("dec").advantage;
  const bool ok = prof.n_id_max >= 5 && prof.n_id_max <= 7 && c_id > c_ood && c_max <= 1.0 && mismatches == 0 &&
                  a_dec > 0 && rep.row("likelihood").gap == 0.0;
  return {ok, fmt("n_id_max = %zu, n_id = %zu; E_id[C] = %.4f > E_ood[C] = %.4f; max C = %.3f; "
                  "search mismatches = %zu/512; A(dec) = %.4f",
                  prof.n_id_max, prof.n_id, c_id, c_ood, c_max, mismatches, a_dec)};
}

// ---------------------------------------------------------------- 6
Outcome resultant_additivity() {
  if (g_additivity.size() != 2) return {false, "fixtures of criteria 4-5 unavailable"};
  bool ok = true;
  std::string detail;
  for (const auto& c : g_additivity) {
    const double resid = std::abs(c.a_res - (c.a_php + c.a_dec));
    const bool dominance_applies = c.a_php >= 0 && c.a_dec >= 0;
    const bool dominance = !dominance_applies || c.a_res >= std::max(c.a_php, c.a_dec);
    ok = ok && resid <= 1e-9 && dominance;
    detail += fmt("%s%s: A(R) - A(P) - A(D) = %.2g, A = %.4f / %.4f / %.4f%s", detail.empty() ? "" : "; ",
                  c.label.c_str(), resid, c.a_res, c.a_php, c.a_dec, dominance_applies ? "" : " (dominance n/a)");
  }
  return {ok, detail};
}

// ---------------------------------------------------------------- 7
Outcome gradient_check() {
  Rng rng(70);
  std::normal_distribution<double> nd;
  double worst = 0, worst_double_fd = 0;
  for (int trial = 0; trial < 20; ++trial) {
    auto p = toy::init(derive_seed(71, static_cast<std::uint64_t>(trial)), 1 + static_cast<std::size_t>(trial % 3));
    for (auto& t : p.theta) t += 0.3 * nd(rng);
    std::vector<double> x{2 * nd(rng), 2 * nd(rng)}, eps(p.latent_dim);
    for (auto& e : eps) e = nd(rng);
    std::vector<double> analytic(p.theta.size(), 0.0);
    toy::elbo_with_noise(p, x, eps, analytic);
    const auto numeric = oracle::toy_fd_gradient(p.theta, p.latent_dim, x, eps, 1e-5L);
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-6});
      worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    worst_double_fd = std::max(worst_double_fd, toy::grad_check(p, x, eps, 1e-5));
  }
  // The double-precision difference quotient is round-off limited on gradients near 1e-6; it is reported, not gated.
  return {worst < 1e-4, fmt("20 configurations, max relative error = %.3g vs extended-precision central "
                            "differences (double-precision differences: %.3g)",
                            worst, worst_double_fd)};
}

// ---------------------------------------------------------------- 8
Outcome em_monotonicity() {
  double worst_drop = 0;
  std::size_t iterations = 0;
  for (std::uint64_t run = 0; run < 50; ++run) {
    Rng rng(derive_seed(80, run));
    std::normal_distribution<double> nd;
    const std::size_t k = 2 + run % 3, d = 1 + run % 3, n = 600;
    Mat x(n, d);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double centre = 3.0 * static_cast<double>(static_cast<std::size_t>(i) % k);
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = centre + nd(rng);
    }
    const auto m = fit_gmm(x, {.k = k, .seed = run});
    const auto& trace = m.fit_meta.loglik_trace;
    iterations += trace.size();
    for (std::size_t i = 1; i < trace.size(); ++i)
      worst_drop = std::max(worst_drop, (trace[i - 1] - trace[i]) * static_cast<double>(n));
  }
  return {worst_drop <= 1e-10,
          fmt("50 runs, %zu iterations, largest total log-likelihood decrease = %.3g", iterations, worst_drop)};
}

// ---------------------------------------------------------------- 9
Outcome non_reproducibility() {
  return {true,
          "full-scale image benchmark numbers need convolutional VAEs trained on image corpora and are not "
          "reproduced here; the ingestion pathway is validated by criterion 10"};
}

// ---------------------------------------------------------------- 10
std::string line(const std::string& id, const std::string& split, double recon, double kl, const std::string& extra) {
  return fmt(R"({"sample_id":"%s","split":"%s","recon_loglik":%.17g,"kl_prior":%.17g,"mu":[0],"logvar":[0]%s})",
             id.c_str(), split.c_str(), recon, kl, extra.c_str()) +
         "\n";
}

Outcome ingestion() {
  Rng rng(100);
  std::normal_distribution<double> nd;
  std::string text;
  for (int i = 0; i < 200; ++i) {
    const double ll = -100 + 3 * nd(rng);
    text += line(fmt("id-%03d", i), "id_test", ll + 20, 20, fmt(R"(,"bits":%.17g)", 10 + 0.5 * nd(rng)));
    text += line(fmt("ood-%03d", i), "ood:inverted", ll + 5 + 20, 20, fmt(R"(,"bits":%.17g)", 2 + 0.5 * nd(rng)));
  }
  std::istringstream in(text);
  const Dataset ds = parse_manifest(in);
  const auto reps = evaluate_all(ds, ScoreSpec::parse_list("likelihood,ic"), {});
  const double lik = reps.at(0).row("likelihood").auroc, ic = reps.at(0).row("ic").auroc;

  std::istringstream fx(
      line("a", "id_test", -90, 10,
           R"(,"ens_logliks":[-9,-11],"layer_terms":[{"k":1,"recon_k":-120,"kl_gt_k":10}],"bg_loglik":-102)") +
      line("b", "id_test", -10, 0,
           R"(,"ens_logliks":[-4,-4,-4],"layer_terms":[{"k":1,"recon_k":-10,"kl_gt_k":0}],"bg_loglik":-12)") +
      line("c", "ood:x", -3.5, 0.5,
           R"(,"ens_logliks":[-1,-2,-3,-6],"layer_terms":[{"k":1,"recon_k":-2,"kl_gt_k":2.5}],"bg_loglik":-4.25)"));
  const Dataset three = parse_manifest(fx);
  const auto t = compute_scores_serial(three, ScoreSpec::parse_list("waic,llr:1,lra"), {});
  const std::map<std::string, std::array<double, 3>> want = {
      {"a", {-11.0, 30.0, 2.0}}, {"b", {-4.0, 0.0, 2.0}}, {"c", {-6.5, 0.5, 0.25}}};
  bool exact = true;
  for (const auto& [id, w] : want)
    exact = exact && t.column("waic").values.at(id) == w[0] && t.column("llr:1").values.at(id) == w[1] &&
            t.column("lra").values.at(id) == w[2];
  return {lik < 0.5 && ic > lik && exact,
          fmt("AUROC likelihood %.4f, ic %.4f; waic/llr/lra hand arithmetic %s", lik, ic, exact ? "exact" : "MISMATCH")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // <= 0: no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "metrics oracle equivalence", 10, metrics_oracles},
      {2, "pPCA single-modal", 5, ppca_single_modal},
      {3, "pPCA multi-modal", 10, ppca_multi_modal},
      {4, "toy end-to-end direction I", 300, toy_direction_one},
      {5, "DEC construction", 120, dec_construction},
      {6, "resultant additivity", 0, resultant_additivity},
      {7, "gradient correctness", 30, gradient_check},
      {8, "EM monotonicity", 30, em_monotonicity},
      {9, "non-reproducibility statement", 0, non_reproducibility},
      {10, "ingestion plumbing", 5, ingestion},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_s <= 0 || secs < c.budget_s;
    const bool pass = out.pass && in_time;
    failed += !pass;
    std::printf("%s [%2d] %s: %s (%.2fs%s)\n", pass ? "PASS" : "FAIL", c.id, c.name, out.detail.c_str(), secs,
                in_time ? "" : fmt(", over %.0fs budget", c.budget_s).c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
