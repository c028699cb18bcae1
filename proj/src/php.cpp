#include "uood/php.hpp"

#include <cmath>

#include "uood/error.hpp"
#include "uood/rng.hpp"

namespace uood {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

double gaussian_kl_to_standard(std::span<const double> mu, std::span<const double> logvar) {
  double kl = 0;
  for (std::size_t i = 0; i < mu.size(); ++i) kl += mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i];
  return 0.5 * kl;
}

KlEstimate mc_kl(std::span<const double> mu, std::span<const double> logvar, const DensityModel& model,
                 const PhpConfig& cfg) {
  const std::size_t d = mu.size();
  if (logvar.size() != d) throw ValidationError("mu and logvar lengths differ");
  if (model.dim() != d)
    throw ValidationError("dimension mismatch: posterior has d=" + std::to_string(d) + ", density has d=" +
                          std::to_string(model.dim()));
  if (cfg.n_mc < 1) throw ValidationError("n_mc must be >= 1");

  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec z(static_cast<Eigen::Index>(d));
  double sum = 0, sum_sq = 0;
  for (std::size_t j = 0; j < cfg.n_mc; ++j) {
    // log N(z | mu, diag sigma^2) with z = mu + sigma * eps reduces to a function of eps.
    double log_q = -0.5 * static_cast<double>(d) * kLog2Pi;
    for (std::size_t i = 0; i < d; ++i) {
      const double eps = normal(rng);
      z(static_cast<Eigen::Index>(i)) = mu[i] + std::exp(0.5 * logvar[i]) * eps;
      log_q -= 0.5 * (logvar[i] + eps * eps);
    }
    const double term = log_q - log_density(model, z);
    sum += term;
    sum_sq += term * term;
  }
  const double n = static_cast<double>(cfg.n_mc);
  const double mean = sum / n;
  const double var = cfg.n_mc > 1 ? std::max(0.0, (sum_sq - n * mean * mean) / (n - 1)) : 0.0;
  return {mean, std::sqrt(var / n)};
}

PhpConfig record_config(const PhpConfig& cfg, const SampleRecord& rec) {
  return {cfg.n_mc, derive_seed(cfg.seed, rec.sample_id)};
}

double php_score(const SampleRecord& rec, const DensityModel& model, const PhpConfig& cfg) {
  return rec.recon_loglik - mc_kl(rec.mu, rec.logvar, model, record_config(cfg, rec)).value;
}

DensityModel fit_id_prior(const Dataset& ds, DensityFamily family, std::size_t k, std::uint64_t seed) {
  const auto train = ds.select(Split::id_train());
  if (train.empty()) throw ValidationError("fit_id_prior: dataset has no id_train records");
  const auto d = static_cast<Eigen::Index>(train.front()->mu.size());
  Mat z(static_cast<Eigen::Index>(train.size()), d);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t r = 0; r < train.size(); ++r) {
    const auto& rec = *train[r];
    Rng rng(derive_seed(seed, rec.sample_id));
    for (Eigen::Index i = 0; i < d; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      z(static_cast<Eigen::Index>(r), i) = rec.mu[ui] + std::exp(0.5 * rec.logvar[ui]) * normal(rng);
    }
  }
  switch (family) {
    case DensityFamily::FullGaussian: return fit_full_gaussian(z);
    case DensityFamily::Gmm: {
      GmmOptions opt;
      opt.k = k;
      opt.seed = seed;
      return fit_gmm(z, opt);
    }
  }
  throw ValidationError("unknown density family");
}

std::vector<double> php_scores_serial(std::span<const SampleRecord* const> recs, const DensityModel& model,
                                      const PhpConfig& cfg) {
  std::vector<double> out(recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) out[i] = php_score(*recs[i], model, cfg);
  return out;
}

std::vector<double> php_scores_parallel(std::span<const SampleRecord* const> recs, const DensityModel& model,
                                        const PhpConfig& cfg) {
  std::vector<double> out(recs.size());
  const auto n = static_cast<std::ptrdiff_t>(recs.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = php_score(*recs[static_cast<std::size_t>(i)], model, cfg);
    } catch (...) {
#pragma omp critical(uood_php_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace uood
