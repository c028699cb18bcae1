#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "uood/density.hpp"
#include "uood/manifest.hpp"

namespace uood {

struct PhpConfig {
  std::size_t n_mc = 128;
  std::uint64_t seed = 0;
};

struct KlEstimate {
  double value = 0;      // MC mean
  double std_error = 0;  // sample std / sqrt(n_mc)
};

/// MC estimate of KL(N(mu, diag exp(logvar)) || model) with reparameterized draws seeded by cfg.seed.
KlEstimate mc_kl(std::span<const double> mu, std::span<const double> logvar, const DensityModel& model,
                 const PhpConfig& cfg);

/// Per-record MC stream: derive_seed(cfg.seed, sample_id). Shared by PHP and Resultant.
PhpConfig record_config(const PhpConfig& cfg, const SampleRecord& rec);

/// recon_loglik - KL(q(z|x) || model), MC stream derived from (cfg.seed, sample_id).
double php_score(const SampleRecord& rec, const DensityModel& model, const PhpConfig& cfg);

enum class DensityFamily { FullGaussian, Gmm };

/// One reparameterized draw per id_train record (seed derived per sample_id), then fit.
DensityModel fit_id_prior(const Dataset& ds, DensityFamily family, std::size_t k, std::uint64_t seed);

/// Analytic KL(N(mu, diag exp(logvar)) || N(0, I)).
double gaussian_kl_to_standard(std::span<const double> mu, std::span<const double> logvar);

// Batch kernels. The parallel one splits records across OpenMP threads; results are
// identical to the serial reference because every record owns its RNG stream.
std::vector<double> php_scores_serial(std::span<const SampleRecord* const> recs, const DensityModel& model,
                                      const PhpConfig& cfg);
std::vector<double> php_scores_parallel(std::span<const SampleRecord* const> recs, const DensityModel& model,
                                        const PhpConfig& cfg);

}  // namespace uood
