#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace uood::ppca {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Gaussian mixture with explicit parameters; used both for data and for latent densities.
struct MixtureSpec {
  std::vector<double> weights;
  std::vector<Vec> means;
  std::vector<Mat> covariances;

  std::size_t dim() const { return static_cast<std::size_t>(means.front().size()); }
  void validate() const;
  double log_density(const Eigen::Ref<const Vec>& x) const;
  /// Uncentered second moment sum_k pi_k (Sigma_k + mu_k mu_k^T).
  Mat second_moment() const;

  static MixtureSpec gaussian(Vec mean, Mat cov);
  /// N(0, I) in 2-D.
  static MixtureSpec single_modal();
  /// 1/2 N((3,3), I) + 1/2 N((-3,-3), I).
  static MixtureSpec multi_modal();
};

/// n draws per component, concatenated in component order.
Mat gen_mixture(const MixtureSpec& spec, std::size_t n_per_component, std::uint64_t seed);

/// (1/N) sum x x^T, the statistic the decoder MLE is built from (F = 0).
Mat sample_second_moment(const Mat& x);

/// Linear VAE p(x|z) = N(Ez, sigma2 I), q(z|x) = N(Ax, C), F = B = 0.
struct PpcaSolution {
  double sigma2 = 1;
  Mat E;  // d x q
  Mat A;  // q x d
  Mat C;  // q x q
  std::size_t d() const { return static_cast<std::size_t>(E.rows()); }
  std::size_t q() const { return static_cast<std::size_t>(E.cols()); }
};

struct PpcaFit {
  double sigma2;
  Mat E;
};

/// Decoder MLE: sigma2 = mean of the d-q smallest eigenvalues, E = U_q (Lambda_q - sigma2)^{1/2}.
/// Negative Lambda_q - sigma2 entries clamp to 0; for q = 1 the first nonzero entry of E is made positive.
PpcaFit ppca_fit(const Mat& second_moment, std::size_t q);

struct LinearPosterior {
  Mat A;
  Vec B;
  Mat C;
};

/// A = (I + E^T E / sigma2)^{-1} E^T / sigma2, B = 0, C = (I + E^T E / sigma2)^{-1}.
LinearPosterior linear_posterior(const PpcaFit& fit);

/// ppca_fit followed by linear_posterior.
PpcaSolution solve(const Mat& second_moment, std::size_t q);

/// q(z) = sum_k pi_k N(A mu_k, A Sigma_k A^T + C).
MixtureSpec aggregated_posterior(const PpcaSolution& sol, const MixtureSpec& data);

/// log N(x | 0, E E^T + sigma2 I).
double marginal_density(const PpcaSolution& sol, const Eigen::Ref<const Vec>& x);

/// E_{q(z|x)}[log p(x|z)], closed form.
double expected_recon(const PpcaSolution& sol, const Eigen::Ref<const Vec>& x);

/// ELBO with a latent prior given as a mixture. Single-Gaussian priors use the analytic KL;
/// mixtures need q = 1 and use trapezoid quadrature.
double linear_elbo(const PpcaSolution& sol, const Eigen::Ref<const Vec>& x, const MixtureSpec& prior);

struct QuadratureGrid {
  double lo, hi;
  std::size_t points = 20001;
};

/// Trapezoid rule for a 1-D integrand.
double trapezoid(const std::function<double(double)>& f, const QuadratureGrid& grid);

/// KL(p || q) between two 1-D densities by trapezoid quadrature over a range covering
/// +-10 standard deviations of every component of p.
double kl_quadrature_1d(const MixtureSpec& p, const MixtureSpec& q, std::size_t points = 20001);

/// Local maxima of a 1-D density on [lo, hi], refined by golden-section search.
std::vector<double> find_modes_1d(const MixtureSpec& density, double lo, double hi, std::size_t grid = 4001);

struct GridRow {
  double x1, x2;
  double marginal;    // log p_hat(x)
  double elbo_prior;  // ELBO with N(0, I) prior
  double elbo_qz;     // ELBO with the aggregated posterior as prior (q = 1)
};

/// Square grid evaluation (2-D data), row-major over x2 then x1.
std::vector<GridRow> evaluate_grid_serial(const PpcaSolution& sol, const MixtureSpec& qz, double lo, double hi,
                                          std::size_t n);
std::vector<GridRow> evaluate_grid_parallel(const PpcaSolution& sol, const MixtureSpec& qz, double lo, double hi,
                                            std::size_t n);

}  // namespace uood::ppca
