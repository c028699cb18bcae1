#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace uood {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Multivariate normal with a cached Cholesky factor.
class Gaussian {
 public:
  Gaussian() = default;
  /// Throws NumericError if `cov` is not SPD.
  Gaussian(Vec mean, Mat cov);

  const Vec& mean() const { return mean_; }
  const Mat& cov() const { return cov_; }
  const Mat& chol() const { return lower_; }
  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }

  double log_density(const Eigen::Ref<const Vec>& z) const;
  /// Unit-normal `eps` mapped to a draw: mean + L eps.
  Vec transform(const Eigen::Ref<const Vec>& eps) const { return mean_ + lower_ * eps; }

 private:
  Vec mean_;
  Mat cov_;
  Mat lower_;
  double log_norm_ = 0;  // -d/2 log 2pi - 1/2 log det
};

struct FitMeta {
  std::size_t n_points = 0;
  double final_loglik = 0;  // mean per-point log-likelihood of the returned fit
  std::size_t iterations = 0;
  std::size_t restarts = 0;
  std::vector<double> loglik_trace;  // mean per-point log-likelihood before each M-step (EM only)
};

struct FullGaussianModel {
  Gaussian g;
};

struct GmmModel {
  std::vector<double> weights;
  std::vector<Gaussian> components;
};

/// Fitted density over latent space: q_id_hat(z).
struct DensityModel {
  std::variant<FullGaussianModel, GmmModel> variant;
  FitMeta fit_meta;

  std::size_t dim() const;
  bool is_gmm() const { return std::holds_alternative<GmmModel>(variant); }
  static DensityModel gaussian(Vec mean, Mat cov);
  static DensityModel standard_normal(std::size_t d);
};

/// Biased (1/n) MLE. Regularizes with eps*I (eps = 1e-9 * trace/d, escalating) if Cholesky fails.
DensityModel fit_full_gaussian(const Mat& latents);

struct GmmOptions {
  std::size_t k = 2;
  std::uint64_t seed = 0;
  std::size_t max_iter = 200;
  double tol = 1e-7;              // on mean per-point log-likelihood improvement
  double cov_floor = 1e-8;        // min eigenvalue below which a component counts as collapsed
  std::size_t max_restarts = 5;
};

/// EM from k-means++ seeding. Restarts with a derived seed when a component collapses.
DensityModel fit_gmm(const Mat& latents, const GmmOptions& opt);

double log_density(const DensityModel& model, const Eigen::Ref<const Vec>& z);

/// n x d draws, deterministic given seed. n must be >= 1.
Mat sample(const DensityModel& model, std::size_t n, std::uint64_t seed);

/// Single JSON line: {"variant": "full_gaussian"|"gmm", ...}
void save_density(const DensityModel& model, std::ostream& out);
DensityModel load_density(std::istream& in);
void save_density(const DensityModel& model, const std::string& path);
DensityModel load_density(const std::string& path);

}  // namespace uood
