#include "uood/ppca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <limits>
#include <random>

#include "uood/error.hpp"
#include "uood/rng.hpp"

namespace uood::ppca {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double gaussian_log_density(const Vec& mean, const Mat& cov, const Eigen::Ref<const Vec>& x) {
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) throw NumericError("covariance is not positive definite");
  const Mat lower = llt.matrixL();
  const Vec w = lower.triangularView<Eigen::Lower>().solve(x - mean);
  const double log_det = 2.0 * lower.diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(mean.size()) * kLog2Pi + log_det + w.squaredNorm());
}

// KL(N(m0, s0) || N(m1, s1))
double gaussian_kl(const Vec& m0, const Mat& s0, const Vec& m1, const Mat& s1) {
  Eigen::LLT<Mat> l1(s1), l0(s0);
  if (l1.info() != Eigen::Success || l0.info() != Eigen::Success) throw NumericError("KL of non-SPD Gaussians");
  const double logdet1 = 2.0 * Mat(l1.matrixL()).diagonal().array().log().sum();
  const double logdet0 = 2.0 * Mat(l0.matrixL()).diagonal().array().log().sum();
  const Vec diff = m1 - m0;
  const double k = static_cast<double>(m0.size());
  return 0.5 * (l1.solve(s0).trace() + diff.dot(l1.solve(diff)) - k + logdet1 - logdet0);
}

// Scalar view of a 1-D mixture; log_density through Eigen allocates per call, which dominates quadrature cost.
struct Mixture1d {
  std::vector<double> log_w, mean, var;

  explicit Mixture1d(const MixtureSpec& m) {
    for (std::size_t k = 0; k < m.weights.size(); ++k) {
      if (!(m.covariances[k](0, 0) > 0)) throw NumericError("covariance is not positive definite");
      log_w.push_back(std::log(m.weights[k]) - 0.5 * (kLog2Pi + std::log(m.covariances[k](0, 0))));
      mean.push_back(m.means[k](0));
      var.push_back(m.covariances[k](0, 0));
    }
  }
  double operator()(double z) const {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < mean.size(); ++k) top = std::max(top, term(k, z));
    if (!std::isfinite(top)) return top;
    double s = 0;
    for (std::size_t k = 0; k < mean.size(); ++k) s += std::exp(term(k, z) - top);
    return top + std::log(s);
  }
  double term(std::size_t k, double z) const {
    const double d = z - mean[k];
    return log_w[k] - 0.5 * d * d / var[k];
  }
};

}  // namespace

void MixtureSpec::validate() const {
  if (weights.empty() || weights.size() != means.size() || weights.size() != covariances.size())
    throw ValidationError("mixture needs matching non-empty weights, means and covariances");
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-12) throw ValidationError("mixture weights must sum to 1");
  for (std::size_t k = 0; k < means.size(); ++k) {
    if (weights[k] < 0) throw ValidationError("negative mixture weight");
    if (means[k].size() != means[0].size() || covariances[k].rows() != means[0].size() ||
        covariances[k].cols() != means[0].size())
      throw ValidationError("mixture component dimensions disagree");
    if (Eigen::LLT<Mat>(covariances[k]).info() != Eigen::Success)
      throw ValidationError("mixture covariance is not SPD");
  }
}

double MixtureSpec::log_density(const Eigen::Ref<const Vec>& x) const {
  std::vector<double> terms(weights.size());
  for (std::size_t k = 0; k < weights.size(); ++k)
    terms[k] = std::log(weights[k]) + gaussian_log_density(means[k], covariances[k], x);
  const double m = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

Mat MixtureSpec::second_moment() const {
  const auto d = static_cast<Eigen::Index>(dim());
  Mat m = Mat::Zero(d, d);
  for (std::size_t k = 0; k < weights.size(); ++k)
    m += weights[k] * (covariances[k] + means[k] * means[k].transpose());
  return m;
}

MixtureSpec MixtureSpec::gaussian(Vec mean, Mat cov) { return {{1.0}, {std::move(mean)}, {std::move(cov)}}; }

MixtureSpec MixtureSpec::single_modal() { return gaussian(Vec::Zero(2), Mat::Identity(2, 2)); }

MixtureSpec MixtureSpec::multi_modal() {
  return {{0.5, 0.5}, {Vec::Constant(2, 3.0), Vec::Constant(2, -3.0)}, {Mat::Identity(2, 2), Mat::Identity(2, 2)}};
}

Mat gen_mixture(const MixtureSpec& spec, std::size_t n_per_component, std::uint64_t seed) {
  spec.validate();
  if (n_per_component < 1) throw ValidationError("gen_mixture needs n >= 1");
  const auto d = static_cast<Eigen::Index>(spec.dim());
  Mat out(static_cast<Eigen::Index>(n_per_component * spec.weights.size()), d);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec eps(d);
  Eigen::Index row = 0;
  for (std::size_t k = 0; k < spec.weights.size(); ++k) {
    const Mat lower = Eigen::LLT<Mat>(spec.covariances[k]).matrixL();
    for (std::size_t i = 0; i < n_per_component; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) eps(j) = normal(rng);
      out.row(row++) = (spec.means[k] + lower * eps).transpose();
    }
  }
  return out;
}

Mat sample_second_moment(const Mat& x) { return x.transpose() * x / static_cast<double>(x.rows()); }

PpcaFit ppca_fit(const Mat& s, std::size_t q) {
  const auto d = static_cast<std::size_t>(s.rows());
  if (s.rows() != s.cols()) throw ValidationError("ppca_fit needs a square matrix");
  if (q < 1 || q >= d) throw ValidationError("ppca_fit needs 1 <= q < d");
  if (!s.allFinite() || (s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, s.cwiseAbs().maxCoeff()))
    throw NumericError("ppca_fit input is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(s);
  const Vec& lambda = es.eigenvalues();  // ascending
  if (lambda(0) <= 0) throw NumericError("ppca_fit input is not positive definite");
  const auto dq = static_cast<Eigen::Index>(d - q);
  PpcaFit fit;
  fit.sigma2 = lambda.head(dq).mean();
  fit.E.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(q));
  for (std::size_t j = 0; j < q; ++j) {
    const auto src = static_cast<Eigen::Index>(d - 1 - j);  // j-th largest
    const double scale = std::sqrt(std::max(lambda(src) - fit.sigma2, 0.0));
    Vec u = es.eigenvectors().col(src);
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      if (std::abs(u(i)) > 1e-12) {
        if (u(i) < 0) u = -u;
        break;
      }
    }
    fit.E.col(static_cast<Eigen::Index>(j)) = u * scale;
  }
  return fit;
}

LinearPosterior linear_posterior(const PpcaFit& fit) {
  const auto q = fit.E.cols();
  const Mat m = Mat::Identity(q, q) + fit.E.transpose() * fit.E / fit.sigma2;
  const Mat m_inv = m.inverse();
  LinearPosterior post;
  post.A = m_inv * fit.E.transpose() / fit.sigma2;
  post.B = Vec::Zero(q);
  post.C = m_inv.transpose();
  return post;
}

PpcaSolution solve(const Mat& second_moment, std::size_t q) {
  auto fit = ppca_fit(second_moment, q);
  auto post = linear_posterior(fit);
  return {fit.sigma2, std::move(fit.E), std::move(post.A), std::move(post.C)};
}

MixtureSpec aggregated_posterior(const PpcaSolution& sol, const MixtureSpec& data) {
  data.validate();
  if (data.dim() != sol.d()) throw ValidationError("data dimension does not match the solution");
  MixtureSpec qz;
  qz.weights = data.weights;
  for (std::size_t k = 0; k < data.weights.size(); ++k) {
    qz.means.push_back(sol.A * data.means[k]);
    qz.covariances.push_back(sol.A * data.covariances[k] * sol.A.transpose() + sol.C);
  }
  return qz;
}

double marginal_density(const PpcaSolution& sol, const Eigen::Ref<const Vec>& x) {
  const auto d = static_cast<Eigen::Index>(sol.d());
  const Mat cov = sol.E * sol.E.transpose() + sol.sigma2 * Mat::Identity(d, d);
  return gaussian_log_density(Vec::Zero(d), cov, x);
}

double expected_recon(const PpcaSolution& sol, const Eigen::Ref<const Vec>& x) {
  const double d = static_cast<double>(sol.d());
  const Vec resid = x - sol.E * (sol.A * x);
  const double trace = (sol.E * sol.C * sol.E.transpose()).trace();
  return -0.5 * d * std::log(2.0 * M_PI * sol.sigma2) - (resid.squaredNorm() + trace) / (2.0 * sol.sigma2);
}

double linear_elbo(const PpcaSolution& sol, const Eigen::Ref<const Vec>& x, const MixtureSpec& prior) {
  if (prior.dim() != sol.q()) throw ValidationError("prior dimension does not match latent dimension");
  const Vec post_mean = sol.A * x;
  double kl = 0;
  if (prior.weights.size() == 1) {
    kl = gaussian_kl(post_mean, sol.C, prior.means[0], prior.covariances[0]);
  } else {
    if (sol.q() != 1) throw ValidationError("mixture-prior ELBO supports q = 1 only");
    kl = kl_quadrature_1d(MixtureSpec::gaussian(post_mean, sol.C), prior);
  }
  return expected_recon(sol, x) - kl;
}

double trapezoid(const std::function<double(double)>& f, const QuadratureGrid& g) {
  if (g.points < 2 || !(g.hi > g.lo)) throw ValidationError("bad quadrature grid");
  const double h = (g.hi - g.lo) / static_cast<double>(g.points - 1);
  double sum = 0.5 * (f(g.lo) + f(g.hi));
  for (std::size_t i = 1; i + 1 < g.points; ++i) sum += f(g.lo + h * static_cast<double>(i));
  return sum * h;
}

double kl_quadrature_1d(const MixtureSpec& p, const MixtureSpec& q, std::size_t points) {
  if (p.dim() != 1 || q.dim() != 1) throw ValidationError("kl_quadrature_1d needs 1-D densities");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t k = 0; k < p.weights.size(); ++k) {
    const double sd = std::sqrt(p.covariances[k](0, 0));
    lo = std::min(lo, p.means[k](0) - 10 * sd);
    hi = std::max(hi, p.means[k](0) + 10 * sd);
  }
  const Mixture1d lp_of(p), lq_of(q);
  return trapezoid(
      [&](double t) {
        const double lp = lp_of(t);
        return std::exp(lp) * (lp - lq_of(t));
      },
      {lo, hi, points});
}

std::vector<double> find_modes_1d(const MixtureSpec& density, double lo, double hi, std::size_t grid) {
  if (density.dim() != 1) throw ValidationError("find_modes_1d needs a 1-D density");
  Vec z(1);
  const auto f = [&](double t) {
    z(0) = t;
    return density.log_density(z);
  };
  const double h = (hi - lo) / static_cast<double>(grid - 1);
  std::vector<double> vals(grid);
  for (std::size_t i = 0; i < grid; ++i) vals[i] = f(lo + h * static_cast<double>(i));
  std::vector<double> modes;
  const double ratio = (std::sqrt(5.0) - 1) / 2;
  for (std::size_t i = 1; i + 1 < grid; ++i) {
    if (!(vals[i] >= vals[i - 1] && vals[i] > vals[i + 1])) continue;
    double a = lo + h * static_cast<double>(i - 1), b = lo + h * static_cast<double>(i + 1);
    double c = b - ratio * (b - a), d = a + ratio * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > 1e-12) {
      if (fc > fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - ratio * (b - a);
        fc = f(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + ratio * (b - a);
        fd = f(d);
      }
    }
    modes.push_back(0.5 * (a + b));
  }
  return modes;
}

namespace {

GridRow grid_point(const PpcaSolution& sol, const MixtureSpec& std_prior, const MixtureSpec& qz, double x1,
                   double x2) {
  Vec x(2);
  x << x1, x2;
  return {x1, x2, marginal_density(sol, x), linear_elbo(sol, x, std_prior), linear_elbo(sol, x, qz)};
}

void check_grid(const PpcaSolution& sol, const MixtureSpec& qz, std::size_t n) {
  if (sol.d() != 2) throw ValidationError("grid evaluation needs 2-D data");
  if (qz.dim() != sol.q() || (qz.weights.size() > 1 && sol.q() != 1))
    throw ValidationError("grid prior must be 1-D when it is a mixture");
  if (n < 2) throw ValidationError("grid needs at least 2 points per axis");
}

}  // namespace

std::vector<GridRow> evaluate_grid_serial(const PpcaSolution& sol, const MixtureSpec& qz, double lo, double hi,
                                          std::size_t n) {
  check_grid(sol, qz, n);
  const auto prior = MixtureSpec::gaussian(Vec::Zero(static_cast<Eigen::Index>(sol.q())),
                                           Mat::Identity(static_cast<Eigen::Index>(sol.q()), static_cast<Eigen::Index>(sol.q())));
  const double h = (hi - lo) / static_cast<double>(n - 1);
  std::vector<GridRow> rows(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      rows[i * n + j] = grid_point(sol, prior, qz, lo + h * static_cast<double>(j), lo + h * static_cast<double>(i));
  return rows;
}

std::vector<GridRow> evaluate_grid_parallel(const PpcaSolution& sol, const MixtureSpec& qz, double lo, double hi,
                                            std::size_t n) {
  check_grid(sol, qz, n);
  const auto prior = MixtureSpec::gaussian(Vec::Zero(static_cast<Eigen::Index>(sol.q())),
                                           Mat::Identity(static_cast<Eigen::Index>(sol.q()), static_cast<Eigen::Index>(sol.q())));
  const double h = (hi - lo) / static_cast<double>(n - 1);
  std::vector<GridRow> rows(n * n);
  const auto total = static_cast<std::ptrdiff_t>(n * n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t idx = 0; idx < total; ++idx) {
    const auto i = static_cast<std::size_t>(idx) / n;
    const auto j = static_cast<std::size_t>(idx) % n;
    rows[static_cast<std::size_t>(idx)] =
        grid_point(sol, prior, qz, lo + h * static_cast<double>(j), lo + h * static_cast<double>(i));
  }
  return rows;
}

}  // namespace uood::ppca
