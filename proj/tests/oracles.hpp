#pragma once

// Independent reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// AUROC by counting every (id, ood) pair.
inline double auroc_pairs(std::span<const double> id, std::span<const double> ood) {
  double wins = 0;
  for (double a : id)
    for (double b : ood) wins += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  return wins / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

/// Average precision by recounting TP/FP from scratch at every distinct threshold.
inline double auprc_sweep(std::span<const double> id, std::span<const double> ood) {
  std::set<double, std::greater<>> thresholds(id.begin(), id.end());
  thresholds.insert(ood.begin(), ood.end());
  double prev_recall = 0, area = 0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (double s : id) tp += s >= t;
    for (double s : ood) fp += s >= t;
    const double recall = tp / static_cast<double>(id.size());
    area += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return area;
}

/// FPR at the largest ID-score threshold reaching the TPR target, by exhaustive scan.
inline double fpr_sweep(std::span<const double> id, std::span<const double> ood, double target) {
  double best = -INFINITY;
  for (double t : id) {
    double tp = 0;
    for (double s : id) tp += s >= t;
    if (tp / static_cast<double>(id.size()) >= target) best = std::max(best, t);
  }
  double fp = 0;
  for (double s : ood) fp += s >= best;
  return fp / static_cast<double>(ood.size());
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns eigenvalues, fills vectors (columns).
inline Eigen::VectorXd jacobi_eigen(Eigen::MatrixXd a, Eigen::MatrixXd& vecs) {
  const auto n = a.rows();
  vecs = Eigen::MatrixXd::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2 * a(p, q));
        const double t = (theta >= 0 ? 1 : -1) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = vecs(k, p), vkq = vecs(k, q);
          vecs(k, p) = c * vkp - s * vkq;
          vecs(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  return a.diagonal();
}

/// Rank-n reconstruction MAE from the eigendecomposition of X^T X (right singular vectors):
/// X_n = X V_n V_n^T.
inline std::vector<double> eig_recon_errors(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd v;
  const Eigen::VectorXd ev = jacobi_eigen(x.transpose() * x, v);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(ev.size()));
  for (Eigen::Index i = 0; i < ev.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ev(a) > ev(b); });
  std::vector<double> errs;
  const auto m = std::min(x.rows(), x.cols());
  for (Eigen::Index n = 1; n <= m; ++n) {
    Eigen::MatrixXd vn(x.cols(), n);
    for (Eigen::Index j = 0; j < n; ++j) vn.col(j) = v.col(order[static_cast<std::size_t>(j)]);
    errs.push_back((x * vn * vn.transpose() - x).cwiseAbs().mean());
  }
  return errs;
}

/// Gaussian log density through the explicit determinant and inverse.
inline double gaussian_logpdf_direct(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                     const Eigen::VectorXd& x) {
  const double d = static_cast<double>(mean.size());
  const Eigen::VectorXd diff = x - mean;
  return -0.5 * (d * std::log(2 * M_PI) + std::log(cov.determinant()) + diff.dot(cov.inverse() * diff));
}

/// Closed-form KL between 1-D Gaussians.
inline double gaussian_kl_1d(double m0, double v0, double m1, double v1) {
  return 0.5 * (v0 / v1 + (m1 - m0) * (m1 - m0) / v1 - 1 + std::log(v1 / v0));
}

/// Toy VAE ELBO in extended precision, re-derived from the layer layout (W row-major, then b).
/// Used for finite differences whose round-off sits far below double-precision gradients.
inline long double toy_elbo_extended(const std::vector<long double>& theta, std::size_t dz,
                                     std::span<const double> x, std::span<const double> eps) {
  const std::size_t shapes[6][2] = {{10, 2}, {10, 10}, {2 * dz, 10}, {10, dz}, {10, 10}, {4, 10}};
  std::size_t off = 0;
  auto layer = [&](int k, const std::vector<long double>& in, bool leaky) {
    const std::size_t out = shapes[k][0], n_in = shapes[k][1];
    std::vector<long double> y(out);
    for (std::size_t r = 0; r < out; ++r) {
      long double acc = theta[off + out * n_in + r];
      for (std::size_t c = 0; c < n_in; ++c) acc += theta[off + r * n_in + c] * in[c];
      y[r] = leaky && acc <= 0 ? 0.01L * acc : acc;
    }
    off += out * n_in + out;
    return y;
  };
  const auto clampv = [](long double v) { return std::clamp(v, -10.0L, 10.0L); };
  auto h = layer(0, {x[0], x[1]}, true);
  h = layer(1, h, true);
  const auto enc = layer(2, h, false);
  std::vector<long double> z(dz);
  long double kl = 0;
  for (std::size_t i = 0; i < dz; ++i) {
    const long double mu = enc[i], lv = clampv(enc[dz + i]);
    z[i] = mu + std::exp(lv / 2) * eps[i];
    kl += 0.5L * (mu * mu + std::exp(lv) - 1 - lv);
  }
  auto g = layer(3, z, true);
  g = layer(4, g, true);
  const auto dec = layer(5, g, false);
  long double recon = 0;
  for (std::size_t i = 0; i < 2; ++i) {
    const long double lv = clampv(dec[2 + i]), diff = x[i] - dec[i];
    recon -= 0.5L * (std::log(2 * 3.14159265358979323846264338327950288L) + lv + diff * diff / std::exp(lv));
  }
  return recon - kl;
}

/// Central-difference gradient of toy_elbo_extended.
inline std::vector<double> toy_fd_gradient(const std::vector<double>& theta, std::size_t dz, std::span<const double> x,
                                           std::span<const double> eps, long double step) {
  std::vector<long double> t(theta.begin(), theta.end());
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const long double base = t[i];
    t[i] = base + step;
    const long double up = toy_elbo_extended(t, dz, x, eps);
    t[i] = base - step;
    const long double down = toy_elbo_extended(t, dz, x, eps);
    t[i] = base;
    g[i] = static_cast<double>((up - down) / (2 * step));
  }
  return g;
}

}  // namespace oracle
