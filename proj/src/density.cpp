#include "uood/density.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <ostream>

#include <json.hpp>

#include "uood/error.hpp"
#include "uood/rng.hpp"

namespace uood {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2 pi)

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

Gaussian::Gaussian(Vec mean, Mat cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size())
    throw ValidationError("covariance shape does not match mean");
  Eigen::LLT<Mat> llt(cov_);
  if (llt.info() != Eigen::Success) throw NumericError("covariance is not symmetric positive definite");
  lower_ = llt.matrixL();
  const double log_det = 2.0 * lower_.diagonal().array().log().sum();
  log_norm_ = -0.5 * (static_cast<double>(mean_.size()) * kLog2Pi + log_det);
}

double Gaussian::log_density(const Eigen::Ref<const Vec>& z) const {
  if (z.size() != mean_.size())
    throw ValidationError("dimension mismatch: point has " + std::to_string(z.size()) + ", model has " +
                          std::to_string(mean_.size()));
  const Vec w = lower_.triangularView<Eigen::Lower>().solve(z - mean_);
  return log_norm_ - 0.5 * w.squaredNorm();
}

std::size_t DensityModel::dim() const {
  return std::visit(
      [](const auto& m) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, FullGaussianModel>)
          return m.g.dim();
        else
          return m.components.front().dim();
      },
      variant);
}

DensityModel DensityModel::gaussian(Vec mean, Mat cov) {
  return DensityModel{FullGaussianModel{Gaussian(std::move(mean), std::move(cov))}, {}};
}

DensityModel DensityModel::standard_normal(std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  return gaussian(Vec::Zero(n), Mat::Identity(n, n));
}

DensityModel fit_full_gaussian(const Mat& latents) {
  const auto n = latents.rows();
  const auto d = latents.cols();
  if (d < 1) throw ValidationError("latents must have at least one column");
  if (n <= d)
    throw ValidationError("fit_full_gaussian needs n > d (n=" + std::to_string(n) + ", d=" + std::to_string(d) + ")");
  if (!latents.allFinite()) throw ValidationError("latents contain non-finite entries");

  const Vec mean = latents.colwise().mean().transpose();
  const Mat centered = latents.rowwise() - mean.transpose();
  Mat cov = (centered.transpose() * centered) / static_cast<double>(n);

  DensityModel model;
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() == Eigen::Success) {
    model = DensityModel::gaussian(mean, cov);
  } else {
    double eps = 1e-9 * cov.trace() / static_cast<double>(d);
    if (!(eps > 0)) eps = 1e-9;
    bool ok = false;
    for (int attempt = 0; attempt < 12 && !ok; ++attempt, eps *= 10) {
      Mat reg = cov + eps * Mat::Identity(d, d);
      if (Eigen::LLT<Mat>(reg).info() == Eigen::Success) {
        model = DensityModel::gaussian(mean, std::move(reg));
        ok = true;
      }
    }
    if (!ok) throw NumericError("covariance is rank deficient and regularization failed");
  }
  model.fit_meta.n_points = static_cast<std::size_t>(n);
  model.fit_meta.iterations = 1;
  double ll = 0;
  for (Eigen::Index i = 0; i < n; ++i) ll += log_density(model, latents.row(i).transpose());
  model.fit_meta.final_loglik = ll / static_cast<double>(n);
  return model;
}

namespace {

struct EmState {
  std::vector<double> weights;
  std::vector<Vec> means;
  std::vector<Mat> covs;
};

std::vector<Vec> kmeanspp_centers(const Mat& x, std::size_t k, Rng& rng) {
  const auto n = x.rows();
  std::vector<Vec> centers;
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.push_back(x.row(pick(rng)).transpose());
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  while (centers.size() < k) {
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& di = d2[static_cast<std::size_t>(i)];
      di = std::min(di, (x.row(i).transpose() - centers.back()).squaredNorm());
      total += di;
    }
    Eigen::Index chosen = n - 1;
    if (total > 0) {
      double u = unif(rng) * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        u -= d2[static_cast<std::size_t>(i)];
        if (u <= 0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    centers.push_back(x.row(chosen).transpose());
  }
  return centers;
}

bool collapsed(const Mat& cov, double floor) {
  if (!cov.allFinite()) return true;
  Eigen::SelfAdjointEigenSolver<Mat> es(cov, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() < floor;
}

// Mean per-point log-likelihood; fills log-responsibilities (n x k).
double e_step(const Mat& x, const EmState& s, Mat& log_resp) {
  const auto n = x.rows();
  const auto k = static_cast<Eigen::Index>(s.weights.size());
  log_resp.resize(n, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::LLT<Mat> llt(s.covs[static_cast<std::size_t>(c)]);
    const Mat lower = llt.matrixL();
    const double log_det = 2.0 * lower.diagonal().array().log().sum();
    const double log_norm =
        std::log(s.weights[static_cast<std::size_t>(c)]) - 0.5 * (static_cast<double>(x.cols()) * kLog2Pi + log_det);
    const Mat centered = (x.rowwise() - s.means[static_cast<std::size_t>(c)].transpose()).transpose();
    const Mat w = lower.triangularView<Eigen::Lower>().solve(centered);
    log_resp.col(c) = (log_norm - 0.5 * w.colwise().squaredNorm().array()).transpose();
  }
  double total = 0;
  std::vector<double> row(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < k; ++c) row[static_cast<std::size_t>(c)] = log_resp(i, c);
    const double lse = log_sum_exp(row);
    log_resp.row(i).array() -= lse;
    total += lse;
  }
  return total / static_cast<double>(n);
}

// Returns false on collapse.
bool m_step(const Mat& x, const Mat& log_resp, double floor, EmState& s) {
  const auto n = static_cast<double>(x.rows());
  const auto k = log_resp.cols();
  const Mat resp = log_resp.array().exp().matrix();
  for (Eigen::Index c = 0; c < k; ++c) {
    const double nk = resp.col(c).sum();
    if (!(nk > 1e-12 * n)) return false;
    const Vec mean = (x.transpose() * resp.col(c)) / nk;
    const Mat centered = x.rowwise() - mean.transpose();
    const Mat cov = (centered.transpose() * resp.col(c).asDiagonal() * centered) / nk;
    if (collapsed(cov, floor)) return false;
    s.weights[static_cast<std::size_t>(c)] = nk / n;
    s.means[static_cast<std::size_t>(c)] = mean;
    s.covs[static_cast<std::size_t>(c)] = 0.5 * (cov + cov.transpose());
  }
  return true;
}

}  // namespace

DensityModel fit_gmm(const Mat& x, const GmmOptions& opt) {
  if (opt.k < 1) throw ValidationError("fit_gmm needs k >= 1");
  if (static_cast<std::size_t>(x.rows()) < opt.k) throw ValidationError("fit_gmm needs n >= k");
  if (x.cols() < 1) throw ValidationError("latents must have at least one column");
  if (!x.allFinite()) throw ValidationError("latents contain non-finite entries");
  const auto n = x.rows();
  const auto d = x.cols();

  const Vec global_mean = x.colwise().mean().transpose();
  const Mat centered = x.rowwise() - global_mean.transpose();
  Mat global_cov = centered.transpose() * centered / static_cast<double>(n);
  if (collapsed(global_cov, opt.cov_floor)) global_cov += opt.cov_floor * Mat::Identity(d, d);

  for (std::size_t restart = 0; restart <= opt.max_restarts; ++restart) {
    Rng rng(restart == 0 ? opt.seed : derive_seed(opt.seed, restart));
    EmState s;
    s.means = kmeanspp_centers(x, opt.k, rng);
    s.weights.assign(opt.k, 1.0 / static_cast<double>(opt.k));
    s.covs.assign(opt.k, global_cov);

    FitMeta meta;
    meta.n_points = static_cast<std::size_t>(n);
    meta.restarts = restart;
    Mat log_resp;
    bool ok = true;
    for (std::size_t it = 0; it < opt.max_iter; ++it) {
      const double ll = e_step(x, s, log_resp);
      if (!std::isfinite(ll)) {
        ok = false;
        break;
      }
      meta.loglik_trace.push_back(ll);
      if (it > 0 && ll - meta.loglik_trace[it - 1] < opt.tol) break;
      if (!m_step(x, log_resp, opt.cov_floor, s)) {
        ok = false;
        break;
      }
      meta.iterations = it + 1;
    }
    if (!ok) continue;
    if (meta.iterations == opt.max_iter) meta.loglik_trace.push_back(e_step(x, s, log_resp));
    meta.final_loglik = meta.loglik_trace.back();

    GmmModel gmm;
    gmm.weights = s.weights;
    const double wsum = std::accumulate(gmm.weights.begin(), gmm.weights.end(), 0.0);
    for (auto& w : gmm.weights) w /= wsum;
    for (std::size_t c = 0; c < opt.k; ++c) gmm.components.emplace_back(s.means[c], s.covs[c]);
    return DensityModel{std::move(gmm), std::move(meta)};
  }
  throw NumericError("fit_gmm: component collapse persisted after " + std::to_string(opt.max_restarts) +
                     " restarts");
}

double log_density(const DensityModel& model, const Eigen::Ref<const Vec>& z) {
  if (const auto* g = std::get_if<FullGaussianModel>(&model.variant)) return g->g.log_density(z);
  const auto& gmm = std::get<GmmModel>(model.variant);
  std::vector<double> terms(gmm.weights.size());
  for (std::size_t c = 0; c < terms.size(); ++c)
    terms[c] = std::log(gmm.weights[c]) + gmm.components[c].log_density(z);
  return log_sum_exp(terms);
}

Mat sample(const DensityModel& model, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("sample needs n >= 1");
  const auto d = static_cast<Eigen::Index>(model.dim());
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Mat out(static_cast<Eigen::Index>(n), d);
  Vec eps(d);
  for (std::size_t i = 0; i < n; ++i) {
    const Gaussian* g = nullptr;
    if (const auto* fg = std::get_if<FullGaussianModel>(&model.variant)) {
      g = &fg->g;
    } else {
      const auto& gmm = std::get<GmmModel>(model.variant);
      double u = unif(rng);
      std::size_t c = 0;
      while (c + 1 < gmm.weights.size() && u >= gmm.weights[c]) u -= gmm.weights[c++];
      g = &gmm.components[c];
    }
    for (Eigen::Index j = 0; j < d; ++j) eps(j) = normal(rng);
    out.row(static_cast<Eigen::Index>(i)) = g->transform(eps).transpose();
  }
  return out;
}

namespace {

using nlohmann::json;

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const Mat& m) {
  std::vector<double> flat;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
  return flat;
}

Vec json_vec(const json& j, std::size_t d) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != d) throw ParseError("density vector has wrong length");
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(d));
}

Mat json_mat(const json& j, std::size_t d) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != d * d) throw ParseError("density matrix has wrong size");
  Mat m(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < d; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v[i * d + k];
  return m;
}

}  // namespace

void save_density(const DensityModel& model, std::ostream& out) {
  json j;
  j["d"] = model.dim();
  if (const auto* g = std::get_if<FullGaussianModel>(&model.variant)) {
    j["variant"] = "full_gaussian";
    j["mean"] = vec_json(g->g.mean());
    j["covariance"] = mat_json(g->g.cov());
  } else {
    const auto& gmm = std::get<GmmModel>(model.variant);
    j["variant"] = "gmm";
    j["weights"] = gmm.weights;
    j["means"] = json::array();
    j["covariances"] = json::array();
    for (const auto& c : gmm.components) {
      j["means"].push_back(vec_json(c.mean()));
      j["covariances"].push_back(mat_json(c.cov()));
    }
  }
  j["fit_meta"] = {{"n_points", model.fit_meta.n_points},
                   {"final_loglik", model.fit_meta.final_loglik},
                   {"iterations", model.fit_meta.iterations},
                   {"restarts", model.fit_meta.restarts},
                   {"loglik_trace", model.fit_meta.loglik_trace}};
  out << j.dump() << '\n';
}

DensityModel load_density(std::istream& in) {
  std::string line;
  while (std::getline(in, line) && line.find_first_not_of(" \t\r") == std::string::npos) {
  }
  try {
    const json j = json::parse(line);
    const auto d = j.at("d").get<std::size_t>();
    const auto variant = j.at("variant").get<std::string>();
    DensityModel model;
    if (variant == "full_gaussian") {
      model = DensityModel::gaussian(json_vec(j.at("mean"), d), json_mat(j.at("covariance"), d));
    } else if (variant == "gmm") {
      GmmModel gmm;
      gmm.weights = j.at("weights").get<std::vector<double>>();
      const auto& means = j.at("means");
      const auto& covs = j.at("covariances");
      if (means.size() != gmm.weights.size() || covs.size() != gmm.weights.size())
        throw ParseError("gmm component count mismatch");
      for (std::size_t c = 0; c < gmm.weights.size(); ++c)
        gmm.components.emplace_back(json_vec(means[c], d), json_mat(covs[c], d));
      model.variant = std::move(gmm);
    } else {
      throw ParseError("unknown density variant '" + variant + "'");
    }
    if (j.contains("fit_meta")) {
      const auto& m = j.at("fit_meta");
      model.fit_meta.n_points = m.value("n_points", std::size_t{0});
      model.fit_meta.final_loglik = m.value("final_loglik", 0.0);
      model.fit_meta.iterations = m.value("iterations", std::size_t{0});
      model.fit_meta.restarts = m.value("restarts", std::size_t{0});
      model.fit_meta.loglik_trace = m.value("loglik_trace", std::vector<double>{});
    }
    return model;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad density file: ") + e.what());
  }
}

void save_density(const DensityModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write density file " + path);
  save_density(model, out);
}

DensityModel load_density(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open density file " + path);
  return load_density(in);
}

}  // namespace uood
