#include "uood/toy_vae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "uood/error.hpp"
#include "uood/rng.hpp"

namespace uood::toy {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void affine(const double* theta, const LayerShape& l, const double* in, double* out) {
  const double* w = theta + l.offset;
  const double* b = theta + l.bias_offset();
  for (std::size_t r = 0; r < l.out; ++r) {
    double acc = b[r];
    for (std::size_t c = 0; c < l.in; ++c) acc += w[r * l.in + c] * in[c];
    out[r] = acc;
  }
}

// Adds dL/dW, dL/db into grad and writes dL/din (if din non-null).
void affine_backward(const double* theta, const LayerShape& l, const double* in, const double* dout, double* grad,
                     double* din) {
  const double* w = theta + l.offset;
  double* gw = grad + l.offset;
  double* gb = grad + l.bias_offset();
  for (std::size_t r = 0; r < l.out; ++r) {
    gb[r] += dout[r];
    for (std::size_t c = 0; c < l.in; ++c) gw[r * l.in + c] += dout[r] * in[c];
  }
  if (!din) return;
  for (std::size_t c = 0; c < l.in; ++c) {
    double acc = 0;
    for (std::size_t r = 0; r < l.out; ++r) acc += w[r * l.in + c] * dout[r];
    din[c] = acc;
  }
}

inline double leaky(double a) { return a > 0 ? a : kLeakySlope * a; }
inline double leaky_grad(double a) { return a > 0 ? 1.0 : kLeakySlope; }
inline bool inside_clamp(double v) { return v > kLogvarMin && v < kLogvarMax; }

}  // namespace

std::array<LayerShape, 6> ToyVaeParams::layers() const {
  const std::size_t dz = latent_dim;
  const std::array<std::pair<std::size_t, std::size_t>, 6> dims = {{{kHidden, kDataDim},
                                                                    {kHidden, kHidden},
                                                                    {2 * dz, kHidden},
                                                                    {kHidden, dz},
                                                                    {kHidden, kHidden},
                                                                    {2 * kDataDim, kHidden}}};
  std::array<LayerShape, 6> out{};
  std::size_t off = 0;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    out[i] = {dims[i].first, dims[i].second, off};
    off = out[i].end();
  }
  return out;
}

std::size_t ToyVaeParams::parameter_count(std::size_t latent_dim) {
  ToyVaeParams p;
  p.latent_dim = latent_dim;
  return p.layers().back().end();
}

ToyVaeParams init(std::uint64_t seed, std::size_t latent_dim) {
  if (latent_dim < 1) throw ValidationError("latent_dim must be >= 1");
  ToyVaeParams p;
  p.latent_dim = latent_dim;
  p.theta.assign(ToyVaeParams::parameter_count(latent_dim), 0.0);
  Rng rng(seed);
  for (const auto& l : p.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < l.weight_count(); ++i) p.theta[l.offset + i] = u(rng);
  }
  return p;
}

double kl_standard_normal(std::span<const double> mu, std::span<const double> logvar) {
  double kl = 0;
  for (std::size_t i = 0; i < mu.size(); ++i) kl += mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i];
  return 0.5 * kl;
}

ForwardResult elbo_with_noise(const ToyVaeParams& p, std::span<const double> x, std::span<const double> eps,
                              std::span<double> grad) {
  const std::size_t dz = p.latent_dim;
  if (x.size() != kDataDim) throw ValidationError("toy VAE input must be 2-D");
  if (eps.size() != dz) throw ValidationError("noise length must equal latent_dim");
  if (!grad.empty() && grad.size() != p.theta.size()) throw ValidationError("gradient buffer has wrong size");
  const auto L = p.layers();
  const double* th = p.theta.data();

  double a1[kHidden], h1[kHidden], a2[kHidden], h2[kHidden];
  std::vector<double> o(2 * dz), z(dz);
  double c1[kHidden], g1[kHidden], c2[kHidden], g2[kHidden], out[2 * kDataDim];

  affine(th, L[0], x.data(), a1);
  for (std::size_t i = 0; i < kHidden; ++i) h1[i] = leaky(a1[i]);
  affine(th, L[1], h1, a2);
  for (std::size_t i = 0; i < kHidden; ++i) h2[i] = leaky(a2[i]);
  affine(th, L[2], h2, o.data());

  ForwardResult r;
  r.mu.assign(o.begin(), o.begin() + static_cast<std::ptrdiff_t>(dz));
  r.logvar.resize(dz);
  std::vector<double> sd(dz);
  for (std::size_t i = 0; i < dz; ++i) {
    r.logvar[i] = std::clamp(o[dz + i], kLogvarMin, kLogvarMax);
    sd[i] = std::exp(0.5 * r.logvar[i]);
    z[i] = r.mu[i] + sd[i] * eps[i];
  }

  affine(th, L[3], z.data(), c1);
  for (std::size_t i = 0; i < kHidden; ++i) g1[i] = leaky(c1[i]);
  affine(th, L[4], g1, c2);
  for (std::size_t i = 0; i < kHidden; ++i) g2[i] = leaky(c2[i]);
  affine(th, L[5], g2, out);

  double lvx[kDataDim], inv_var[kDataDim];
  double recon = 0;
  for (std::size_t i = 0; i < kDataDim; ++i) {
    lvx[i] = std::clamp(out[kDataDim + i], kLogvarMin, kLogvarMax);
    inv_var[i] = std::exp(-lvx[i]);
    const double diff = x[i] - out[i];
    recon -= 0.5 * (kLog2Pi + lvx[i] + diff * diff * inv_var[i]);
  }
  r.recon_loglik = recon;
  r.kl_prior = kl_standard_normal(r.mu, r.logvar);
  r.elbo = r.recon_loglik - r.kl_prior;
  r.z = z;
  if (grad.empty()) return r;

  double* gr = grad.data();
  double dout[2 * kDataDim];
  for (std::size_t i = 0; i < kDataDim; ++i) {
    const double diff = x[i] - out[i];
    dout[i] = diff * inv_var[i];
    dout[kDataDim + i] = inside_clamp(out[kDataDim + i]) ? 0.5 * (diff * diff * inv_var[i] - 1.0) : 0.0;
  }
  double dg2[kHidden], dg1[kHidden];
  std::vector<double> dz_vec(dz);
  affine_backward(th, L[5], g2, dout, gr, dg2);
  for (std::size_t i = 0; i < kHidden; ++i) dg2[i] *= leaky_grad(c2[i]);
  affine_backward(th, L[4], g1, dg2, gr, dg1);
  for (std::size_t i = 0; i < kHidden; ++i) dg1[i] *= leaky_grad(c1[i]);
  affine_backward(th, L[3], z.data(), dg1, gr, dz_vec.data());

  std::vector<double> dlo(2 * dz);
  for (std::size_t i = 0; i < dz; ++i) {
    dlo[i] = dz_vec[i] - r.mu[i];
    const double dlv = dz_vec[i] * eps[i] * 0.5 * sd[i] - 0.5 * (std::exp(r.logvar[i]) - 1.0);
    dlo[dz + i] = inside_clamp(o[dz + i]) ? dlv : 0.0;
  }
  double dh2[kHidden], dh1[kHidden];
  affine_backward(th, L[2], h2, dlo.data(), gr, dh2);
  for (std::size_t i = 0; i < kHidden; ++i) dh2[i] *= leaky_grad(a2[i]);
  affine_backward(th, L[1], h1, dh2, gr, dh1);
  for (std::size_t i = 0; i < kHidden; ++i) dh1[i] *= leaky_grad(a1[i]);
  affine_backward(th, L[0], x.data(), dh1, gr, nullptr);
  return r;
}

ForwardResult elbo_forward(const ToyVaeParams& p, std::span<const double> x, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> eps(p.latent_dim);
  for (auto& e : eps) e = normal(rng);
  return elbo_with_noise(p, x, eps);
}

TrainResult train(const ToyVaeParams& params, const Eigen::MatrixXd& data, const TrainConfig& cfg) {
  if (!(cfg.lr >= 0)) throw ValidationError("learning rate must be non-negative");
  if (data.cols() != static_cast<Eigen::Index>(kDataDim)) throw ValidationError("training data must be n x 2");
  const auto n = static_cast<std::size_t>(data.rows());
  if (cfg.batch_size < 1 || n < cfg.batch_size) throw ValidationError("need n >= batch_size >= 1");

  TrainResult res{params, {}};
  auto& theta = res.params.theta;
  const std::size_t dz = params.latent_dim;
  std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0), g(theta.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> eps(dz);
  double x[kDataDim];
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + cfg.batch_size <= n; start += cfg.batch_size) {
      std::fill(g.begin(), g.end(), 0.0);
      double batch_elbo = 0;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const auto row = static_cast<Eigen::Index>(order[start + b]);
        x[0] = data(row, 0);
        x[1] = data(row, 1);
        for (auto& e : eps) e = normal(rng);
        batch_elbo += elbo_with_noise(res.params, x, eps, g).elbo;
      }
      const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
      batch_elbo *= inv_b;
      ++step;
      if (!std::isfinite(batch_elbo)) throw NumericError("non-finite ELBO at training step " + std::to_string(step));
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double gi = g[i] * inv_b;
        m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * gi;
        v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * gi * gi;
        theta[i] += cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
      }
      epoch_sum += batch_elbo;
      ++batches;
    }
    res.epoch_elbo.push_back(epoch_sum / static_cast<double>(batches));
  }
  return res;
}

double mean_elbo(const ToyVaeParams& p, const Eigen::MatrixXd& data, std::uint64_t seed) {
  double sum = 0;
  double x[kDataDim];
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    x[0] = data(i, 0);
    x[1] = data(i, 1);
    sum += elbo_forward(p, x, derive_seed(seed, static_cast<std::uint64_t>(i))).elbo;
  }
  return sum / static_cast<double>(data.rows());
}

double grad_check(const ToyVaeParams& p, std::span<const double> x, std::span<const double> eps, double step,
                  double floor) {
  std::vector<double> analytic(p.theta.size(), 0.0);
  elbo_with_noise(p, x, eps, analytic);
  ToyVaeParams probe = p;
  double worst = 0;
  for (std::size_t i = 0; i < p.theta.size(); ++i) {
    probe.theta[i] = p.theta[i] + step;
    const double up = elbo_with_noise(probe, x, eps).elbo;
    probe.theta[i] = p.theta[i] - step;
    const double down = elbo_with_noise(probe, x, eps).elbo;
    probe.theta[i] = p.theta[i];
    const double numeric = (up - down) / (2 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

void append_encoded(Dataset& ds, const ToyVaeParams& p, const Eigen::MatrixXd& data, const Split& split,
                    const std::string& id_prefix, std::uint64_t seed) {
  if (data.cols() != static_cast<Eigen::Index>(kDataDim)) throw ValidationError("points must be n x 2");
  const auto n = static_cast<std::size_t>(data.rows());
  const std::size_t width = std::max<std::size_t>(6, std::to_string(n).size());
  std::vector<SampleRecord> recs(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    auto& rec = recs[static_cast<std::size_t>(i)];
    std::string idx = std::to_string(i);
    rec.sample_id = id_prefix + "-" + std::string(width - idx.size(), '0') + idx;
    rec.split = split;
    const double x[kDataDim] = {data(i, 0), data(i, 1)};
    auto fr = elbo_forward(p, x, derive_seed(seed, rec.sample_id));
    rec.recon_loglik = fr.recon_loglik;
    rec.kl_prior = fr.kl_prior;
    rec.mu = std::move(fr.mu);
    rec.logvar = std::move(fr.logvar);
  }
  if (ds.records.empty()) ds.latent_dim = p.latent_dim;
  for (auto& r : recs) ds.records.push_back(std::move(r));
}

Dataset encode_dataset(const ToyVaeParams& p, const Eigen::MatrixXd& data, const Split& split,
                       const std::string& id_prefix, std::uint64_t seed) {
  Dataset ds;
  ds.latent_dim = p.latent_dim;
  append_encoded(ds, p, data, split, id_prefix, seed);
  return ds;
}

void save_params(const ToyVaeParams& p, std::ostream& out) {
  out << nlohmann::json{{"model", "toy_vae"}, {"latent_dim", p.latent_dim}, {"theta", p.theta}}.dump() << '\n';
}

ToyVaeParams load_params(std::istream& in) {
  std::string line;
  while (std::getline(in, line) && line.find_first_not_of(" \t\r") == std::string::npos) {
  }
  try {
    const auto j = nlohmann::json::parse(line);
    ToyVaeParams p;
    p.latent_dim = j.at("latent_dim").get<std::size_t>();
    p.theta = j.at("theta").get<std::vector<double>>();
    if (p.theta.size() != ToyVaeParams::parameter_count(p.latent_dim))
      throw ParseError("toy VAE parameter count does not match latent_dim");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad toy VAE params: ") + e.what());
  }
}

Eigen::MatrixXd read_points(std::istream& in) {
  std::vector<double> vals;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    double a, b;
    std::string rest;
    if (!(ls >> a >> b) || (ls >> rest)) throw ParseError("expected two reals", line_no);
    if (!std::isfinite(a) || !std::isfinite(b)) throw ParseError("non-finite point", line_no);
    vals.push_back(a);
    vals.push_back(b);
  }
  Eigen::MatrixXd pts(static_cast<Eigen::Index>(vals.size() / 2), 2);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    pts(i, 0) = vals[static_cast<std::size_t>(2 * i)];
    pts(i, 1) = vals[static_cast<std::size_t>(2 * i + 1)];
  }
  return pts;
}

void write_points(const Eigen::MatrixXd& pts, std::ostream& out) {
  char buf[64];
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", pts(i, 0), pts(i, 1));
    out << buf;
  }
}

}  // namespace uood::toy
