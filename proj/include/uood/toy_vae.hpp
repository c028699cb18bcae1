#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uood/manifest.hpp"

namespace uood::toy {

inline constexpr std::size_t kDataDim = 2;
inline constexpr std::size_t kHidden = 10;
inline constexpr double kLeakySlope = 0.01;
inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

/// Affine layer view into the flat parameter vector: W (out x in, row-major) then b (out).
struct LayerShape {
  std::size_t out = 0, in = 0, offset = 0;
  std::size_t weight_count() const { return out * in; }
  std::size_t bias_offset() const { return offset + out * in; }
  std::size_t end() const { return offset + out * in + out; }
};

/// Encoder 2 -> 10 -> 10 -> 2*d_z, decoder d_z -> 10 -> 10 -> 4, LeakyReLU after the first two
/// layers of each. Parameters live in one flat vector so Adam and finite differences see them uniformly.
struct ToyVaeParams {
  std::size_t latent_dim = 2;
  std::vector<double> theta;

  std::array<LayerShape, 6> layers() const;
  static std::size_t parameter_count(std::size_t latent_dim);
  bool operator==(const ToyVaeParams&) const = default;
};

/// Weights ~ U(+-1/sqrt(fan_in)), biases 0.
ToyVaeParams init(std::uint64_t seed, std::size_t latent_dim = 2);

struct ForwardResult {
  double elbo = 0;
  double recon_loglik = 0;
  double kl_prior = 0;
  std::vector<double> mu;
  std::vector<double> logvar;  // clamped to [-10, 10]
  std::vector<double> z;
};

/// ELBO for one point with reparameterization noise `eps` (length d_z). When `grad` is
/// non-null, dELBO/dtheta is added into it.
ForwardResult elbo_with_noise(const ToyVaeParams& p, std::span<const double> x, std::span<const double> eps,
                              std::span<double> grad = {});

/// One reparameterized draw seeded by `seed`.
ForwardResult elbo_forward(const ToyVaeParams& p, std::span<const double> x, std::uint64_t seed);

/// Analytic KL(N(mu, diag exp(logvar)) || N(0, I)).
double kl_standard_normal(std::span<const double> mu, std::span<const double> logvar);

struct TrainConfig {
  double lr = 1e-5;
  std::size_t epochs = 200;
  std::size_t batch_size = 100;
  std::uint64_t seed = 0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
};

struct TrainResult {
  ToyVaeParams params;
  std::vector<double> epoch_elbo;  // mean minibatch ELBO over each epoch
};

/// Adam ascent on mean minibatch ELBO. `data` is n x 2. Throws NumericError naming the step on NaN/Inf.
TrainResult train(const ToyVaeParams& params, const Eigen::MatrixXd& data, const TrainConfig& cfg);

/// Mean single-draw ELBO over `data`, per-point noise derived from `seed`.
double mean_elbo(const ToyVaeParams& p, const Eigen::MatrixXd& data, std::uint64_t seed);

/// Max relative error between analytic and central-difference gradients, noise frozen.
/// Relative error is |a - n| / max(|a|, |n|, floor).
double grad_check(const ToyVaeParams& p, std::span<const double> x, std::span<const double> eps,
                  double step = 1e-5, double floor = 1e-6);

/// One record per row; ids "<prefix>-<index>" zero-padded; per-record seed derived from (seed, id).
Dataset encode_dataset(const ToyVaeParams& p, const Eigen::MatrixXd& data, const Split& split,
                       const std::string& id_prefix, std::uint64_t seed);
/// Concatenates several splits into one Dataset.
void append_encoded(Dataset& ds, const ToyVaeParams& p, const Eigen::MatrixXd& data, const Split& split,
                    const std::string& id_prefix, std::uint64_t seed);

void save_params(const ToyVaeParams& p, std::ostream& out);
ToyVaeParams load_params(std::istream& in);

/// Whitespace-separated "x1 x2" per line.
Eigen::MatrixXd read_points(std::istream& in);
void write_points(const Eigen::MatrixXd& pts, std::ostream& out);

}  // namespace uood::toy
