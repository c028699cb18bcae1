#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uood/manifest.hpp"
#include "uood/tensor.hpp"

namespace uood {

/// Per-channel SVD of an image, reused across truncation ranks.
class SvdImage {
 public:
  explicit SvdImage(const Tensor& img);

  std::size_t max_rank() const { return max_rank_; }
  /// Mean absolute error per pixel per channel of the rank-n reconstruction, 1 <= n <= max_rank.
  double error(std::size_t n) const;
  /// error(1..n_max), built incrementally from rank-1 updates.
  std::vector<double> error_curve(std::size_t n_max) const;

 private:
  struct Channel {
    Eigen::MatrixXd pixels;
    Eigen::MatrixXd u;
    Eigen::VectorXd s;
    Eigen::MatrixXd v;
  };
  std::vector<Channel> channels_;
  std::size_t max_rank_ = 0;
};

double svd_recon_error(const Tensor& img, std::size_t n);

struct CompressorProfile {
  std::size_t n_id_max = 1;
  std::size_t n_id = 1;
  double epsilon = 0;  // mean ID reconstruction error at n_id
  double tau = 1e-4;
  std::size_t channels = 1, height = 0, width = 0;
  std::vector<double> error_curve;  // mean ID error e(1..min(H,W))
};

struct CalibrationOptions {
  double tau = 1e-4;
  std::size_t max_images = 512;
  std::uint64_t seed = 0;
  std::optional<std::size_t> n_id;  // overrides floor(n_id_max / 2)
};

/// n_id_max = smallest n with |e(k) - e(k+1)| < tau for every k >= n (fallback min(H, W)).
CompressorProfile calibrate_profile(std::span<const Tensor> id_images, const CalibrationOptions& opt = {});

/// Mean ID error curve over a seeded subsample; the kernel behind calibrate_profile.
std::vector<double> mean_error_curve_serial(std::span<const Tensor* const> images, std::size_t n_max);
std::vector<double> mean_error_curve_parallel(std::span<const Tensor* const> images, std::size_t n_max);

struct ComplexityOptions {
  bool binary_search = true;
  /// Evaluate the whole curve and fall back to the linear scan if it is not non-increasing.
  bool verify_monotone = false;
};

struct RankSearch {
  std::size_t n_i = 0;
  bool linear_fallback = false;
};

/// Smallest n in [1, n_id_max] with error(n) <= epsilon, else n_id_max.
RankSearch find_rank(const SvdImage& svd, const CompressorProfile& profile, const ComplexityOptions& opt = {});

/// Piecewise penalty: n_i/n_id below n_id, (n_id - (n_i - n_id))/n_id at or above.
double complexity_from_rank(std::size_t n_i, std::size_t n_id);

/// C(x) for an image under a calibrated profile.
double complexity(const Tensor& img, const CompressorProfile& profile, const ComplexityOptions& opt = {});

/// Same penalty with compressed sizes in place of ranks.
double bits_complexity(double bits, double bits_id);

std::vector<double> complexity_serial(std::span<const Tensor* const> images, const CompressorProfile& profile,
                                      const ComplexityOptions& opt = {});
std::vector<double> complexity_parallel(std::span<const Tensor* const> images, const CompressorProfile& profile,
                                        const ComplexityOptions& opt = {});

struct DecScale {
  double scale = 0;  // nats per unit complexity
  double mean_php_id = 0;
  double mean_c_id = 0;
  bool negative = false;  // mean PHP was positive; scale applied as-is
};

/// scale = -mean(php) / mean(c). Throws if mean(c) <= 0.
DecScale dec_scale(std::span<const double> php_id_train, std::span<const double> c_id_train);

/// likelihood(rec) + c * scale
double dec_score(const SampleRecord& rec, double c, const DecScale& scale);

enum class ComplexitySource { Svd, Bits };

/// Everything `score --score dec` needs, as written by `calibrate-dec`.
struct DecCalibration {
  ComplexitySource source = ComplexitySource::Svd;
  std::optional<CompressorProfile> profile;  // Svd source
  std::optional<double> bits_id;             // Bits source
  DecScale scale;
};

/// C(x) for a record under either source; loads the tensor for the SVD source.
double record_complexity(const Dataset& ds, const SampleRecord& rec, const DecCalibration& cal,
                         const ComplexityOptions& opt = {});

void save_calibration(const DecCalibration& cal, std::ostream& out);
DecCalibration load_calibration(std::istream& in);
void save_calibration(const DecCalibration& cal, const std::string& path);
DecCalibration load_calibration(const std::string& path);

}  // namespace uood
