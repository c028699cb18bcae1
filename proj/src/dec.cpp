#include "uood/dec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "uood/error.hpp"
#include "uood/rng.hpp"

namespace uood {

using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

SvdImage::SvdImage(const Tensor& img) {
  if (img.dims.size() != 2 && img.dims.size() != 3) throw ValidationError("SVD compressor needs a C x H x W tensor");
  const auto h = static_cast<Eigen::Index>(img.height());
  const auto w = static_cast<Eigen::Index>(img.width());
  if (h == 0 || w == 0) throw ValidationError("empty image");
  max_rank_ = static_cast<std::size_t>(std::min(h, w));
  for (std::size_t c = 0; c < img.channels(); ++c) {
    const auto plane = img.channel(c);
    Channel ch;
    ch.pixels = Eigen::Map<const RowMajorF>(plane.data(), h, w).cast<double>();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(ch.pixels, Eigen::ComputeThinU | Eigen::ComputeThinV);
    ch.u = svd.matrixU();
    ch.s = svd.singularValues();
    ch.v = svd.matrixV();
    channels_.push_back(std::move(ch));
  }
}

double SvdImage::error(std::size_t n) const {
  if (n < 1 || n > max_rank_)
    throw ValidationError("rank " + std::to_string(n) + " outside [1, " + std::to_string(max_rank_) + "]");
  const auto k = static_cast<Eigen::Index>(n);
  double total = 0;
  for (const auto& ch : channels_) {
    const Eigen::MatrixXd recon = ch.u.leftCols(k) * ch.s.head(k).asDiagonal() * ch.v.leftCols(k).transpose();
    total += (recon - ch.pixels).cwiseAbs().mean();
  }
  return total / static_cast<double>(channels_.size());
}

std::vector<double> SvdImage::error_curve(std::size_t n_max) const {
  if (n_max < 1 || n_max > max_rank_) throw ValidationError("error_curve rank out of range");
  std::vector<double> curve(n_max, 0.0);
  for (const auto& ch : channels_) {
    Eigen::MatrixXd residual = -ch.pixels;
    for (std::size_t r = 0; r < n_max; ++r) {
      const auto i = static_cast<Eigen::Index>(r);
      residual.noalias() += ch.s(i) * ch.u.col(i) * ch.v.col(i).transpose();
      curve[r] += residual.cwiseAbs().mean();
    }
  }
  for (auto& e : curve) e /= static_cast<double>(channels_.size());
  return curve;
}

double svd_recon_error(const Tensor& img, std::size_t n) { return SvdImage(img).error(n); }

std::vector<double> mean_error_curve_serial(std::span<const Tensor* const> images, std::size_t n_max) {
  std::vector<double> mean(n_max, 0.0);
  for (const auto* img : images) {
    const auto curve = SvdImage(*img).error_curve(n_max);
    for (std::size_t i = 0; i < n_max; ++i) mean[i] += curve[i];
  }
  for (auto& e : mean) e /= static_cast<double>(images.size());
  return mean;
}

std::vector<double> mean_error_curve_parallel(std::span<const Tensor* const> images, std::size_t n_max) {
  // Per-image curves are reduced in image order afterwards so the sum is thread-count independent.
  std::vector<std::vector<double>> curves(images.size());
  const auto n = static_cast<std::ptrdiff_t>(images.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      curves[static_cast<std::size_t>(i)] = SvdImage(*images[static_cast<std::size_t>(i)]).error_curve(n_max);
    } catch (...) {
#pragma omp critical(uood_dec_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<double> mean(n_max, 0.0);
  for (const auto& c : curves)
    for (std::size_t i = 0; i < n_max; ++i) mean[i] += c[i];
  for (auto& e : mean) e /= static_cast<double>(images.size());
  return mean;
}

CompressorProfile calibrate_profile(std::span<const Tensor> id_images, const CalibrationOptions& opt) {
  if (id_images.empty()) throw ValidationError("calibrate_profile needs at least one ID image");
  const auto& first = id_images.front();
  if (first.dims.size() != 2 && first.dims.size() != 3) throw ValidationError("ID images must be C x H x W");
  for (const auto& img : id_images)
    if (img.channels() != first.channels() || img.height() != first.height() || img.width() != first.width())
      throw ValidationError("inconsistent image shapes in calibration set");

  std::vector<std::size_t> order(id_images.size());
  std::iota(order.begin(), order.end(), 0);
  if (order.size() > opt.max_images) {
    Rng rng(opt.seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(opt.max_images);
    std::sort(order.begin(), order.end());
  }
  std::vector<const Tensor*> subset;
  for (auto i : order) subset.push_back(&id_images[i]);

  CompressorProfile p;
  p.tau = opt.tau;
  p.channels = first.channels();
  p.height = first.height();
  p.width = first.width();
  const std::size_t m = std::min(p.height, p.width);
  p.error_curve = mean_error_curve_parallel(subset, m);

  // Walk back from the full rank while consecutive errors stay within tau.
  std::size_t n_max = m;
  while (n_max > 1 && std::abs(p.error_curve[n_max - 2] - p.error_curve[n_max - 1]) < opt.tau) --n_max;
  p.n_id_max = n_max;
  p.n_id = opt.n_id ? *opt.n_id : std::max<std::size_t>(1, n_max / 2);
  if (p.n_id < 1 || p.n_id > p.n_id_max)
    throw ValidationError("n_id " + std::to_string(p.n_id) + " outside [1, n_id_max=" + std::to_string(p.n_id_max) +
                          "]");
  p.epsilon = p.error_curve[p.n_id - 1];
  return p;
}

RankSearch find_rank(const SvdImage& svd, const CompressorProfile& profile, const ComplexityOptions& opt) {
  const std::size_t n_max = std::min(profile.n_id_max, svd.max_rank());
  const double eps = profile.epsilon;
  const auto linear = [&] {
    for (std::size_t n = 1; n <= n_max; ++n)
      if (svd.error(n) <= eps) return n;
    return n_max;
  };
  if (!opt.binary_search) return {linear(), false};
  if (opt.verify_monotone) {
    const auto curve = svd.error_curve(n_max);
    for (std::size_t i = 1; i < curve.size(); ++i)
      if (curve[i] > curve[i - 1]) return {linear(), true};
  }
  if (svd.error(n_max) > eps) return {n_max, false};
  std::size_t lo = 1, hi = n_max;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (svd.error(mid) <= eps)
      hi = mid;
    else
      lo = mid + 1;
  }
  // A passing rank just below the bracket means the curve is not monotone here.
  if (lo > 1 && svd.error(lo - 1) <= eps) return {linear(), true};
  return {lo, false};
}

double complexity_from_rank(std::size_t n_i, std::size_t n_id) {
  const double ni = static_cast<double>(n_i);
  const double nid = static_cast<double>(n_id);
  if (n_i < n_id) return ni / nid;
  return (nid - (ni - nid)) / nid;
}

double complexity(const Tensor& img, const CompressorProfile& profile, const ComplexityOptions& opt) {
  if (img.channels() != profile.channels || img.height() != profile.height || img.width() != profile.width)
    throw ValidationError("image shape does not match the calibrated profile");
  return complexity_from_rank(find_rank(SvdImage(img), profile, opt).n_i, profile.n_id);
}

double bits_complexity(double bits, double bits_id) {
  if (!(bits_id > 0)) throw ValidationError("bits_id must be positive");
  if (bits < bits_id) return bits / bits_id;
  return (bits_id - (bits - bits_id)) / bits_id;
}

std::vector<double> complexity_serial(std::span<const Tensor* const> images, const CompressorProfile& profile,
                                      const ComplexityOptions& opt) {
  std::vector<double> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out[i] = complexity(*images[i], profile, opt);
  return out;
}

std::vector<double> complexity_parallel(std::span<const Tensor* const> images, const CompressorProfile& profile,
                                        const ComplexityOptions& opt) {
  std::vector<double> out(images.size());
  const auto n = static_cast<std::ptrdiff_t>(images.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = complexity(*images[static_cast<std::size_t>(i)], profile, opt);
    } catch (...) {
#pragma omp critical(uood_dec_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

DecScale dec_scale(std::span<const double> php_id, std::span<const double> c_id) {
  if (php_id.empty() || c_id.empty()) throw ValidationError("dec_scale needs non-empty inputs");
  DecScale s;
  s.mean_php_id = std::accumulate(php_id.begin(), php_id.end(), 0.0) / static_cast<double>(php_id.size());
  s.mean_c_id = std::accumulate(c_id.begin(), c_id.end(), 0.0) / static_cast<double>(c_id.size());
  if (!(s.mean_c_id > 0)) throw ValidationError("dec_scale: mean ID complexity must be positive");
  s.scale = -s.mean_php_id / s.mean_c_id;
  s.negative = s.scale < 0;
  return s;
}

double dec_score(const SampleRecord& rec, double c, const DecScale& scale) {
  return rec.recon_loglik - rec.kl_prior + c * scale.scale;
}

double record_complexity(const Dataset& ds, const SampleRecord& rec, const DecCalibration& cal,
                         const ComplexityOptions& opt) {
  if (cal.source == ComplexitySource::Bits) {
    if (!rec.bits) throw ValidationError("record " + rec.sample_id + " has no bits (needed by dec)");
    return bits_complexity(*rec.bits, cal.bits_id.value());
  }
  if (!cal.profile) throw ValidationError("SVD calibration carries no compressor profile");
  if (!rec.tensor_path) throw ValidationError("record " + rec.sample_id + " has no tensor_path (needed by dec)");
  return complexity(ds.load_tensor_of(rec), *cal.profile, opt);
}

void save_calibration(const DecCalibration& cal, std::ostream& out) {
  using nlohmann::json;
  json j;
  j["source"] = cal.source == ComplexitySource::Svd ? "svd" : "bits";
  if (cal.profile) {
    const auto& p = *cal.profile;
    j["profile"] = {{"n_id_max", p.n_id_max}, {"n_id", p.n_id},     {"epsilon", p.epsilon},
                    {"tau", p.tau},           {"channels", p.channels}, {"height", p.height},
                    {"width", p.width},       {"error_curve", p.error_curve}};
  }
  if (cal.bits_id) j["bits_id"] = *cal.bits_id;
  j["scale"] = cal.scale.scale;
  j["mean_php_id"] = cal.scale.mean_php_id;
  j["mean_c_id"] = cal.scale.mean_c_id;
  out << j.dump() << '\n';
}

DecCalibration load_calibration(std::istream& in) {
  using nlohmann::json;
  std::string line;
  while (std::getline(in, line) && line.find_first_not_of(" \t\r") == std::string::npos) {
  }
  try {
    const json j = json::parse(line);
    DecCalibration cal;
    const auto src = j.at("source").get<std::string>();
    if (src == "svd")
      cal.source = ComplexitySource::Svd;
    else if (src == "bits")
      cal.source = ComplexitySource::Bits;
    else
      throw ParseError("unknown complexity source '" + src + "'");
    if (j.contains("profile")) {
      const auto& pj = j.at("profile");
      CompressorProfile p;
      p.n_id_max = pj.at("n_id_max").get<std::size_t>();
      p.n_id = pj.at("n_id").get<std::size_t>();
      p.epsilon = pj.at("epsilon").get<double>();
      p.tau = pj.at("tau").get<double>();
      p.channels = pj.at("channels").get<std::size_t>();
      p.height = pj.at("height").get<std::size_t>();
      p.width = pj.at("width").get<std::size_t>();
      p.error_curve = pj.value("error_curve", std::vector<double>{});
      if (p.n_id < 1 || p.n_id > p.n_id_max) throw ParseError("profile violates 1 <= n_id <= n_id_max");
      cal.profile = p;
    }
    if (j.contains("bits_id")) cal.bits_id = j.at("bits_id").get<double>();
    if (cal.source == ComplexitySource::Svd && !cal.profile) throw ParseError("svd calibration without profile");
    if (cal.source == ComplexitySource::Bits && !cal.bits_id) throw ParseError("bits calibration without bits_id");
    cal.scale.scale = j.at("scale").get<double>();
    cal.scale.mean_php_id = j.at("mean_php_id").get<double>();
    cal.scale.mean_c_id = j.at("mean_c_id").get<double>();
    cal.scale.negative = cal.scale.scale < 0;
    return cal;
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad calibration file: ") + e.what());
  }
}

void save_calibration(const DecCalibration& cal, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write calibration file " + path);
  save_calibration(cal, out);
}

DecCalibration load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open calibration file " + path);
  return load_calibration(in);
}

}  // namespace uood
