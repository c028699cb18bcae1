#pragma once

// Synthetic inputs shared by unit and acceptance tests.

#include <random>
#include <string>

#include "uood/manifest.hpp"
#include "uood/rng.hpp"
#include "uood/tensor.hpp"

namespace fixture {

/// 1 x h x w image: mean of `rank` outer products of U[0,1] vectors, so pixels stay in [0, 1].
inline uood::Tensor low_rank_image(std::size_t rank, std::size_t h, std::size_t w, uood::Rng& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> acc(h * w, 0.0);
  for (std::size_t r = 0; r < rank; ++r) {
    std::vector<double> a(h), b(w);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) acc[i * w + j] += a[i] * b[j] / static_cast<double>(rank);
  }
  uood::Tensor t{{1, static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w)}, {}};
  t.data.assign(acc.begin(), acc.end());
  return t;
}

inline uood::Tensor noise_image(std::size_t c, std::size_t h, std::size_t w, uood::Rng& rng) {
  std::uniform_real_distribution<float> u(0, 1);
  uood::Tensor t{{static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w)},
                 std::vector<float>(c * h * w)};
  for (auto& v : t.data) v = u(rng);
  return t;
}

inline uood::SampleRecord record(const std::string& id, uood::Split split, double recon, double kl,
                                 std::vector<double> mu = {0.0}, std::vector<double> logvar = {0.0}) {
  uood::SampleRecord r;
  r.sample_id = id;
  r.split = std::move(split);
  r.recon_loglik = recon;
  r.kl_prior = kl;
  r.mu = std::move(mu);
  r.logvar = std::move(logvar);
  return r;
}

}  // namespace fixture
