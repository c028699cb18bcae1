#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace uood {

/// Dense row-major float32 tensor, typically C x H x W pixels in [0, 1].
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t size() const noexcept;
  std::size_t channels() const { return dims.size() == 3 ? dims[0] : 1; }
  std::size_t height() const { return dims.size() == 3 ? dims[1] : dims.at(0); }
  std::size_t width() const { return dims.size() == 3 ? dims[2] : dims.at(1); }

  /// Pixels of channel `c` as an H*W row-major slice (2-D and 3-D tensors).
  std::span<const float> channel(std::size_t c) const;
};

/// RTEN layout: "RTN1", dtype u8 (0x01 = f32 LE), ndim u8, ndim x u32 LE extents, payload.
inline constexpr char kRtenMagic[4] = {'R', 'T', 'N', '1'};
inline constexpr std::uint8_t kRtenFloat32 = 0x01;

Tensor load_tensor(const std::filesystem::path& path);
void save_tensor(const Tensor& t, const std::filesystem::path& path);

Tensor decode_tensor(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_tensor(const Tensor& t);

}  // namespace uood
