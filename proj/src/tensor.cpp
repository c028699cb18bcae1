#include "uood/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>

#include "uood/error.hpp"

namespace uood {

static_assert(std::endian::native == std::endian::little, "RTEN I/O assumes a little-endian host");

std::size_t Tensor::size() const noexcept {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::span<const float> Tensor::channel(std::size_t c) const {
  if (dims.size() != 2 && dims.size() != 3) throw ValidationError("tensor is not an image (need 2 or 3 dims)");
  const std::size_t plane = height() * width();
  if (c >= channels()) throw ValidationError("channel index out of range");
  return std::span<const float>(data).subspan(c * plane, plane);
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kRtenMagic, 4) != 0)
    throw ParseError("bad magic (expected RTN1)");
  if (bytes[4] != kRtenFloat32)
    throw ParseError("unsupported dtype code " + std::to_string(bytes[4]));
  const std::size_t ndim = bytes[5];
  std::size_t off = 6;
  if (bytes.size() < off + 4 * ndim) throw ParseError("truncated header");

  Tensor t;
  t.dims.resize(ndim);
  std::memcpy(t.dims.data(), bytes.data() + off, 4 * ndim);
  off += 4 * ndim;

  const std::size_t n = t.size();
  if (bytes.size() - off < n * sizeof(float))
    throw ParseError("truncated payload: expected " + std::to_string(n * sizeof(float)) + " bytes, found " +
                     std::to_string(bytes.size() - off));
  if (bytes.size() - off > n * sizeof(float)) throw ParseError("trailing bytes after payload");
  t.data.resize(n);
  std::memcpy(t.data.data(), bytes.data() + off, n * sizeof(float));
  for (float v : t.data)
    if (!std::isfinite(v)) throw ParseError("non-finite value in payload");
  return t;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.dims.size() > 255) throw ValidationError("too many dims for RTEN");
  if (t.size() != t.data.size()) throw ValidationError("tensor dims do not match payload length");
  std::vector<std::uint8_t> out(6 + 4 * t.dims.size() + 4 * t.data.size());
  std::memcpy(out.data(), kRtenMagic, 4);
  out[4] = kRtenFloat32;
  out[5] = static_cast<std::uint8_t>(t.dims.size());
  std::memcpy(out.data() + 6, t.dims.data(), 4 * t.dims.size());
  std::memcpy(out.data() + 6 + 4 * t.dims.size(), t.data.data(), 4 * t.data.size());
  return out;
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open tensor file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write tensor file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace uood
