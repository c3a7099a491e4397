#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ndesteer/tensor.hpp"

namespace ndesteer {

// TNSR file layout (all integers little-endian):
//   "TNSR" | version u8 = 0x01 | dtype u8 = 0x00 (f32) | ndim u32 |
//   ndim x dim u32 | prod(dims) x f32
inline constexpr char kTensorMagic[4] = {'T', 'N', 'S', 'R'};
inline constexpr std::uint8_t kTensorVersion = 0x01;
inline constexpr std::uint8_t kTensorDtypeF32 = 0x00;

void write_tensor(std::ostream& out, const Tensor& t);
// FormatError on bad magic/dtype/ndim, VersionError on unknown version,
// TruncatedFile when the stream ends early.
Tensor read_tensor(std::istream& in);

std::vector<std::uint8_t> encode_tensor(const Tensor& t);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

// save followed by load
Tensor tensor_roundtrip(const Tensor& t, const std::filesystem::path& path);

// Image tensors are [H, W] with values in [0, 1]. Out-of-range values are
// clamped on load; the number of clamped pixels is added to *clamped.
Tensor load_image(const std::filesystem::path& path, std::size_t* clamped = nullptr);

// little-endian primitives shared with the checkpoint format
namespace le {
void put_u32(std::ostream& out, std::uint32_t v);
std::uint32_t get_u32(std::istream& in, const char* what);
void put_f32(std::ostream& out, float v);
void put_bytes(std::ostream& out, const void* data, std::size_t n);
void get_bytes(std::istream& in, void* data, std::size_t n, const char* what);
}  // namespace le

}  // namespace ndesteer
