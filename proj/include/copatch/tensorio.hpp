#pragma once

// CPT1 container:
//   bytes 0..3   magic "CPT1"
//   byte  4      dtype (0 = f32 LE, 1 = u8, 2 = u32 LE)
//   byte  5      ndim (1..255)
//   ndim x u32 LE dimensions
//   row-major payload, product(dims) * sizeof(dtype) bytes

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "copatch/error.hpp"
#include "copatch/tensor.hpp"

namespace copatch {

enum class DType : std::uint8_t { F32 = 0, U8 = 1, U32 = 2 };

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::F32; }
template <>
constexpr DType dtype_of<std::uint8_t>() { return DType::U8; }
template <>
constexpr DType dtype_of<std::uint32_t>() { return DType::U32; }

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32: return 4;
    case DType::U8: return 1;
    case DType::U32: return 4;
  }
  return 0;
}

inline const char* dtype_name(DType t) {
  switch (t) {
    case DType::F32: return "f32";
    case DType::U8: return "u8";
    case DType::U32: return "u32";
  }
  return "?";
}

using AnyTensor = std::variant<TensorF32, Bitmap, LabelGrid>;

inline constexpr std::array<char, 4> kCptMagic{'C', 'P', 'T', '1'};

namespace detail {

inline void put_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

template <class T>
void put_value(std::vector<unsigned char>& out, T v) {
  if constexpr (sizeof(T) == 1) {
    out.push_back(static_cast<unsigned char>(v));
  } else {
    put_u32le(out, std::bit_cast<std::uint32_t>(v));
  }
}

template <class T>
T get_value(const unsigned char* p) {
  if constexpr (sizeof(T) == 1) {
    return static_cast<T>(*p);
  } else {
    return std::bit_cast<T>(get_u32le(p));
  }
}

}  // namespace detail

/// Serializes a tensor into an in-memory CPT1 image.
template <class T>
std::vector<unsigned char> encode_tensor(const Tensor<T>& t) {
  if (t.ndim() == 0) throw ValidationError("cannot encode tensor with empty shape");
  if (t.ndim() > 255) throw ValidationError("cannot encode tensor with more than 255 dims");
  std::vector<unsigned char> out;
  out.reserve(6 + 4 * t.ndim() + sizeof(T) * t.size());
  out.insert(out.end(), kCptMagic.begin(), kCptMagic.end());
  out.push_back(static_cast<unsigned char>(dtype_of<T>()));
  out.push_back(static_cast<unsigned char>(t.ndim()));
  for (auto d : t.shape()) {
    if (d > 0xFFFFFFFFu) throw ValidationError("tensor dimension exceeds u32");
    detail::put_u32le(out, static_cast<std::uint32_t>(d));
  }
  for (const T& v : t.data()) detail::put_value(out, v);
  return out;
}

/// Parses a CPT1 image; `origin` is used only for error messages.
inline AnyTensor decode_tensor(const std::vector<unsigned char>& bytes,
                               const std::string& origin = "<memory>") {
  if (bytes.size() < 4) throw FormatError(origin, "magic", "file shorter than magic");
  if (std::memcmp(bytes.data(), kCptMagic.data(), 4) != 0) {
    throw FormatError(origin, "magic", "bad magic, expected CPT1");
  }
  if (bytes.size() < 6) throw FormatError(origin, "ndim", "truncated header");
  const auto code = bytes[4];
  if (code > 2) throw FormatError(origin, "dtype", "unknown dtype code " + std::to_string(code));
  const auto dtype = static_cast<DType>(code);
  const std::size_t ndim = bytes[5];
  if (ndim == 0) throw FormatError(origin, "ndim", "ndim must be >= 1");
  if (bytes.size() < 6 + 4 * ndim) throw FormatError(origin, "dim", "truncated dimension list");
  std::vector<std::size_t> shape(ndim);
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    shape[i] = detail::get_u32le(bytes.data() + 6 + 4 * i);
    if (shape[i] == 0) throw FormatError(origin, "dim", "dimension " + std::to_string(i) + " is zero");
    count *= shape[i];
  }
  const std::size_t offset = 6 + 4 * ndim;
  const std::size_t need = count * dtype_size(dtype);
  const std::size_t have = bytes.size() - offset;
  if (have < need) {
    throw FormatError(origin, "payload", "truncated payload: expected " + std::to_string(need) +
                                             " bytes, found " + std::to_string(have));
  }
  if (have > need) {
    throw FormatError(origin, "payload", "trailing bytes after payload: expected " +
                                             std::to_string(need) + ", found " + std::to_string(have));
  }

  auto build = [&]<class T>(std::type_identity<T>) -> AnyTensor {
    std::vector<T> data(count);
    const unsigned char* p = bytes.data() + offset;
    for (std::size_t i = 0; i < count; ++i) data[i] = detail::get_value<T>(p + i * sizeof(T));
    return Tensor<T>(shape, std::move(data));
  };
  switch (dtype) {
    case DType::F32: return build(std::type_identity<float>{});
    case DType::U8: return build(std::type_identity<std::uint8_t>{});
    case DType::U32: return build(std::type_identity<std::uint32_t>{});
  }
  throw FormatError(origin, "dtype", "unreachable");
}

template <class T>
void write_tensor(const Tensor<T>& t, const std::filesystem::path& path) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string(), "write failed");
}

inline void write_tensor(const AnyTensor& t, const std::filesystem::path& path) {
  std::visit([&](const auto& v) { write_tensor(v, path); }, t);
}

inline AnyTensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path.string(), "read failed");
  return decode_tensor(bytes, path.string());
}

/// Reads a tensor and requires a specific dtype.
template <class T>
Tensor<T> read_tensor_as(const std::filesystem::path& path) {
  auto any = read_tensor(path);
  if (auto* t = std::get_if<Tensor<T>>(&any)) return std::move(*t);
  const DType got = std::visit([](const auto& v) {
    return dtype_of<typename std::decay_t<decltype(v)>::value_type>();
  }, any);
  throw FormatError(path.string(), "dtype",
                    std::string("expected ") + dtype_name(dtype_of<T>()) + ", found " + dtype_name(got));
}

}  // namespace copatch
