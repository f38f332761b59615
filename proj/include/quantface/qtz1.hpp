#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "quantface/error.hpp"
#include "quantface/tensor.hpp"

namespace quantface {

// QTZ1 tensor container.  Layout, in order:
//   bytes 0..3   magic "QTZ1"
//   byte  4      rank (u8)
//   next         rank x u32 little-endian dimensions
//   payload      row-major f64 little-endian values
// The file must end exactly at the payload; trailing bytes are an error.

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f64_le(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  }
  double d;
  std::memcpy(&d, &bits, sizeof(d));
  return d;
}

}  // namespace detail

inline std::string qtz1_encode(const Tensor& t) {
  if (t.rank() == 0 || t.rank() > 255) {
    throw Error(ErrorKind::Argument, "QTZ1 rank must be in [1, 255]");
  }
  std::string out;
  out.reserve(5 + 4 * t.rank() + 8 * t.size());
  out += "QTZ1";
  out.push_back(static_cast<char>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > 0xffffffffULL) {
      throw Error(ErrorKind::Argument, "QTZ1 dimension exceeds u32");
    }
    detail::put_u32_le(out, static_cast<std::uint32_t>(d));
  }
  for (std::size_t i = 0; i < t.size(); ++i) detail::put_f64_le(out, t[i]);
  return out;
}

inline Tensor qtz1_decode(const std::string& bytes,
                          const std::string& origin = "<memory>") {
  const auto fail = [&](const std::string& why) -> Error {
    return Error(ErrorKind::Io, "invalid QTZ1 data in " + origin + ": " + why);
  };
  if (bytes.size() < 5) throw fail("truncated header");
  if (bytes.compare(0, 4, "QTZ1") != 0) throw fail("bad magic");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t rank = p[4];
  if (rank == 0) throw fail("rank is zero");
  if (bytes.size() < 5 + 4 * rank) throw fail("truncated dimension list");
  std::vector<std::size_t> shape(rank);
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = detail::get_u32_le(p + 5 + 4 * i);
    if (shape[i] == 0) throw fail("zero dimension");
    if (count > (static_cast<std::size_t>(1) << 40) / shape[i]) {
      throw fail("element count overflow");
    }
    count *= shape[i];
  }
  const std::size_t payload_at = 5 + 4 * rank;
  if (bytes.size() != payload_at + 8 * count) {
    throw fail("payload size does not match dimensions");
  }
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    data[i] = detail::get_f64_le(p + payload_at + 8 * i);
  }
  return Tensor(std::move(shape), std::move(data));
}

inline void qtz1_save(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path + " for writing");
  const std::string bytes = qtz1_encode(t);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorKind::Io, "short write to " + path);
}

inline Tensor qtz1_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  return qtz1_decode(bytes, path);
}

}  // namespace quantface
